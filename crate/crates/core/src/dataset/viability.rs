use crate::sim::Trajectory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    /// The integrator stopped before enough post-shed data existed.
    Integrator,
    /// The run ended normally but covers too little time after the shed.
    Duration,
    /// Anything else: no shed event, simulation setup failure, bad window.
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Viability {
    Viable,
    Rejected {
        reason: RejectReason,
        detail: String,
    },
}

impl Viability {
    pub fn is_viable(&self) -> bool {
        matches!(self, Viability::Viable)
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            Viability::Viable => None,
            Viability::Rejected { reason, .. } => Some(*reason),
        }
    }

    pub(crate) fn rejected_other(detail: String) -> Self {
        Viability::Rejected {
            reason: RejectReason::Other,
            detail,
        }
    }
}

/// Keeps scenarios with at least `min_post` seconds of data after the shed.
/// A run the integrator stopped early is rejected as an integrator failure
/// unless it still covers `min_post` seconds after the shed.
pub fn viability_filter(traj: &Trajectory, min_post: f64) -> Viability {
    let Some(shed) = traj.event("shed") else {
        let detail = match &traj.terminated_early {
            Some(why) => format!("stopped before the shed: {why}"),
            None => "no shed event".into(),
        };
        let reason = if traj.terminated_early.is_some() {
            RejectReason::Integrator
        } else {
            RejectReason::Other
        };
        return Viability::Rejected { reason, detail };
    };
    let post = traj.end_time() - shed.t;
    // Sample times are accumulated multiples of the record period.
    if post + 1e-9 >= min_post {
        return Viability::Viable;
    }
    match &traj.terminated_early {
        Some(why) => Viability::Rejected {
            reason: RejectReason::Integrator,
            detail: format!("stopped {post:.2} s after the shed: {why}"),
        },
        None => Viability::Rejected {
            reason: RejectReason::Duration,
            detail: format!("post-shed duration {post:.2} s"),
        },
    }
}

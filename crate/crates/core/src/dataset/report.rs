use super::split::SampleEntry;
use crate::error::Result;
use crate::labeler::Verdict;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub key: String,
    pub stable: usize,
    pub total: usize,
}

/// Stable-shed counts per shed load and per attacked variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub by_load: Vec<CountRow>,
    pub by_read: Vec<CountRow>,
    pub by_write: Vec<CountRow>,
}

impl DistributionReport {
    /// Largest fraction of stable outcomes over all loads.
    pub fn max_load_stable_fraction(&self) -> f64 {
        self.by_load
            .iter()
            .map(|r| r.stable as f64 / r.total as f64)
            .fold(0.0, f64::max)
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, rows, key) in [
            ("by_load.csv", &self.by_load, "load_index"),
            ("by_read.csv", &self.by_read, "read_var"),
            ("by_write.csv", &self.by_write, "write_var"),
        ] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record([key, "stable", "total"])?;
            for r in rows {
                w.write_record([r.key.clone(), r.stable.to_string(), r.total.to_string()])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn tally<K: Ord>(
    entries: &[SampleEntry],
    key: impl Fn(&SampleEntry) -> K,
    show: impl Fn(&K) -> String,
) -> Vec<CountRow> {
    let mut m: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for e in entries {
        let c = m.entry(key(e)).or_default();
        c.1 += 1;
        if e.label == Verdict::Stable {
            c.0 += 1;
        }
    }
    m.iter()
        .map(|(k, &(stable, total))| CountRow {
            key: show(k),
            stable,
            total,
        })
        .collect()
}

pub fn distribution_report(entries: &[SampleEntry]) -> DistributionReport {
    DistributionReport {
        by_load: tally(entries, |e| e.load_index, |k| k.to_string()),
        by_read: tally(entries, |e| e.meta.read.var, |k| k.to_string()),
        by_write: tally(entries, |e| e.meta.write.var, |k| k.to_string()),
    }
}

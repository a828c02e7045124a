use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub steps: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub hidden: usize,
    pub embed: usize,
    pub head1: usize,
    pub head2: usize,
    pub classes: usize,
    /// Number of loads; the load index is divided by `n_loads - 1`.
    pub n_loads: usize,
}

impl Architecture {
    /// The full-size network for `channels` × `steps` inputs.
    pub fn reference(channels: usize, steps: usize, n_loads: usize) -> Self {
        Architecture {
            channels,
            steps,
            conv1_filters: 32,
            conv1_kernel: 7,
            conv2_filters: 64,
            conv2_kernel: 5,
            hidden: 256,
            embed: 32,
            head1: 128,
            head2: 64,
            classes: 2,
            n_loads,
        }
    }

    /// A tiny network for tests.
    pub fn micro() -> Self {
        Architecture {
            channels: 3,
            steps: 8,
            conv1_filters: 2,
            conv1_kernel: 3,
            conv2_filters: 3,
            conv2_kernel: 3,
            hidden: 4,
            embed: 3,
            head1: 5,
            head2: 4,
            classes: 2,
            n_loads: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.channels,
            self.conv1_filters,
            self.conv2_filters,
            self.hidden,
            self.embed,
            self.head1,
            self.head2,
        ];
        if dims.contains(&0) || self.classes != 2 {
            return Err(Error::config(
                "layer widths must be positive and there must be 2 classes",
            ));
        }
        if self.conv1_kernel.is_multiple_of(2) || self.conv2_kernel.is_multiple_of(2) {
            return Err(Error::config("'same' convolutions need odd kernels"));
        }
        if self.steps < 2 || self.n_loads == 0 {
            return Err(Error::config("need at least 2 time steps and 1 load"));
        }
        Ok(())
    }

    pub fn pooled_steps(&self) -> usize {
        self.steps / 2
    }

    pub fn feature_width(&self) -> usize {
        2 * self.hidden + self.embed
    }

    /// Every parameter tensor in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, f2) = (self.hidden, self.conv2_filters);
        let mut v: Vec<(String, Vec<usize>)> = vec![
            (
                "conv1.w".into(),
                vec![self.conv1_filters, self.channels, self.conv1_kernel],
            ),
            ("conv1.b".into(), vec![self.conv1_filters]),
            (
                "conv2.w".into(),
                vec![f2, self.conv1_filters, self.conv2_kernel],
            ),
            ("conv2.b".into(), vec![f2]),
        ];
        for d in ["gru_fwd", "gru_bwd"] {
            v.push((format!("{d}.w_ih"), vec![3 * h, f2]));
            v.push((format!("{d}.w_hh"), vec![3 * h, h]));
            v.push((format!("{d}.b_ih"), vec![3 * h]));
            v.push((format!("{d}.b_hh"), vec![3 * h]));
        }
        v.extend([
            ("embed.w".into(), vec![self.embed, 1]),
            ("embed.b".into(), vec![self.embed]),
            ("head1.w".into(), vec![self.head1, self.feature_width()]),
            ("head1.b".into(), vec![self.head1]),
            ("head2.w".into(), vec![self.head2, self.head1]),
            ("head2.b".into(), vec![self.head2]),
            ("out.w".into(), vec![self.classes, self.head2]),
            ("out.b".into(), vec![self.classes]),
        ]);
        v
    }
}

/// Closed-form parameter count, layer by layer.
pub fn count_params(a: &Architecture) -> usize {
    let dense = |i: usize, o: usize| i * o + o;
    let conv = |i: usize, o: usize, k: usize| i * o * k + o;
    let gru = |i: usize, h: usize| 3 * h * (i + h) + 6 * h;
    conv(a.channels, a.conv1_filters, a.conv1_kernel)
        + conv(a.conv1_filters, a.conv2_filters, a.conv2_kernel)
        + 2 * gru(a.conv2_filters, a.hidden)
        + dense(1, a.embed)
        + dense(a.feature_width(), a.head1)
        + dense(a.head1, a.head2)
        + dense(a.head2, a.classes)
}

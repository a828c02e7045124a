//! Network fixtures shared by the classifier and acceptance suites.
#![allow(dead_code)]

use gridshed::classifier::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_inputs(arch: &Architecture, n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = (0..arch.channels * arch.steps)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            (x, rng.random_range(0..arch.n_loads))
        })
        .collect()
}

/// Tensor shapes written out by hand for the reference network.
pub fn reference_shapes() -> Vec<Vec<usize>> {
    let (c, h) = (60, 256);
    let mut v = vec![vec![32, c, 7], vec![32], vec![64, 32, 5], vec![64]];
    for _ in 0..2 {
        v.extend([vec![3 * h, 64], vec![3 * h, h], vec![3 * h], vec![3 * h]]);
    }
    v.extend([
        vec![32, 1],
        vec![32],
        vec![128, 2 * h + 32],
        vec![128],
        vec![64, 128],
        vec![64],
        vec![2, 64],
        vec![2],
    ]);
    v
}

/// Relative error of the analytic gradient against central differences,
/// one entry per tensor.
pub fn gradient_errors(
    p: &Params,
    inputs: &[(Vec<f64>, usize)],
    labels: &[usize],
) -> Vec<(String, f64)> {
    let batch: Vec<Input> = inputs
        .iter()
        .map(|(x, l)| Input { x, load_index: *l })
        .collect();
    let (_, g) = loss_and_grads(p, &batch, labels, None).unwrap();
    let loss = |q: &Params| loss_and_grads(q, &batch, labels, None).unwrap().0;
    let eps = 1e-6;
    let mut out = Vec::new();
    for t in &p.tensors {
        let mut num = Vec::with_capacity(t.len);
        for i in t.offset..t.offset + t.len {
            let mut q = p.clone();
            q.data[i] = p.data[i] + eps;
            let up = loss(&q);
            q.data[i] = p.data[i] - eps;
            let down = loss(&q);
            num.push((up - down) / (2.0 * eps));
        }
        let ana = &g[t.offset..t.offset + t.len];
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: f64 = ana
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = norm(ana).max(norm(&num));
        out.push((
            t.name.clone(),
            if scale == 0.0 { 0.0 } else { diff / scale },
        ));
    }
    out
}

/// Label is the sign of channel 0's mean, which the network can learn.
pub fn learnable(arch: &Architecture, n: usize, seed: u64) -> (Vec<(Vec<f64>, usize)>, Vec<usize>) {
    let inputs = random_inputs(arch, n, seed);
    let labels = inputs
        .iter()
        .map(|(x, _)| usize::from(x[..arch.steps].iter().sum::<f64>() > 0.0))
        .collect();
    (inputs, labels)
}

pub fn as_examples<'a>(inputs: &'a [(Vec<f64>, usize)], labels: &[usize]) -> Vec<Example<'a>> {
    inputs
        .iter()
        .zip(labels)
        .map(|((x, l), &y)| Example {
            input: Input { x, load_index: *l },
            label: y,
        })
        .collect()
}

pub fn micro_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: 200,
        patience: 200,
        dropout: 0.0,
        seed: 1,
        ..Default::default()
    }
}

pub fn overfit_arch() -> Architecture {
    Architecture {
        conv1_filters: 8,
        conv2_filters: 8,
        hidden: 8,
        embed: 4,
        head1: 16,
        head2: 8,
        ..Architecture::micro()
    }
}

/// Macro-F1 on a fresh validation set after training on shuffled labels,
/// and after training on the real ones.
pub fn shuffle_control() -> (f64, f64) {
    use rand::seq::SliceRandom;
    let arch = overfit_arch();
    let (inputs, labels) = learnable(&arch, 64, 21);
    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let train_set = as_examples(&inputs, &shuffled);
    let (val_inputs, val_labels) = learnable(&arch, 400, 77);
    let val = as_examples(&val_inputs, &val_labels);
    let cfg = TrainConfig {
        max_epochs: 100,
        ..micro_train_config()
    };
    // Score the final weights: picking the best epoch on the control's own
    // validation set would bias it upwards.
    let out = train(&train_set, &train_set, &arch, &cfg).unwrap();
    let f1 = evaluate(&out.params, &val, 0.5).unwrap().macro_avg.f1;
    let real = as_examples(&inputs, &labels);
    let good = train(&real, &real, &arch, &cfg).unwrap();
    let f1_real = evaluate(&good.params, &val, 0.5).unwrap().macro_avg.f1;
    (f1, f1_real)
}

use super::sample::{SampleMeta, ShedSample};
use crate::error::{Error, Result};
use crate::labeler::Verdict;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MIN_SAMPLES: usize = 50;
/// Fractions of each label class assigned to validation and test.
pub const VAL_FRACTION: f64 = 0.2;
pub const TEST_FRACTION: f64 = 0.2;
/// Channels whose training spread is below this (relative to their level)
/// are treated as constant and only centred.
pub const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub load_index: usize,
    pub label: Verdict,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    /// Little-endian f32 blob, samples in `samples` order, each channel-major.
    pub file: String,
    pub n_stable: usize,
    pub n_unstable: usize,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub channels: Vec<String>,
    pub n_steps: usize,
    pub n_loads: usize,
    pub seed: u64,
    /// Per-channel normalization, from the training split only.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub train: SplitInfo,
    pub val: SplitInfo,
    pub test: SplitInfo,
}

impl DatasetManifest {
    pub fn splits(&self) -> [(&'static str, &SplitInfo); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }
}

/// A normalized dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<ShedSample>,
    pub val: Vec<ShedSample>,
    pub test: Vec<ShedSample>,
}

/// Per-channel mean and population standard deviation over every sample
/// and time step. Near-constant channels get a unit spread.
pub fn channel_stats(samples: &[ShedSample]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = samples.first() else {
        return (Vec::new(), Vec::new());
    };
    let (nc, nt) = (first.n_channels, first.n_steps);
    let count = (samples.len() * nt) as f64;
    let mut mean = vec![0.0; nc];
    for s in samples {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += s.channel(c).iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; nc];
    for s in samples {
        for (c, v) in var.iter_mut().enumerate() {
            *v += s
                .channel(c)
                .iter()
                .map(|x| (x - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    let std = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let sd = (v / count).sqrt();
            if sd <= STD_FLOOR * m.abs().max(1.0) {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, std)
}

fn normalize(s: &mut ShedSample, mean: &[f64], std: &[f64]) {
    let nt = s.n_steps;
    for (c, chunk) in s.x.chunks_mut(nt).enumerate() {
        for v in chunk {
            *v = (*v - mean[c]) / std[c];
        }
    }
}

fn split_info(file: &str, samples: &[ShedSample]) -> SplitInfo {
    let n_stable = samples
        .iter()
        .filter(|s| s.label == Verdict::Stable)
        .count();
    SplitInfo {
        file: file.to_string(),
        n_stable,
        n_unstable: samples.len() - n_stable,
        samples: samples
            .iter()
            .map(|s| SampleEntry {
                id: s.id.clone(),
                load_index: s.load_index,
                label: s.label,
                meta: s.meta.clone(),
            })
            .collect(),
    }
}

/// Stratified train/validation/test split (60/20/20 within each label)
/// followed by z-normalization with training statistics.
pub fn split_and_normalize(
    mut samples: Vec<ShedSample>,
    channels: Vec<String>,
    n_loads: usize,
    seed: u64,
) -> Result<Dataset> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::config(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let (nc, nt) = (samples[0].n_channels, samples[0].n_steps);
    if nc != channels.len()
        || samples
            .iter()
            .any(|s| s.n_channels != nc || s.n_steps != nt)
    {
        return Err(Error::config("samples disagree on channel count or length"));
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<ShedSample>; 3] = Default::default();
    for class in [Verdict::Stable, Verdict::Unstable] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == class)
            .collect();
        if idx.is_empty() {
            return Err(Error::config(format!("no {class} samples")));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_test = (TEST_FRACTION * n).round() as usize;
        let n_val = (VAL_FRACTION * n).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            let part = if k < n_test {
                2
            } else if k < n_test + n_val {
                1
            } else {
                0
            };
            parts[part].push(samples[i].clone());
        }
    }
    for p in &mut parts {
        p.sort_by(|a, b| a.id.cmp(&b.id));
    }
    let (mean, std) = channel_stats(&parts[0]);
    for p in &mut parts {
        for s in p.iter_mut() {
            normalize(s, &mean, &std);
        }
    }
    let [train, val, test] = parts;
    let manifest = DatasetManifest {
        channels,
        n_steps: nt,
        n_loads,
        seed,
        mean,
        std,
        train: split_info("train.f32", &train),
        val: split_info("val.f32", &val),
        test: split_info("test.f32", &test),
    };
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for ((_, info), samples) in ds
        .manifest
        .splits()
        .into_iter()
        .zip([&ds.train, &ds.val, &ds.test])
    {
        let mut blob = Vec::with_capacity(samples.iter().map(|s| 4 * s.x.len()).sum());
        for s in samples {
            for &v in &s.x {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(dir.join(&info.file), blob)?;
    }
    std::fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&ds.manifest)?,
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest =
        serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    let nc = manifest.channels.len();
    let nt = manifest.n_steps;
    let read = |info: &SplitInfo| -> Result<Vec<ShedSample>> {
        let blob = std::fs::read(dir.join(&info.file))?;
        let per = nc * nt;
        if blob.len() != 4 * per * info.samples.len() {
            return Err(Error::Dimension {
                expected: 4 * per * info.samples.len(),
                got: blob.len(),
            });
        }
        let vals: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64)
            .collect();
        Ok(info
            .samples
            .iter()
            .zip(vals.chunks_exact(per))
            .map(|(e, x)| ShedSample {
                id: e.id.clone(),
                n_channels: nc,
                n_steps: nt,
                x: x.to_vec(),
                load_index: e.load_index,
                label: e.label,
                meta: e.meta.clone(),
            })
            .collect())
    };
    Ok(Dataset {
        train: read(&manifest.train)?,
        val: read(&manifest.val)?,
        test: read(&manifest.test)?,
        manifest,
    })
}

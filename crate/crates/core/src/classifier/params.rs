use super::arch::Architecture;
use super::recommend::InputScaling;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements into the flat parameter vector.
    pub offset: usize,
    pub len: usize,
}

/// Every network parameter in one flat vector, addressed by named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub arch: Architecture,
    pub tensors: Vec<TensorInfo>,
    pub data: Vec<f64>,
}

/// Indices of tensors in [`Architecture::tensor_shapes`] order.
pub(crate) mod idx {
    pub const CONV1_W: usize = 0;
    pub const CONV1_B: usize = 1;
    pub const CONV2_W: usize = 2;
    pub const CONV2_B: usize = 3;
    /// First of the 4 tensors (w_ih, w_hh, b_ih, b_hh) of direction `d`.
    pub const fn gru(d: usize) -> usize {
        4 + 4 * d
    }
    pub const EMBED_W: usize = 12;
    pub const EMBED_B: usize = 13;
    pub const HEAD1_W: usize = 14;
    pub const HEAD1_B: usize = 15;
    pub const HEAD2_W: usize = 16;
    pub const HEAD2_B: usize = 17;
    pub const OUT_W: usize = 18;
    pub const OUT_B: usize = 19;
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, shape) in arch.tensor_shapes() {
            let len = shape.iter().product();
            tensors.push(TensorInfo {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        }
        Ok(Params {
            arch: arch.clone(),
            tensors,
            data: vec![0.0; offset],
        })
    }

    /// Uniform in ±1/sqrt(fan_in) for every tensor, where fan_in is the
    /// input width of the layer the tensor belongs to.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut p = Params::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = |name: &str| -> usize {
            let a = arch;
            match name.split('.').next().unwrap_or("") {
                "conv1" => a.channels * a.conv1_kernel,
                "conv2" => a.conv1_filters * a.conv2_kernel,
                "gru_fwd" | "gru_bwd" => a.hidden,
                "embed" => 1,
                "head1" => a.feature_width(),
                "head2" => a.head1,
                _ => a.head2,
            }
        };
        for t in p.tensors.clone() {
            let bound = 1.0 / (fan_in(&t.name) as f64).sqrt();
            for v in &mut p.data[t.offset..t.offset + t.len] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        let t = &self.tensors[i];
        &self.data[t.offset..t.offset + t.len]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.tensor(i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes `path` (little-endian f32 blob) and `path.json` (manifest).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with(path, None)
    }

    /// Like [`Params::save`], also recording the input scaling the network
    /// was trained with.
    pub fn save_with(&self, path: &Path, scaling: Option<&InputScaling>) -> Result<()> {
        let manifest = WeightsManifest {
            input_scaling: scaling.cloned(),
            architecture: self.arch.clone(),
            dtype: "f32-le".into(),
            tensors: self
                .tensors
                .iter()
                .map(|t| WeightEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    byte_offset: 4 * t.offset,
                    byte_len: 4 * t.len,
                })
                .collect(),
        };
        let mut blob = Vec::with_capacity(4 * self.data.len());
        for &v in &self.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::write(path, blob)?;
        std::fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with(path)?.0)
    }

    /// Parameters and, if recorded, their input scaling.
    pub fn load_with(path: &Path) -> Result<(Self, Option<InputScaling>)> {
        let manifest: WeightsManifest =
            serde_json::from_slice(&std::fs::read(manifest_path(path))?)?;
        if manifest.dtype != "f32-le" {
            return Err(Error::config(format!(
                "unsupported weight dtype {}",
                manifest.dtype
            )));
        }
        let mut p = Params::zeros(&manifest.architecture)?;
        let blob = std::fs::read(path)?;
        if manifest.tensors.len() != p.tensors.len() {
            return Err(Error::config(
                "weights manifest does not match the architecture",
            ));
        }
        for (e, t) in manifest.tensors.iter().zip(p.tensors.clone()) {
            if e.name != t.name || e.shape != t.shape || e.byte_len != 4 * t.len {
                return Err(Error::config(format!(
                    "weights tensor {} does not match the architecture",
                    e.name
                )));
            }
            let bytes = blob
                .get(e.byte_offset..e.byte_offset + e.byte_len)
                .ok_or_else(|| Error::config(format!("weights blob too short for {}", e.name)))?;
            for (v, b) in p.data[t.offset..t.offset + t.len]
                .iter_mut()
                .zip(bytes.chunks_exact(4))
            {
                *v = f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64;
            }
        }
        if let Some(sc) = &manifest.input_scaling {
            sc.check(&p.arch)?;
        }
        Ok((p, manifest.input_scaling))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
    pub byte_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub architecture: Architecture,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scaling: Option<InputScaling>,
    pub tensors: Vec<WeightEntry>,
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

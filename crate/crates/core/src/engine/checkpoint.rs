//! Single-file checkpoint container.
//!
//! Layout: the 8-byte magic `RVNTCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! tensor as little-endian `f32` in header order. The header carries the run
//! configuration digest and the step counter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::Task;
use super::objective::GeneratorLoss;
use super::spec::{DiscriminatorSpec, GeneratorSpec};
use crate::error::{Error, Result};
use crate::imaging::ensure_parent;
use crate::nn::{AdamConfig, Tensor};

const MAGIC: &[u8; 8] = b"RVNTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorGroup {
    Generator,
    Discriminator,
    GeneratorOptimizer,
    DiscriminatorOptimizer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: TensorGroup,
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub step: u64,
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub generator: GeneratorSpec,
    pub discriminators: DiscriminatorSpec,
    pub generator_loss: GeneratorLoss,
    pub adam: AdamConfig,
    pub generator_optimizer_steps: u64,
    pub discriminator_optimizer_steps: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub generator: Vec<(String, Tensor)>,
    pub discriminator: Vec<(String, Tensor)>,
    pub generator_optimizer: Vec<(String, Tensor)>,
    pub discriminator_optimizer: Vec<(String, Tensor)>,
}

impl Checkpoint {
    fn groups(&self) -> [(TensorGroup, &Vec<(String, Tensor)>); 4] {
        [
            (TensorGroup::Generator, &self.generator),
            (TensorGroup::Discriminator, &self.discriminator),
            (TensorGroup::GeneratorOptimizer, &self.generator_optimizer),
            (TensorGroup::DiscriminatorOptimizer, &self.discriminator_optimizer),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.tensors = self
            .groups()
            .iter()
            .flat_map(|(group, ts)| {
                ts.iter().map(|(name, t)| TensorEntry { name: name.clone(), group: *group, shape: t.shape() })
            })
            .collect();
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, ts) in self.groups() {
            for (_, t) in ts {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut offset = 20 + hlen;
        let mut ck = Checkpoint {
            header: header.clone(),
            generator: Vec::new(),
            discriminator: Vec::new(),
            generator_optimizer: Vec::new(),
            discriminator_optimizer: Vec::new(),
        };
        for entry in &header.tensors {
            let len: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * len)
                .ok_or_else(|| Error::Checkpoint(format!("truncated payload at {}", entry.name)))?;
            offset += 4 * len;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let t = Tensor::from_vec(entry.shape, data)?;
            let slot = match entry.group {
                TensorGroup::Generator => &mut ck.generator,
                TensorGroup::Discriminator => &mut ck.discriminator,
                TensorGroup::GeneratorOptimizer => &mut ck.generator_optimizer,
                TensorGroup::DiscriminatorOptimizer => &mut ck.discriminator_optimizer,
            };
            slot.push((entry.name.clone(), t));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        // Write-then-rename so a crash never leaves a half-written checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Checkpoint(format!("checkpoint not found: {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let t = |v: f32| Tensor::from_vec([2, 1, 1, 2], vec![v, -v, v * 0.5, 1e-30]).unwrap();
        Checkpoint {
            header: CheckpointHeader {
                step: 7,
                config_hash: "abc".into(),
                seed: 3,
                task: Task::SuperResolution { factor: 8 },
                generator: GeneratorSpec::default(),
                discriminators: DiscriminatorSpec::default(),
                generator_loss: GeneratorLoss::NonSaturating,
                adam: AdamConfig::default(),
                generator_optimizer_steps: 7,
                discriminator_optimizer_steps: 7,
                tensors: Vec::new(),
            },
            generator: vec![("g.w".into(), t(1.5))],
            discriminator: vec![("d.w".into(), t(-2.25))],
            generator_optimizer: vec![("m.g.w".into(), t(0.1)), ("v.g.w".into(), t(0.2))],
            discriminator_optimizer: vec![("m.d.w".into(), t(0.3)), ("v.d.w".into(), t(0.4))],
        }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.generator, sample().generator);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"PNG....................."), Err(Error::Checkpoint(_))));
        let missing = Checkpoint::load("/nonexistent/run.ckpt").unwrap_err();
        assert!(missing.to_string().contains("not found"));
    }
}

//! Versioned, checksummed checkpoint container.
//!
//! Layout (little-endian):
//! ```text
//! b"SCLRCKPT" | u32 version | u64 n | n bytes JSON metadata
//!             | u64 m | m bytes of f64 tensor data | 32-byte SHA-256 of all preceding bytes
//! ```
//! The metadata holds the configuration snapshot, counters, loss-weight state,
//! the jigsaw table and a directory locating each tensor in the data block.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::{Moments, Optimizer};
use crate::augment::jigsaw::JigsawTable;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::tensornet::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"SCLRCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Slot {
    Param,
    Buffer,
    M,
    V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    set: String,
    slot: Slot,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    /// Completed epochs.
    epoch: usize,
    /// Completed optimizer steps.
    step: usize,
    input_dim: usize,
    weights: LossWeights,
    jigsaw: Option<JigsawTable>,
    optimizer_steps: u64,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or to rebuild the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub input_dim: usize,
    pub weights: LossWeights,
    pub jigsaw: Option<JigsawTable>,
    /// Parameter sets by tag, in save order.
    pub sets: IndexMap<String, ParamSet>,
    pub optimizer: Optimizer,
}

fn corrupt(what: &str) -> Error {
    Error::Format(format!("checkpoint {what}"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob: Vec<f64> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |set: &str, slot: Slot, name: &str, shape: &[usize], data: &[f64]| {
            tensors.push(TensorEntry {
                set: set.to_string(),
                slot,
                name: name.to_string(),
                shape: shape.to_vec(),
                offset: blob.len(),
            });
            blob.extend_from_slice(data);
        };
        for (tag, set) in &self.sets {
            for (name, t) in set.iter() {
                push(tag, Slot::Param, name, t.shape(), t.data());
            }
            for (name, t) in set.buffers() {
                push(tag, Slot::Buffer, name, t.shape(), t.data());
            }
        }
        for ((tag, name), st) in &self.optimizer.state {
            push(tag, Slot::M, name, &[st.m.len()], &st.m);
            push(tag, Slot::V, name, &[st.v.len()], &st.v);
        }
        let meta = Meta {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            input_dim: self.input_dim,
            weights: self.weights.clone(),
            jigsaw: self.jigsaw.clone(),
            optimizer_steps: self.optimizer.t,
            tensors,
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + json.len() + 8 * blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&((8 * blob.len()) as u64).to_le_bytes());
        for v in &blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("has a bad magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        if bytes.len() < 12 + DIGEST_LEN {
            return Err(Error::Checksum("checkpoint (file truncated)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum("checkpoint".into()));
        }
        let mut pos = 12;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + n).ok_or_else(|| corrupt("is shorter than its header claims"))?;
            pos += n;
            Ok(s)
        };
        let json_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let meta: Meta = serde_json::from_slice(take(json_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let blob_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let blob: Vec<f64> = take(blob_len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut sets: IndexMap<String, ParamSet> = IndexMap::new();
        let mut optimizer = Optimizer::new(meta.config.optimizer.clone());
        optimizer.t = meta.optimizer_steps;
        for e in &meta.tensors {
            let len: usize = e.shape.iter().product();
            let data = blob
                .get(e.offset..e.offset + len)
                .ok_or_else(|| corrupt(&format!("tensor `{}` lies outside the data block", e.name)))?
                .to_vec();
            let t = Tensor::new(e.shape.clone(), data)?;
            match e.slot {
                Slot::Param | Slot::Buffer => {
                    let set = sets.entry(e.set.clone()).or_insert_with(|| ParamSet::new(e.set.clone()));
                    if e.slot == Slot::Param {
                        set.add(&e.name, t)?;
                    } else {
                        set.set_buffer(&e.name, t);
                    }
                }
                Slot::M | Slot::V => {
                    let st = optimizer
                        .state
                        .entry((e.set.clone(), e.name.clone()))
                        .or_insert_with(Moments::default);
                    if e.slot == Slot::M {
                        st.m = t.into_data();
                    } else {
                        st.v = t.into_data();
                    }
                }
            }
        }
        Ok(Self {
            config: meta.config,
            epoch: meta.epoch,
            step: meta.step,
            input_dim: meta.input_dim,
            weights: meta.weights,
            jigsaw: meta.jigsaw,
            sets,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored values of set `tag` into `target`, which must have the
    /// same parameter names and shapes.
    pub fn restore_into(&self, tag: &str, target: &mut ParamSet) -> Result<()> {
        let stored = self
            .sets
            .get(tag)
            .ok_or_else(|| Error::MissingParam(format!("parameter set `{tag}`")))?;
        let names: Vec<String> = target.names().map(String::from).collect();
        for name in &names {
            let v = stored.get(name)?;
            target.assign(name, v.clone())?;
        }
        if let Some(extra) = stored.names().find(|n| !names.iter().any(|m| m == n)) {
            return Err(Error::MissingParam(format!(
                "{tag}.{extra} is in the checkpoint but not in the model"
            )));
        }
        for (name, v) in stored.buffers() {
            target.assign_buffer(name, v.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_dataset, SynthKind};
    use crate::trainer::Trainer;

    fn small() -> (Checkpoint, TrainConfig) {
        let mut cfg = TrainConfig::desk();
        cfg.image_size = 16;
        cfg.orientations = 4;
        cfg.batch_size = 4;
        cfg.epochs = 1;
        let data = synth_dataset(SynthKind::Noise, 4, 0, 16).unwrap();
        let mut t = Trainer::new(cfg.clone(), &data).unwrap();
        t.run(&data, None).unwrap();
        (t.checkpoint(), cfg)
    }

    #[test]
    fn save_load_save_is_bitwise() {
        let (ck, _) = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&p).unwrap());
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let (ck, _) = small();
        let bytes = ck.to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(Error::Checksum(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checksum(_))));
        let mut old = bytes;
        old[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&old), Err(Error::Version { found: 7, expected: 1 })));
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT"), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_adapter_names_the_parameter() {
        let (ck, cfg) = small();
        let mut other = cfg.adapter.clone();
        other.hidden_dim += 1;
        let mut a = crate::network::Adapter::new(other, ck.input_dim, &mut rand::rng()).unwrap();
        let err = ck.restore_into("adapter", &mut a.params).unwrap_err();
        assert!(matches!(&err, Error::ParamShape { name, .. } if name == "input.weight"), "{err}");

        let mut deeper = cfg.adapter.clone();
        deeper.block_count += 1;
        let mut a = crate::network::Adapter::new(deeper, ck.input_dim, &mut rand::rng()).unwrap();
        let err = ck.restore_into("adapter", &mut a.params).unwrap_err();
        assert!(err.to_string().contains("block2"), "{err}");
        assert!(ck.restore_into("nope", &mut a.params).is_err());
    }
}

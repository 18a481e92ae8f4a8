//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "WLFT" version record_count
//! record*: name_len name_utf8 rank dims[rank] f32_data[prod(dims)]
//! ```
//!
//! Parameters come first in store order, then batchnorm buffers under
//! `buffer:`, optimizer state under `momentum:`, then bookkeeping under
//! `meta:`. Meta values that are not naturally `f32` are stored bit-cast.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{Model, ModelConfig};
use crate::tensor::Float;

pub const MAGIC: &[u8; 4] = b"WLFT";
pub const VERSION: u32 = 1;

pub const BUFFER_PREFIX: &str = "buffer:";
pub const MOMENTUM_PREFIX: &str = "momentum:";
const META_EPOCH: &str = "meta:epoch";
const META_BEST: &str = "meta:best_val_acc";
const META_CONFIG: &str = "meta:model_config";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not match the model:\n  {}", .0.join("\n  "))]
    Mismatch(Vec<String>),
}

pub type CheckpointResult<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

/// Training progress carried alongside the weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val_acc: f64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CheckpointResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CheckpointResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.records.push(Record {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for d in &r.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CheckpointResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "version {version} is not supported (expected {VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Format("record name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<CheckpointResult<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| CheckpointError::Format(format!("`{name}` is too large")))?;
            let raw = r.take(
                numel
                    .checked_mul(4)
                    .ok_or_else(|| CheckpointError::Format(format!("`{name}` is too large")))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> CheckpointResult<()> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> CheckpointResult<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Snapshot of a model, its optimizer state and training progress.
    pub fn capture<T: Float>(model: &Model<T>, state: TrainState) -> Self {
        let mut ck = Checkpoint::default();
        let f32s = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
        for p in model.store.params() {
            ck.push(p.name.clone(), p.tensor.shape().to_vec(), f32s(p.tensor.data()));
        }
        for (name, t) in model.store.buffers() {
            ck.push(format!("{BUFFER_PREFIX}{name}"), t.shape().to_vec(), f32s(t.data()));
        }
        for p in model.store.params() {
            ck.push(format!("{MOMENTUM_PREFIX}{}", p.name), p.tensor.shape().to_vec(), f32s(&p.momentum));
        }
        ck.push(META_EPOCH, vec![1], vec![f32::from_bits(state.epoch as u32)]);
        let bits = state.best_val_acc.to_bits();
        ck.push(
            META_BEST,
            vec![2],
            vec![f32::from_bits(bits as u32), f32::from_bits((bits >> 32) as u32)],
        );
        let cfg = model.config().to_kv();
        ck.push(
            META_CONFIG,
            vec![cfg.len()],
            cfg.bytes().map(f32::from).collect(),
        );
        ck
    }

    pub fn train_state(&self) -> CheckpointResult<TrainState> {
        let missing = |n: &str| CheckpointError::Format(format!("missing `{n}`"));
        let epoch = self.get(META_EPOCH).ok_or_else(|| missing(META_EPOCH))?;
        let best = self.get(META_BEST).ok_or_else(|| missing(META_BEST))?;
        if epoch.data.len() != 1 || best.data.len() != 2 {
            return Err(CheckpointError::Format("malformed training state".into()));
        }
        let lo = best.data[0].to_bits() as u64;
        let hi = best.data[1].to_bits() as u64;
        Ok(TrainState {
            epoch: epoch.data[0].to_bits() as usize,
            best_val_acc: f64::from_bits(lo | (hi << 32)),
        })
    }

    pub fn model_config(&self) -> CheckpointResult<ModelConfig> {
        let rec = self
            .get(META_CONFIG)
            .ok_or_else(|| CheckpointError::Format(format!("missing `{META_CONFIG}`")))?;
        let bytes = rec
            .data
            .iter()
            .map(|v| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(v) {
                    Ok(*v as u8)
                } else {
                    Err(CheckpointError::Format("model config is not byte encoded".into()))
                }
            })
            .collect::<CheckpointResult<Vec<u8>>>()?;
        let text = String::from_utf8(bytes)
            .map_err(|_| CheckpointError::Format("model config is not UTF-8".into()))?;
        ModelConfig::from_kv(&text).map_err(|e| CheckpointError::Format(e.to_string()))
    }

    /// Copies weights, batchnorm statistics and momentum into `model`.
    /// Every missing or misshapen entry is reported, not just the first.
    pub fn restore_into<T: Float>(&self, model: &mut Model<T>) -> CheckpointResult<TrainState> {
        let mut problems = Vec::new();
        let mut check = |name: &str, shape: &[usize]| -> Option<&Record> {
            match self.get(name) {
                None => {
                    problems.push(format!("`{name}` missing from checkpoint"));
                    None
                }
                Some(r) if r.shape != shape => {
                    problems.push(format!("`{name}`: checkpoint {:?}, model {:?}", r.shape, shape));
                    None
                }
                Some(r) => Some(r),
            }
        };
        let mut params = Vec::new();
        for p in model.store.params() {
            let w = check(&p.name, p.tensor.shape());
            let m = check(&format!("{MOMENTUM_PREFIX}{}", p.name), p.tensor.shape());
            params.push(w.zip(m));
        }
        let mut buffers = Vec::new();
        for (name, t) in model.store.buffers() {
            buffers.push(check(&format!("{BUFFER_PREFIX}{name}"), t.shape()));
        }
        let known: std::collections::HashSet<String> = model
            .store
            .params()
            .iter()
            .map(|p| p.name.clone())
            .collect();
        for r in &self.records {
            let plain = !r.name.contains(':');
            if plain && !known.contains(&r.name) {
                problems.push(format!("`{}` is not a model parameter", r.name));
            }
        }
        if !problems.is_empty() {
            return Err(CheckpointError::Mismatch(problems));
        }
        let state = self.train_state()?;
        let cast = |v: &[f32]| v.iter().map(|x| T::of(*x as f64)).collect::<Vec<T>>();
        for (p, rec) in model.store.params_mut().iter_mut().zip(params) {
            let (w, m) = rec.expect("checked above");
            p.tensor.data_mut().copy_from_slice(&cast(&w.data));
            p.momentum.copy_from_slice(&cast(&m.data));
            p.tensor.zero_grad();
        }
        for ((_, t), rec) in model.store.buffers_mut().iter_mut().zip(buffers) {
            t.data_mut().copy_from_slice(&cast(&rec.expect("checked above").data));
        }
        Ok(state)
    }

    /// Loads a model whose configuration is read from the checkpoint itself.
    pub fn load_model<T: Float>(&self) -> CheckpointResult<(Model<T>, TrainState)> {
        let cfg = self.model_config()?;
        let mut model = Model::new(cfg, 0).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let state = self.restore_into(&mut model)?;
        Ok((model, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, TapPoint};
    use crate::model::Variant;

    fn model(classes: usize) -> Model<f32> {
        let cfg = ModelConfig::new(BackboneConfig::tiny(1), Variant::Awtm, TapPoint::Pos4, classes);
        Model::new(cfg, 11).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let m = model(3);
        let ck = Checkpoint::capture(&m, TrainState { epoch: 4, best_val_acc: 0.8125 });
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.train_state().unwrap(), TrainState { epoch: 4, best_val_acc: 0.8125 });
        assert_eq!(back.model_config().unwrap(), *m.config());
    }

    #[test]
    fn restore_reproduces_weights() {
        let a = model(3);
        let ck = Checkpoint::capture(&a, TrainState { epoch: 1, best_val_acc: 0.0 });
        let (b, _) = ck.load_model::<f32>().unwrap();
        for (pa, pb) in a.store.params().iter().zip(b.store.params()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data(), "{}", pa.name);
        }
    }

    #[test]
    fn mismatch_lists_offenders() {
        let ck = Checkpoint::capture(&model(3), TrainState { epoch: 1, best_val_acc: 0.0 });
        let mut other = model(4);
        match ck.restore_into(&mut other) {
            Err(CheckpointError::Mismatch(p)) => {
                assert!(p.iter().any(|s| s.contains("classifier.weight")));
                assert!(p.iter().any(|s| s.contains("classifier.bias")));
            }
            r => panic!("expected mismatch, got {r:?}"),
        }
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::capture(&model(2), TrainState { epoch: 0, best_val_acc: 0.0 });
        let mut bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut v = ck.to_bytes();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Format(_))));
    }
}

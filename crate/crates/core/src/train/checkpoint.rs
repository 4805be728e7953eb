//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `EIGCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` index length, the JSON index, then every
//! array as little-endian `f64` in index order. Each parameter contributes
//! its value and both Adam moments.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec, ParamStore, Vocabulary};
use crate::numerics::{Matrix, RngState};

pub const MAGIC: &[u8; 8] = b"EIGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Dev-set score used for model selection: accuracy, then lower loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevScore {
    pub accuracy: f64,
    pub loss: f64,
    pub epoch: usize,
}

impl DevScore {
    pub fn beats(&self, other: &DevScore) -> bool {
        self.accuracy > other.accuracy || (self.accuracy == other.accuracy && self.loss < other.loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    /// Stream for the next epoch's shuffle.
    pub rng: RngState,
    /// Optimizer updates taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<DevScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ArrayKind {
    Value,
    M,
    V,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    kind: ArrayKind,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    config: TrainConfig,
    model: ModelSpec,
    vocab: Vocabulary,
    labels: Vec<String>,
    rng: RngState,
    step: u64,
    epoch: usize,
    best: Option<DevScore>,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for p in self.model.store.params() {
            for (kind, m) in [(ArrayKind::Value, &p.value), (ArrayKind::M, &p.m), (ArrayKind::V, &p.v)] {
                arrays.push(ArrayEntry {
                    name: p.name.clone(),
                    kind,
                    rows: m.rows(),
                    cols: m.cols(),
                    offset: data.len(),
                });
                data.extend_from_slice(m.data());
            }
        }
        let index = Index {
            config: self.config.clone(),
            model: self.model.spec.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            rng: self.rng.clone(),
            step: self.step,
            epoch: self.epoch,
            best: self.best,
            arrays,
        };
        let json = serde_json::to_vec(&index)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + json_len).ok_or_else(|| bad("truncated index"))?;
        let index: Index = serde_json::from_slice(body)?;
        let payload = &bytes[20 + json_len..];
        if !payload.len().is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let template = Model::new(index.model.clone(), 0)?;
        let mut store: ParamStore = template.store.clone();
        for (k, p) in store.params_mut().iter_mut().enumerate() {
            for (j, kind) in [ArrayKind::Value, ArrayKind::M, ArrayKind::V].into_iter().enumerate() {
                let e = index
                    .arrays
                    .get(3 * k + j)
                    .ok_or_else(|| Error::Checkpoint(format!("missing array for {}", p.name)))?;
                if e.name != p.name || e.kind != kind || (e.rows, e.cols) != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "array {} {:?} {}x{} does not match parameter {} {}x{}",
                        e.name,
                        e.kind,
                        e.rows,
                        e.cols,
                        p.name,
                        p.value.rows(),
                        p.value.cols()
                    )));
                }
                let slice = data
                    .get(e.offset..e.offset + e.rows * e.cols)
                    .ok_or_else(|| Error::Checkpoint(format!("array {} runs past the payload", e.name)))?;
                let m = Matrix::from_vec(e.rows, e.cols, slice.to_vec())?;
                match kind {
                    ArrayKind::Value => p.value = m,
                    ArrayKind::M => p.m = m,
                    ArrayKind::V => p.v = m,
                }
            }
        }
        if index.arrays.len() != 3 * store.len() {
            return Err(bad("checkpoint has extra arrays"));
        }
        Ok(Checkpoint {
            config: index.config,
            model: Model::from_store(index.model, store)?,
            vocab: index.vocab,
            labels: index.labels,
            rng: index.rng,
            step: index.step,
            epoch: index.epoch,
            best: index.best,
        })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelInput;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let cfg = TrainConfig {
            embedding_size: 4,
            encoder_hidden_units: 3,
            connectivity_hidden_units: 2,
            head_hidden_units: 3,
            ..TrainConfig::synthetic_quick()
        };
        let mut model = Model::new(cfg.model_spec(10, 3), 5).unwrap();
        let mut rng = Rng::new(1);
        for p in model.store.params_mut() {
            let (r, c) = p.m.shape();
            p.m = rng.normal_matrix(r, c, 1.0);
            p.v = rng.uniform_matrix(r, c, 0.0, 1.0);
        }
        Checkpoint {
            config: cfg,
            model,
            vocab: Vocabulary::default(),
            labels: vec!["a".into(), "b".into(), "c".into()],
            rng: rng.state(),
            step: 17,
            epoch: 2,
            best: Some(DevScore {
                accuracy: 0.5,
                loss: 0.7,
                epoch: 1,
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let x = ModelInput::Sentence(vec![2, 3, 9]);
        assert_eq!(back.model.predict(&x).unwrap(), ck.model.predict(&x).unwrap());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn dev_score_order() {
        let a = DevScore { accuracy: 0.9, loss: 0.3, epoch: 1 };
        let b = DevScore { accuracy: 0.9, loss: 0.2, epoch: 2 };
        let c = DevScore { accuracy: 0.95, loss: 0.9, epoch: 3 };
        assert!(b.beats(&a) && !a.beats(&b) && c.beats(&b) && !a.beats(&a));
    }
}

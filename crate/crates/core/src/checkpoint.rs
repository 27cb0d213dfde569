//! Versioned binary checkpoint: a JSON header (format version, model kind,
//! hyperparameters, config hash, seed) followed by named matrices as
//! row-major little-endian f64. Bit-exact and language-portable; a
//! save/load/save round trip reproduces the file byte for byte.

use crate::embedding::{EmbedConfig, EmbedModel};
use crate::fom::{FomConfig, FomModel};
use crate::pog::{PogConfig, PogModel};
use crate::tensor::Tensor2;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"OFCKPT01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("header is not valid JSON: {0}")]
    BadHeader(String),
    #[error("checkpoint holds a {got} model, expected {expected}")]
    WrongKind { expected: String, got: String },
    #[error("matrix {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("matrix count {got} does not match the model's {expected} parameters")]
    CountMismatch { expected: usize, got: usize },
    #[error("model construction failed: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Header fields preserved verbatim across load/save cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub hyperparams: serde_json::Value,
}

/// A parsed checkpoint: header plus named matrices in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub matrices: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        let header =
            serde_json::to_vec(&self.meta).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.matrices.len() as u32).to_le_bytes());
        for (name, m) in &self.matrices {
            let name_bytes = name.as_bytes();
            buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = std::io::BufReader::new(file);
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len = read_u32(&mut r, path)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(io)?;
        let meta: CheckpointMeta = serde_json::from_slice(&header)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion(meta.format_version));
        }
        let count = read_u32(&mut r, path)? as usize;
        let mut matrices = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r, path)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name)
                .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
            let rows = read_u32(&mut r, path)? as usize;
            let cols = read_u32(&mut r, path)? as usize;
            let mut data = vec![0.0; rows * cols];
            let mut bytes = vec![0u8; 8 * rows * cols];
            r.read_exact(&mut bytes).map_err(io)?;
            for (i, chunk) in bytes.chunks_exact(8).enumerate() {
                data[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
            let tensor = Tensor2::from_vec(rows, cols, data).expect("length matches header shape");
            matrices.push((name, tensor));
        }
        Ok(Checkpoint { meta, matrices })
    }
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(u32::from_le_bytes(b))
}

fn meta_for(kind: &str, seed: u64, config_hash: &str, hyperparams: serde_json::Value) -> CheckpointMeta {
    CheckpointMeta {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        hyperparams,
    }
}

fn expect_kind(meta: &CheckpointMeta, kind: &str) -> Result<()> {
    if meta.kind != kind {
        return Err(CheckpointError::WrongKind {
            expected: kind.to_string(),
            got: meta.kind.clone(),
        });
    }
    Ok(())
}

/// Replace a model's parameters with the checkpoint matrices, verifying
/// names and shapes in order.
fn fill_params(
    params: Vec<(&mut Tensor2, String)>,
    matrices: &[(String, Tensor2)],
) -> Result<()> {
    if params.len() != matrices.len() {
        return Err(CheckpointError::CountMismatch {
            expected: params.len(),
            got: matrices.len(),
        });
    }
    for ((param, name), (file_name, value)) in params.into_iter().zip(matrices) {
        if &name != file_name {
            return Err(CheckpointError::WrongKind {
                expected: name,
                got: file_name.clone(),
            });
        }
        if param.shape() != value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: param.shape(),
                got: value.shape(),
            });
        }
        *param = value.clone();
    }
    Ok(())
}

// ---- embed -------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EmbedHyper {
    config: EmbedConfig,
}

pub fn embed_to_checkpoint(
    model: &EmbedModel,
    config: &EmbedConfig,
    seed: u64,
    config_hash: &str,
) -> Checkpoint {
    let hyper = serde_json::to_value(EmbedHyper {
        config: config.clone(),
    })
    .expect("embed config serializes");
    Checkpoint {
        meta: meta_for("embed", seed, config_hash, hyper),
        matrices: vec![
            ("weights".to_string(), model.weights.clone()),
            ("bias".to_string(), model.bias.clone()),
        ],
    }
}

pub fn embed_from_checkpoint(ckpt: &Checkpoint) -> Result<(EmbedModel, EmbedConfig)> {
    expect_kind(&ckpt.meta, "embed")?;
    let hyper: EmbedHyper = serde_json::from_value(ckpt.meta.hyperparams.clone())
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let mut model =
        EmbedModel::init(&hyper.config).map_err(|e| CheckpointError::Model(e.to_string()))?;
    {
        let named = vec![
            (&mut model.weights, "weights".to_string()),
            (&mut model.bias, "bias".to_string()),
        ];
        fill_params(named, &ckpt.matrices)?;
    }
    Ok((model, hyper.config))
}

// ---- fom ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FomHyper {
    config: FomConfig,
}

pub fn fom_to_checkpoint(model: &FomModel, seed: u64, config_hash: &str) -> Checkpoint {
    let hyper = serde_json::to_value(FomHyper { config: model.config })
        .expect("fom config serializes");
    Checkpoint {
        meta: meta_for("fom", seed, config_hash, hyper),
        matrices: model.named_params(),
    }
}

pub fn fom_from_checkpoint(ckpt: &Checkpoint) -> Result<FomModel> {
    expect_kind(&ckpt.meta, "fom")?;
    let hyper: FomHyper = serde_json::from_value(ckpt.meta.hyperparams.clone())
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let mut model = FomModel::init(hyper.config, ckpt.meta.seed)
        .map_err(|e| CheckpointError::Model(e.to_string()))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let params = model.params_mut().into_iter().zip(names).collect();
    fill_params(params, &ckpt.matrices)?;
    Ok(model)
}

// ---- pog ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PogHyper {
    config: PogConfig,
}

pub fn pog_to_checkpoint(model: &PogModel, seed: u64, config_hash: &str) -> Checkpoint {
    let hyper = serde_json::to_value(PogHyper { config: model.config })
        .expect("pog config serializes");
    Checkpoint {
        meta: meta_for("pog", seed, config_hash, hyper),
        matrices: model.named_params(),
    }
}

pub fn pog_from_checkpoint(ckpt: &Checkpoint) -> Result<PogModel> {
    expect_kind(&ckpt.meta, "pog")?;
    let hyper: PogHyper = serde_json::from_value(ckpt.meta.hyperparams.clone())
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let mut model = PogModel::init(hyper.config, ckpt.meta.seed)
        .map_err(|e| CheckpointError::Model(e.to_string()))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let params = model.params_mut().into_iter().zip(names).collect();
    fill_params(params, &ckpt.matrices)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fom_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = FomConfig {
            embed_dim: 6,
            model_dim: 4,
            layers: 2,
            heads: 2,
            num_negatives: 3,
            allow_empty_negatives: false,
        };
        let model = FomModel::init(config, 41).unwrap();
        let ckpt = fom_to_checkpoint(&model, 41, "deadbeef");
        let p1 = dir.path().join("fom.ckpt");
        let p2 = dir.path().join("fom2.ckpt");
        ckpt.write(&p1).unwrap();
        let loaded = Checkpoint::read(&p1).unwrap();
        loaded.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let restored = fom_from_checkpoint(&loaded).unwrap();
        assert_eq!(restored, model);
    }

    #[test]
    fn pog_roundtrip_restores_model() {
        let dir = tempfile::tempdir().unwrap();
        let config = PogConfig {
            embed_dim: 6,
            model_dim: 4,
            per_layers: 1,
            gen_layers: 1,
            heads: 2,
            num_negatives: 3,
            max_len: 8,
            history_cap: 50,
        };
        let model = PogModel::init(config, 43).unwrap();
        let ckpt = pog_to_checkpoint(&model, 43, "cafe");
        let path = dir.path().join("pog.ckpt");
        ckpt.write(&path).unwrap();
        let restored = pog_from_checkpoint(&Checkpoint::read(&path).unwrap()).unwrap();
        assert_eq!(restored, model);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let config = FomConfig {
            embed_dim: 6,
            model_dim: 4,
            layers: 1,
            heads: 2,
            num_negatives: 3,
            allow_empty_negatives: false,
        };
        let model = FomModel::init(config, 44).unwrap();
        let ckpt = fom_to_checkpoint(&model, 44, "00");
        assert!(matches!(
            pog_from_checkpoint(&ckpt),
            Err(CheckpointError::WrongKind { .. })
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxx").unwrap();
        assert!(matches!(
            Checkpoint::read(&path),
            Err(CheckpointError::BadMagic)
        ));
    }
}

//! Checkpoint container: an 8-byte magic, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then every tensor as
//! little-endian `f32` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ArchConfig, ModelError, Params};

pub const MAGIC: &[u8; 8] = b"TSVAECK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("architecture mismatch: checkpoint has {found}, expected {expected}")]
    Mismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ArchConfig,
    pub provenance: String,
    pub tensors: Vec<TensorInfo>,
    /// Hex SHA-256 of the tensor payload.
    pub payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Params<f32>,
    pub provenance: String,
}

fn shapes(params: &Params<f32>) -> Vec<TensorInfo> {
    params
        .layers()
        .into_iter()
        .flat_map(|(name, l)| {
            [
                TensorInfo {
                    name: format!("{name}.weight"),
                    shape: vec![l.rows, l.cols],
                },
                TensorInfo {
                    name: format!("{name}.bias"),
                    shape: vec![l.bias.len()],
                },
            ]
        })
        .collect()
}

pub fn encode_checkpoint(params: &Params<f32>, provenance: &str) -> Vec<u8> {
    let mut payload = Vec::with_capacity(params.parameter_count() * 4);
    for (_, t) in params.tensors() {
        for v in t {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        config: params.config.clone(),
        provenance: provenance.to_string(),
        tensors: shapes(params),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if header_len > body.len() {
        return Err(corrupt("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let payload = &body[header_len..];
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload digest mismatch"));
    }
    let mut params = Params::<f32>::zeros(&header.config)?;
    if shapes(&params) != header.tensors {
        return Err(corrupt("tensor table does not match the stored architecture"));
    }
    if payload.len() != params.parameter_count() * 4 {
        return Err(corrupt("payload length"));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().unwrap();
        }
    }
    Ok(Checkpoint {
        params,
        provenance: header.provenance,
    })
}

pub fn save_checkpoint(params: &Params<f32>, provenance: &str, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("partial");
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(&encode_checkpoint(params, provenance)).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Loads and insists on a specific architecture.
pub fn load_checkpoint_for(path: &Path, expected: &ArchConfig) -> Result<Checkpoint, CheckpointError> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.params.config != expected {
        return Err(CheckpointError::Mismatch {
            expected: describe(expected),
            found: describe(&ckpt.params.config),
        });
    }
    Ok(ckpt)
}

fn describe(c: &ArchConfig) -> String {
    format!(
        "side {} conv {:?} deconv {:?} latent {} slope {} type_loss {}",
        c.image_side, c.conv_filters, c.deconv_filters, c.latent_dim, c.leaky_slope, c.type_loss
    )
}

/// Hex SHA-256 of a whole checkpoint file.
pub fn checkpoint_hash(path: &Path) -> Result<String, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Params<f32> {
        Params::init(&ArchConfig::miniature(), 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut p = sample();
        p.conv1.weight[0] = f32::MIN_POSITIVE / 3.0;
        p.deconv3.bias[2] = -0.0;
        save_checkpoint(&p, "stage 1: faces", &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.provenance, "stage 1: faces");
        for ((_, a), (_, b)) in p.tensors().iter().zip(back.params.tensors()) {
            let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.params.config, p.config);
    }

    #[test]
    fn latent_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&sample(), "", &path).unwrap();
        let expected = ArchConfig {
            latent_dim: 64,
            ..ArchConfig::miniature()
        };
        match load_checkpoint_for(&path, &expected) {
            Err(CheckpointError::Mismatch { expected, found }) => {
                assert!(expected.contains("latent 64"));
                assert!(found.contains("latent 4"));
            }
            other => panic!("{other:?}"),
        }
        load_checkpoint_for(&path, &ArchConfig::miniature()).unwrap();
    }

    #[test]
    fn detects_corruption_and_versions() {
        let good = encode_checkpoint(&sample(), "x");
        let mut flipped = good.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(matches!(decode_checkpoint(&flipped), Err(CheckpointError::Corrupt(_))));
        assert!(matches!(decode_checkpoint(&good[..good.len() - 4]), Err(CheckpointError::Corrupt(_))));
        assert!(matches!(decode_checkpoint(b"nonsense"), Err(CheckpointError::Corrupt(_))));
        let mut future = good.clone();
        future[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&future),
            Err(CheckpointError::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn file_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        save_checkpoint(&sample(), "p", &a).unwrap();
        save_checkpoint(&sample(), "p", &b).unwrap();
        let h = checkpoint_hash(&a).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, checkpoint_hash(&b).unwrap());
        save_checkpoint(&sample(), "q", &b).unwrap();
        assert_ne!(h, checkpoint_hash(&b).unwrap());
    }
}

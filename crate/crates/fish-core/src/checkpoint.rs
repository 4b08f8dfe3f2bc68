//! Checkpoint persistence: magic "FSHM", a little-endian u32 header length,
//! a JSON header (configs, training metadata, named-tensor manifest), then
//! the flat f32 little-endian weight blob. Encoding is deterministic, so
//! load -> save round-trips byte-identically.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{FishConfig, FishParams, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FSHM";
pub const FORMAT_VERSION: u32 = 1;

/// One named tensor in the blob. Offsets and lengths count f32 elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: u64,
    pub len: u64,
    pub shape: Vec<usize>,
}

/// Provenance of a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub n_train_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: FishConfig,
    pub training: Option<TrainMeta>,
    pub manifest: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blob: Vec<f32>,
}

/// Checkpoint IO failures; every variant names what went wrong where.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    TooShort,
    BadMagic,
    BadHeader(String),
    /// Manifest entries must tile the blob exactly, in order.
    ManifestGap { name: String, expected_offset: u64, got: u64 },
    BlobLength { expected: usize, got: usize },
    /// A tensor the model expects is missing or misshapen.
    Tensor { name: String, detail: String },
    BadConfig(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::TooShort => write!(f, "checkpoint truncated"),
            CheckpointError::BadMagic => write!(f, "bad magic, expected FSHM"),
            CheckpointError::BadHeader(e) => write!(f, "bad header: {e}"),
            CheckpointError::ManifestGap {
                name,
                expected_offset,
                got,
            } => write!(
                f,
                "manifest not contiguous at tensor {name}: expected offset {expected_offset}, got {got}"
            ),
            CheckpointError::BlobLength { expected, got } => {
                write!(f, "blob length {got} does not match manifest total {expected}")
            }
            CheckpointError::Tensor { name, detail } => write!(f, "tensor {name}: {detail}"),
            CheckpointError::BadConfig(e) => write!(f, "bad config: {e}"),
        }
    }
}

impl core::error::Error for CheckpointError {}

impl Checkpoint {
    /// Snapshot a model. The manifest follows the parameter registry order.
    pub fn from_model(model: &Model, training: Option<TrainMeta>) -> Checkpoint {
        let mut manifest = Vec::new();
        let mut blob = Vec::new();
        model.params.for_each(&mut |name, t| {
            manifest.push(TensorEntry {
                name,
                offset: blob.len() as u64,
                len: t.numel() as u64,
                shape: t.shape().to_vec(),
            });
            blob.extend_from_slice(t.data());
        });
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                config: model.cfg.clone(),
                training,
                manifest,
            },
            blob,
        }
    }

    /// Materialize the model; errors name the offending tensor.
    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        self.header
            .config
            .validate()
            .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
        self.validate_manifest()?;
        let mut params = FishParams::<f32>::init(&self.header.config, 0);
        let mut cursor = 0usize;
        let mut err: Option<CheckpointError> = None;
        params.for_each_mut(&mut |name, t: &mut Tensor<f32>| {
            if err.is_some() {
                return;
            }
            let Some(entry) = self.header.manifest.get(cursor) else {
                err = Some(CheckpointError::Tensor {
                    name,
                    detail: "missing from manifest".to_string(),
                });
                return;
            };
            if entry.name != name {
                err = Some(CheckpointError::Tensor {
                    name,
                    detail: format!("manifest has {} at this position", entry.name),
                });
                return;
            }
            if entry.shape != t.shape() {
                err = Some(CheckpointError::Tensor {
                    name,
                    detail: format!("shape {:?} incompatible with {:?}", entry.shape, t.shape()),
                });
                return;
            }
            let (o, l) = (entry.offset as usize, entry.len as usize);
            t.data_mut().copy_from_slice(&self.blob[o..o + l]);
            cursor += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if cursor != self.header.manifest.len() {
            return Err(CheckpointError::Tensor {
                name: self.header.manifest[cursor].name.clone(),
                detail: "not a model parameter".to_string(),
            });
        }
        Ok(Model {
            cfg: self.header.config.clone(),
            params,
        })
    }

    fn validate_manifest(&self) -> Result<(), CheckpointError> {
        let mut expected = 0u64;
        for e in &self.header.manifest {
            if e.offset != expected {
                return Err(CheckpointError::ManifestGap {
                    name: e.name.clone(),
                    expected_offset: expected,
                    got: e.offset,
                });
            }
            let numel: usize = e.shape.iter().product();
            if numel as u64 != e.len {
                return Err(CheckpointError::Tensor {
                    name: e.name.clone(),
                    detail: format!("shape {:?} disagrees with len {}", e.shape, e.len),
                });
            }
            expected += e.len;
        }
        if expected as usize != self.blob.len() {
            return Err(CheckpointError::BlobLength {
                expected: expected as usize,
                got: self.blob.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializable");
        let mut out = Vec::with_capacity(8 + header.len() + self.blob.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for &v in &self.blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        if bytes.len() < 8 {
            return Err(CheckpointError::TooShort);
        }
        if &bytes[0..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + hlen {
            return Err(CheckpointError::TooShort);
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + hlen])
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        let body = &bytes[8 + hlen..];
        if body.len() % 4 != 0 {
            return Err(CheckpointError::BlobLength {
                expected: body.len() / 4 * 4,
                got: body.len(),
            });
        }
        let blob: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ckpt = Checkpoint { header, blob };
        ckpt.validate_manifest()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FishConfig;

    #[test]
    fn encode_decode_roundtrip_is_byte_identical() {
        let model = Model::init(FishConfig::tiny(), 5).unwrap();
        let ckpt = Checkpoint::from_model(
            &model,
            Some(TrainMeta {
                seed: 5,
                epochs: 0,
                n_train_records: 0,
            }),
        );
        let bytes = ckpt.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        // And the weights survive exactly.
        let model2 = back.to_model().unwrap();
        let mut identical = true;
        let mut rhs = Vec::new();
        model2.params.for_each(&mut |_, t| rhs.push(t.clone()));
        let mut i = 0;
        model.params.for_each(&mut |_, t| {
            identical &= t == &rhs[i];
            i += 1;
        });
        assert!(identical);
    }

    #[test]
    fn corrupted_blob_is_rejected_without_partial_model() {
        let model = Model::init(FishConfig::tiny(), 5).unwrap();
        let ckpt = Checkpoint::from_model(&model, None);
        let mut bytes = ckpt.encode();
        bytes.truncate(bytes.len() - 4); // drop one weight
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert!(matches!(err, CheckpointError::BlobLength { .. }));
    }

    #[test]
    fn bad_magic_and_truncation_are_named() {
        assert_eq!(
            Checkpoint::decode(&[0u8; 4]).unwrap_err(),
            CheckpointError::TooShort
        );
        let mut bytes = Checkpoint::from_model(&Model::init(FishConfig::tiny(), 1).unwrap(), None)
            .encode();
        bytes[0] = b'X';
        assert_eq!(
            Checkpoint::decode(&bytes).unwrap_err(),
            CheckpointError::BadMagic
        );
    }

    #[test]
    fn manifest_gap_names_tensor() {
        let model = Model::init(FishConfig::tiny(), 5).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, None);
        ckpt.header.manifest[1].offset += 1;
        let err = ckpt.validate_manifest().unwrap_err();
        assert!(matches!(err, CheckpointError::ManifestGap { .. }));
    }
}

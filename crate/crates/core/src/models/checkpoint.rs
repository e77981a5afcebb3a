//! The checkpoint container: a JSON header (spec + training metadata)
//! followed by named, length-prefixed little-endian float32 weight blobs.
//!
//! ```text
//! magic "CCMODEL1"                      8 bytes
//! header_len                            u32 LE
//! header JSON {spec, training_meta}     header_len bytes
//! blob_count                            u32 LE
//! per blob:
//!   name_len                            u32 LE
//!   name (UTF-8)                        name_len bytes
//!   element_count                       u64 LE
//!   elements                            element_count * f32 LE
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_net, CrowdModel, ModelSpec};
use crate::error::{Error, Result};
use crate::util::{read_file, write_file};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CCMODEL1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// SHA-256 of the resolved training configuration.
    pub config_hash: String,
    pub seed: u64,
    /// Epoch the weights were taken from (best validation MAE).
    pub epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    training_meta: TrainingMeta,
}

/// A serialized model: spec, training metadata, and named weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub spec: ModelSpec,
    pub training_meta: TrainingMeta,
    pub tensors: Vec<(String, Vec<f32>)>,
}

impl ModelCheckpoint {
    pub fn from_model(model: &CrowdModel, training_meta: TrainingMeta) -> Self {
        ModelCheckpoint {
            spec: model.spec.clone(),
            training_meta,
            tensors: model.net.named_tensors(),
        }
    }

    /// Rebuilds a runnable model; fails if tensor names or shapes do not
    /// match the spec's architecture.
    pub fn to_model(&self) -> Result<CrowdModel> {
        let mut net = build_net::<f32>(&self.spec, 0)?;
        net.load_named_tensors(&self.tensors)?;
        Ok(CrowdModel {
            spec: self.spec.clone(),
            net,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            training_meta: self.training_meta.clone(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::json(Path::new("<checkpoint header>"), e))?;

        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        bytes.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, values) in &self.tensors {
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: String| Error::CheckpointFormat {
            path: origin.to_path_buf(),
            message,
        };
        let take = |offset: &mut usize, len: usize| -> Result<&[u8]> {
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| fail("truncated checkpoint".into()))?;
            let slice = &bytes[*offset..end];
            *offset = end;
            Ok(slice)
        };

        let mut offset = 0usize;
        if take(&mut offset, 8)? != CHECKPOINT_MAGIC {
            return Err(fail("bad magic".into()));
        }
        let header_len =
            u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(&mut offset, header_len)?)
            .map_err(|e| fail(format!("header parse error: {e}")))?;

        let blob_count = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap());
        let mut tensors = Vec::with_capacity(blob_count as usize);
        for _ in 0..blob_count {
            let name_len =
                u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut offset, name_len)?.to_vec())
                .map_err(|e| fail(format!("bad tensor name: {e}")))?;
            let count =
                u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap()) as usize;
            let raw = take(&mut offset, count * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, values));
        }
        if offset != bytes.len() {
            return Err(fail("trailing bytes after last blob".into()));
        }

        Ok(ModelCheckpoint {
            spec: header.spec,
            training_meta: header.training_meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelFamily};

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let spec = ModelSpec::new(ModelFamily::MultiColumn, 1);
        let model = build_model(&spec, 21).unwrap();
        let meta = TrainingMeta {
            config_hash: "deadbeef".into(),
            seed: 21,
            epoch: 3,
        };
        let ckpt = ModelCheckpoint::from_model(&model, meta);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(ckpt, back);

        // Bytes themselves round-trip too.
        let bytes_a = ckpt.to_bytes().unwrap();
        let bytes_b = back.to_bytes().unwrap();
        assert_eq!(bytes_a, bytes_b);

        // And the rebuilt model predicts identically.
        let rebuilt = back.to_model().unwrap();
        assert_eq!(rebuilt.net.named_tensors(), model.net.named_tensors());
    }

    #[test]
    fn incompatible_checkpoint_is_rejected() {
        let spec = ModelSpec::new(ModelFamily::MultiColumn, 1);
        let model = build_model(&spec, 2).unwrap();
        let mut ckpt = ModelCheckpoint::from_model(
            &model,
            TrainingMeta::default(),
        );
        // Claim a different architecture than the tensors describe.
        ckpt.spec = ModelSpec::new(ModelFamily::DilatedSingleColumn, 1);
        assert!(ckpt.to_model().is_err());
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let spec = ModelSpec::new(ModelFamily::MultiColumn, 1);
        let model = build_model(&spec, 2).unwrap();
        let ckpt = ModelCheckpoint::from_model(&model, TrainingMeta::default());
        let mut bytes = ckpt.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(ModelCheckpoint::from_bytes(&bytes, Path::new("x")).is_err());
        bytes[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bytes, Path::new("x")).is_err());
    }
}

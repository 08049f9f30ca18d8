//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "LFGCKPT\n"
//! header_len   u32 LE
//! header       JSON {format_version, config, step, tensor_count}
//! tensors      tensor_count blocks, in parameter name order:
//!   name_len u32 LE, name UTF-8, rows u64 LE, cols u64 LE,
//!   rows*cols f64 LE, SHA-256 of the preceding bytes of the block
//! ```

use crate::config::ModelConfig;
use crate::model::{LoopDraw, Model};
use crate::{ModelError, Result};
use loopforge_nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"LFGCKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    step: u64,
    tensor_count: usize,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        step: model.step,
        tensor_count: model.params.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(model.params.num_scalars() * 8 + header.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in model.params.iter() {
        let start = out.len();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out[start..]);
        out.extend_from_slice(&digest);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let header_len = r.u32()? as usize;
    let header: serde_json::Value = serde_json::from_slice(r.take(header_len)?)?;
    let found = header
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| ModelError::Checkpoint("header lacks format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(ModelError::Version {
            found: found as u32,
        });
    }
    let header: Header = serde_json::from_value(header)?;
    let arch = LoopDraw::new(&header.config)?;
    let layout = arch.init_params(0)?;
    if header.tensor_count != layout.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} tensors, config implies {}",
            header.tensor_count,
            layout.len()
        )));
    }
    let mut params = ParamStore::new();
    for _ in 0..header.tensor_count {
        let start = r.pos;
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| ModelError::Checkpoint(format!("tensor `{name}` is too large")))?;
        let data: Vec<f64> = r
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let end = r.pos;
        let stored = r.take(32)?;
        if Sha256::digest(&bytes[start..end]).as_slice() != stored {
            return Err(ModelError::Checksum(name));
        }
        match layout.get(&name) {
            Some(t) if t.shape() == [rows, cols] => {}
            Some(t) => {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` has shape [{rows}, {cols}], config implies {:?}",
                    t.shape()
                )))
            }
            None => return Err(ModelError::Checkpoint(format!("unexpected tensor `{name}`"))),
        }
        params.insert(name, Tensor::new(rows, cols, data))?;
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Model {
        arch,
        params,
        step: header.step,
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, to_bytes(model))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and rejects it unless it was written for `config`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model> {
    let m = load_checkpoint(path)?;
    if m.config() != config {
        return Err(ModelError::ConfigMismatch);
    }
    Ok(m)
}

/// Hex SHA-256 of a file, used to compare checkpoints.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let digest = Sha256::digest(std::fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

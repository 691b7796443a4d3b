//! Versioned model checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        4 bytes  "DSTG"
//! version      u32      1
//! config_len   u32
//! config       JSON-serialized model config
//! param_count  u32
//! per parameter, in registry order:
//!   name_len   u32, then UTF-8 name
//!   rank       u32, then rank × u64 extents
//!   values     product × f32
//! ```
//!
//! Loading rebuilds the architecture from the embedded config and validates
//! every name and extent against the fresh registry before filling values.

use std::fs;
use std::path::Path;

use dstgtn_tensor::Element;

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::model::Model;

const MAGIC: [u8; 4] = *b"DSTG";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Element>(model: &Model<T>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, serialize_checkpoint(model)?)
        .map_err(|e| ModelError::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn serialize_checkpoint<T: Element>(model: &Model<T>) -> Result<Vec<u8>, ModelError> {
    let config = serde_json::to_vec(&model.cfg)
        .map_err(|e| ModelError::Checkpoint(format!("config serialization: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.registry.len() as u32).to_le_bytes());
    for param in model.registry.iter() {
        let name = param.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(param.shape().len() as u32).to_le_bytes());
        for &e in param.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in param.value().iter() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Model<T>, ModelError> {
    let bytes = fs::read(path)
        .map_err(|e| ModelError::Checkpoint(format!("read {}: {e}", path.display())))?;
    deserialize_checkpoint(&bytes)
}

pub fn deserialize_checkpoint<T: Element>(bytes: &[u8]) -> Result<Model<T>, ModelError> {
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *at + n > bytes.len() {
            return Err(ModelError::Checkpoint(format!(
                "truncated at byte {at}: need {n} more, {} available",
                bytes.len() - *at
            )));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };

    let magic: [u8; 4] = take(&mut at, 4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let config_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let cfg: ModelConfig = serde_json::from_slice(take(&mut at, config_len)?)
        .map_err(|e| ModelError::Checkpoint(format!("bad embedded config: {e}")))?;

    // Architecture comes from the config; stored values overwrite the seed-0
    // initialization below.
    let model = Model::<T>::build(&cfg, 0)?;

    let param_count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    if param_count != model.registry.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint holds {param_count} parameters, architecture expects {}",
            model.registry.len()
        )));
    }
    for _ in 0..param_count {
        let name_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut at, name_len)?)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize);
        }
        let param = model
            .registry
            .get(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter '{name}'")))?
            .clone();
        if param.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "parameter '{name}' has extents {shape:?}, config implies {:?}",
                param.shape()
            )));
        }
        let count: usize = shape.iter().product();
        let raw = take(&mut at, count * 4)?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        param.set_value(values);
    }
    if at != bytes.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - at
        )));
    }
    Ok(model)
}

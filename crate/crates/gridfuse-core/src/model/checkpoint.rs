//! Versioned weight container: a binary file of named tensors plus a JSON
//! manifest describing the model that produced them. Loading restores into
//! a freshly built model and insists on an exact name/shape match, so the
//! store ordering contract with the optimizer is preserved.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{DeviceDims, HierModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: u32 = 0x4746_5750;
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub dims: Vec<DeviceDims>,
    pub cond_dim: usize,
    pub config: ModelConfig,
    /// Free-form provenance, e.g. a dataset hash or config digest.
    pub fingerprint: String,
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.write_u32::<LittleEndian>(MAGIC)?;
    buf.write_u32::<LittleEndian>(VERSION)?;
    buf.write_u64::<LittleEndian>(store.len() as u64)?;
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        buf.write_u32::<LittleEndian>(nb.len() as u32)?;
        buf.write_all(nb)?;
        buf.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &s in t.shape() {
            buf.write_u64::<LittleEndian>(s as u64)?;
        }
        for &v in t.data() {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    let mut r = bytes.as_slice();
    if r.read_u32::<LittleEndian>()? != MAGIC {
        return Err(Error::Format("not a weight container".into()));
    }
    if r.read_u32::<LittleEndian>()? != VERSION {
        return Err(Error::Format("unsupported weight container version".into()));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    if count != store.len() {
        return Err(Error::Format(format!(
            "weight container has {count} tensors, model expects {}",
            store.len()
        )));
    }
    for idx in 0..count {
        let nlen = r.read_u32::<LittleEndian>()? as usize;
        let mut nb = vec![0u8; nlen];
        r.read_exact(&mut nb)?;
        let name = String::from_utf8(nb).map_err(|e| Error::Format(e.to_string()))?;
        let id = crate::nn::ParamId(idx);
        if store.name(id) != name {
            return Err(Error::Format(format!(
                "tensor {idx} is named {name:?} in the file but {:?} in the model",
                store.name(id)
            )));
        }
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        if shape != store.get(id).shape() {
            return Err(Error::Format(format!(
                "tensor {name} has mismatched shape {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0; len];
        for v in &mut data {
            *v = r.read_f64::<LittleEndian>()?;
        }
        store.set(id, Tensor::new(shape, data));
    }
    Ok(())
}

/// Save a model as `<stem>.bin` + `<stem>.json`.
pub fn save_model(model: &HierModel, stem: &Path, fingerprint: &str) -> Result<()> {
    let meta = CheckpointMeta {
        version: VERSION,
        dims: model.devices.iter().map(|d| d.dims).collect(),
        cond_dim: model.cond_dim,
        config: model.config.clone(),
        fingerprint: fingerprint.to_string(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(stem.with_extension("json"), text)?;
    save_weights(&model.store, &stem.with_extension("bin"))
}

pub fn load_model(stem: &Path) -> Result<(HierModel, CheckpointMeta)> {
    let text = fs::read_to_string(stem.with_extension("json"))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if meta.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            meta.version
        )));
    }
    let mut model = HierModel::new(&meta.dims, meta.cond_dim, meta.config.clone());
    load_weights(&mut model.store, &stem.with_extension("bin"))?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_restores_weights_exactly() {
        let dims = [DeviceDims { n: 2, m: 2, q: 2 }; 2];
        let model = HierModel::new(
            &dims,
            7,
            ModelConfig {
                seed: 3,
                ..ModelConfig::default()
            },
        );
        let stem = std::env::temp_dir().join(format!("gfck-{}", std::process::id()));
        save_model(&model, &stem, "test").unwrap();
        let (back, meta) = load_model(&stem).unwrap();
        assert_eq!(meta.fingerprint, "test");
        for (a, b) in model.store.tensors().iter().zip(back.store.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        fs::remove_file(stem.with_extension("bin")).unwrap();
        fs::remove_file(stem.with_extension("json")).unwrap();
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let dims = [DeviceDims { n: 2, m: 2, q: 2 }; 2];
        let model = HierModel::new(
            &dims,
            7,
            ModelConfig {
                seed: 3,
                ..ModelConfig::default()
            },
        );
        let stem = std::env::temp_dir().join(format!("gfck2-{}", std::process::id()));
        save_weights(&model.store, &stem.with_extension("bin")).unwrap();
        let other_dims = [DeviceDims { n: 2, m: 2, q: 2 }; 3];
        let mut other = HierModel::new(
            &other_dims,
            7,
            ModelConfig {
                seed: 3,
                ..ModelConfig::default()
            },
        );
        assert!(load_weights(&mut other.store, &stem.with_extension("bin")).is_err());
        fs::remove_file(stem.with_extension("bin")).unwrap();
    }
}

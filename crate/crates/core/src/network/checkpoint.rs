//! Single-file checkpoints: a safetensors archive whose header metadata
//! carries a format tag, a version and the model config as TOML.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device};
use safetensors::SafeTensors;

use super::config::ModelConfig;
use super::model::VaeUnet;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vae-unet-checkpoint";
pub const CHECKPOINT_VERSION: &str = "1";

pub fn save_checkpoint(model: &VaeUnet, path: impl AsRef<Path>) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    meta.insert("version".to_string(), CHECKPOINT_VERSION.to_string());
    meta.insert("model_config".to_string(), model.config().to_toml()?);
    let tensors: Vec<(String, candle_core::Tensor)> = model
        .params()
        .iter()
        .map(|(name, var)| (name.clone(), var.as_tensor().clone()))
        .collect();
    let bytes = safetensors::serialize(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(meta))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, canonical_header(&bytes)?)?;
    Ok(())
}

/// Re-emits the JSON header with sorted keys so identical weights give
/// identical files (the metadata map is otherwise written in hash order).
fn canonical_header(bytes: &[u8]) -> Result<Vec<u8>> {
    let bad = || Error::Checkpoint("malformed safetensors header".into());
    let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().expect("8 bytes")) as usize;
    let header = bytes.get(8..8 + n).ok_or_else(bad)?;
    let value: serde_json::Value = serde_json::from_slice(header)?;
    let sorted: BTreeMap<String, serde_json::Value> = match value {
        serde_json::Value::Object(m) => m
            .into_iter()
            .map(|(k, v)| match v {
                serde_json::Value::Object(inner) => {
                    let inner: BTreeMap<_, _> = inner.into_iter().collect();
                    (k, serde_json::to_value(inner).expect("json map"))
                }
                other => (k, other),
            })
            .collect(),
        _ => return Err(bad()),
    };
    let mut text = serde_json::to_vec(&sorted)?;
    // data must start 8-byte aligned; pad with spaces as the format allows
    while text.len() % 8 != 0 {
        text.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

/// Reads the header, validates format and config, then assigns weights.
/// `expected_classes`, when given, must match the stored config.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_classes: Option<usize>) -> Result<VaeUnet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no metadata header", path.display())))?;
    match meta.get("format") {
        Some(f) if f == CHECKPOINT_FORMAT => {}
        other => return Err(Error::Checkpoint(format!("unexpected format tag {other:?}"))),
    }
    match meta.get("version") {
        Some(v) if v == CHECKPOINT_VERSION => {}
        other => return Err(Error::Checkpoint(format!("unsupported version {other:?}"))),
    }
    let cfg_text = meta
        .get("model_config")
        .ok_or_else(|| Error::Checkpoint("missing model_config".into()))?;
    let cfg = ModelConfig::from_toml(cfg_text)?;
    if let Some(k) = expected_classes {
        if k != cfg.class_count {
            return Err(Error::Checkpoint(format!(
                "checkpoint predicts {} classes, data needs {k}",
                cfg.class_count
            )));
        }
    }

    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let dtype = tensors.values().next().map(|t| t.dtype()).unwrap_or(DType::F32);
    let model = VaeUnet::with_dtype(cfg, 0, dtype, Device::Cpu)?;
    let expected: Vec<&String> = model.params().iter().map(|(n, _)| n).collect();
    if expected.len() != tensors.len() || expected.iter().any(|n| !tensors.contains_key(n.as_str())) {
        let mut missing: Vec<_> = expected
            .iter()
            .filter(|n| !tensors.contains_key(n.as_str()))
            .map(|n| n.as_str())
            .collect();
        missing.truncate(5);
        return Err(Error::Checkpoint(format!(
            "parameter set mismatch: {} stored, {} expected; missing e.g. {missing:?}",
            tensors.len(),
            expected.len()
        )));
    }
    for (name, t) in &tensors {
        model.params().assign(name, t)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let m = VaeUnet::new(ModelConfig::toy(), 3).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path, Some(2)).unwrap();
        assert_eq!(back.config(), m.config());
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn saving_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let m = VaeUnet::new(ModelConfig::toy(), 3).unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        save_checkpoint(&m, &a).unwrap();
        save_checkpoint(&m, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn class_count_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        save_checkpoint(&VaeUnet::new(ModelConfig::toy(), 0).unwrap(), &path).unwrap();
        assert!(matches!(load_checkpoint(&path, Some(5)), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn foreign_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        let t = candle_core::Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap();
        safetensors::serialize_to_file([("a", &t)], None, &path).unwrap();
        assert!(load_checkpoint(&path, None).is_err());
    }
}

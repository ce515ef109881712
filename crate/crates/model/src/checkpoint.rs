//! Versioned checkpoint container: named `f32` tensors plus string metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{ModelError, Result};
use crate::evalsuite::{EncoderConfig, FeatureEncoder};
use crate::netcore::{Denoiser, ModelConfig};
use crate::params::ParamStore;

pub const FORMAT: &str = "mpgen-checkpoint";
pub const VERSION: &str = "1";

/// Metadata keys written by [`save`].
pub const KEY_FORMAT: &str = "format";
pub const KEY_VERSION: &str = "version";
pub const KEY_KIND: &str = "kind";
pub const KEY_FROZEN: &str = "frozen";

pub fn to_bytes(kind: &str, meta: &BTreeMap<String, String>, params: &ParamStore) -> Result<Vec<u8>> {
    let mut header: HashMap<String, String> = meta.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    header.insert(KEY_FORMAT.into(), FORMAT.into());
    header.insert(KEY_VERSION.into(), VERSION.into());
    header.insert(KEY_KIND.into(), kind.into());
    let frozen: Vec<&String> = params.frozen().iter().collect();
    header.insert(KEY_FROZEN.into(), serde_json::to_string(&frozen).map_err(|e| ModelError::Checkpoint(e.to_string()))?);
    let mut buffers = Vec::new();
    for (name, var) in params.iter() {
        let t = var.as_tensor();
        let values = t.flatten_all()?.to_vec1::<f32>()?;
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.to_owned(), t.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| ModelError::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, Some(header)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    sort_header(bytes)
}

/// Rewrites the JSON header with sorted keys so equal contents give equal
/// bytes regardless of hash-map iteration order.
fn sort_header(mut bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = |e: &dyn std::fmt::Display| ModelError::Checkpoint(e.to_string());
    let len = u64::from_le_bytes(bytes[..8].try_into().map_err(|e| bad(&e))?) as usize;
    let raw = std::str::from_utf8(&bytes[8..8 + len]).map_err(|e| bad(&e))?;
    let body = raw.trim_end_matches(' ');
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| bad(&e))?;
    let sorted = serde_json::to_string(&value).map_err(|e| bad(&e))?;
    if sorted.len() != body.len() {
        return Err(ModelError::Checkpoint("header changed length when sorted".into()));
    }
    bytes[8..8 + sorted.len()].copy_from_slice(sorted.as_bytes());
    Ok(bytes)
}

/// Parsed container: metadata and a parameter store (frozen set restored).
pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<(BTreeMap<String, String>, ParamStore)> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let meta: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
    if meta.get(KEY_FORMAT).map(String::as_str) != Some(FORMAT) {
        return Err(ModelError::Checkpoint("not a checkpoint container".into()));
    }
    let version = meta.get(KEY_VERSION).map(String::as_str).unwrap_or("");
    if version.split('.').next() != Some(VERSION) {
        return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version:?}")));
    }
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut params = ParamStore::new(device, 0);
    let mut names = tensors.names();
    names.sort();
    for name in names {
        let view = tensors.tensor(name).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if view.dtype() != Dtype::F32 {
            return Err(ModelError::Checkpoint(format!("{name}: expected f32")));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, &Tensor::from_vec(values, view.shape(), device)?)?;
    }
    let frozen: Vec<String> = match meta.get(KEY_FROZEN) {
        Some(s) => serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        None => Vec::new(),
    };
    params.set_frozen(frozen);
    Ok((meta, params))
}

pub fn save(path: &Path, kind: &str, meta: &BTreeMap<String, String>, params: &ParamStore) -> Result<()> {
    std::fs::write(path, to_bytes(kind, meta, params)?)?;
    Ok(())
}

pub fn load(path: &Path, device: &Device) -> Result<(BTreeMap<String, String>, ParamStore)> {
    from_bytes(&std::fs::read(path)?, device)
}

pub const DENOISER_KIND: &str = "denoiser";

impl Denoiser {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = BTreeMap::new();
        meta.insert(
            "config".to_owned(),
            serde_json::to_string(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        );
        meta.insert("stage".to_owned(), self.stage().to_string());
        to_bytes(DENOISER_KIND, &meta, &self.params)
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let (meta, params) = from_bytes(bytes, device)?;
        if meta.get(KEY_KIND).map(String::as_str) != Some(DENOISER_KIND) {
            return Err(ModelError::Checkpoint("checkpoint does not hold a denoiser".into()));
        }
        let config: ModelConfig = serde_json::from_str(meta.get("config").map(String::as_str).unwrap_or(""))
            .map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
        let model = Denoiser { config, params };
        check_shapes(&model.params, &Denoiser::new(model.config.clone(), 0, device)?.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, device)
    }

    /// 1 for pose-only models, 2 otherwise.
    pub fn stage(&self) -> u8 {
        match self.config.layout {
            crate::netcore::Layout::Pose => 1,
            _ => 2,
        }
    }
}

fn check_shapes(loaded: &ParamStore, reference: &ParamStore) -> Result<()> {
    for name in reference.names() {
        let expected = reference.var(name).map(|v| v.dims().to_vec());
        if loaded.var(name).map(|v| v.dims().to_vec()) != expected {
            return Err(ModelError::Checkpoint(format!("parameter {name} missing or misshapen")));
        }
    }
    Ok(())
}

pub const ENCODER_KIND: &str = "feature-encoder";

impl FeatureEncoder {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = BTreeMap::new();
        meta.insert(
            "config".to_owned(),
            serde_json::to_string(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        );
        to_bytes(ENCODER_KIND, &meta, &self.params)
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let (meta, params) = from_bytes(bytes, device)?;
        if meta.get(KEY_KIND).map(String::as_str) != Some(ENCODER_KIND) {
            return Err(ModelError::Checkpoint("checkpoint does not hold a feature encoder".into()));
        }
        let config: EncoderConfig = serde_json::from_str(meta.get("config").map(String::as_str).unwrap_or(""))
            .map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
        check_shapes(&params, &FeatureEncoder::new(config.clone(), 0, device)?.params)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, device)
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutoencoderModel, Layer, ModelMeta};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "skywatch-autoencoder";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    metadata: ModelMeta,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct Envelope {
    format: Option<String>,
    version: Option<u32>,
}

pub fn model_to_json(model: &AutoencoderModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        metadata: model.meta.clone(),
        layers: model.layers.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<AutoencoderModel> {
    let env: Envelope =
        serde_json::from_str(text).map_err(|e| Error::Model(format!("corrupt model file: {e}")))?;
    if env.format.as_deref() != Some(MODEL_FORMAT) {
        return Err(Error::Model(format!(
            "not a model file (format {:?})",
            env.format.unwrap_or_default()
        )));
    }
    if env.version != Some(MODEL_VERSION) {
        return Err(Error::Model(format!(
            "unsupported model version {:?}, expected {MODEL_VERSION}",
            env.version
        )));
    }
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Model(format!("corrupt model file: {e}")))?;
    AutoencoderModel::from_parts(file.metadata, file.layers)
}

/// Writes through a temporary file and renames into place.
pub fn save_model(model: &AutoencoderModel, path: &Path) -> Result<()> {
    crate::write_atomic(path, model_to_json(model)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<AutoencoderModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

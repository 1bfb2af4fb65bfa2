use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable naming a directory of locally installed checkpoints
/// (`$VERBKIT_MODEL_DIR/<name>/{config.json,model.safetensors,tokenizer.json}`).
pub const MODEL_DIR_ENV: &str = "VERBKIT_MODEL_DIR";

/// Files making up a masked-LM checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointFiles {
    pub config: PathBuf,
    pub weights: PathBuf,
    pub tokenizer: PathBuf,
}

impl CheckpointFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Option<Self> {
        let dir = dir.as_ref();
        let files = Self {
            config: dir.join("config.json"),
            weights: dir.join("model.safetensors"),
            tokenizer: dir.join("tokenizer.json"),
        };
        (files.config.is_file() && files.weights.is_file() && files.tokenizer.is_file())
            .then_some(files)
    }
}

/// Resolves a checkpoint name to local files.
///
/// Lookup order: `name` as a directory path, `$VERBKIT_MODEL_DIR/name`, then the
/// Hugging Face hub (which consults its local cache before downloading).
pub fn resolve_checkpoint(name: &str) -> Result<CheckpointFiles> {
    if let Some(files) = CheckpointFiles::in_dir(name) {
        return Ok(files);
    }
    if let Ok(root) = std::env::var(MODEL_DIR_ENV) {
        if let Some(files) = CheckpointFiles::in_dir(Path::new(&root).join(name)) {
            return Ok(files);
        }
    }
    let not_found = |e: hf_hub::api::sync::ApiError| {
        Error::Argument(format!(
            "checkpoint {name:?} is neither a local directory nor under ${MODEL_DIR_ENV}, \
             and could not be fetched from the hub: {e}"
        ))
    };
    let api = hf_hub::api::sync::Api::new().map_err(not_found)?;
    let repo = api.model(name.to_string());
    Ok(CheckpointFiles {
        config: repo.get("config.json").map_err(not_found)?,
        weights: repo.get("model.safetensors").map_err(not_found)?,
        tokenizer: repo.get("tokenizer.json").map_err(not_found)?,
    })
}

//! Model checkpoints as JSON. Floats are written in shortest round-trip
//! form, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use attnop_core::models::Normalizer;
use attnop_core::{ModelConfig, ModelParameters};
use serde::{Deserialize, Serialize};

use crate::config::parse_json;
use crate::error::{CliError, CliResult};

const FORMAT: &str = "attnop-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    normalizer: Option<Normalizer>,
    parameters: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, model: &ModelParameters) -> CliResult<()> {
    let c = Checkpoint {
        format: FORMAT.into(),
        version: 1,
        config: model.config().clone(),
        normalizer: model.normalizer().cloned(),
        parameters: model.flatten().to_vec(),
    };
    if c.parameters.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("refusing to checkpoint non-finite parameters".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string(&c).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> CliResult<ModelParameters> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let c: Checkpoint = parse_json(&text)?;
    if c.format != FORMAT || c.version != 1 {
        return Err(CliError::Config(format!("{}: not a version 1 checkpoint", path.display())));
    }
    let mut m = ModelParameters::from_flat(c.config, c.parameters)?;
    m.set_normalizer(c.normalizer);
    Ok(m)
}

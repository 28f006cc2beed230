//! Config file loading and effective-config echo.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use srtriage::pipeline::PipelineConfig;

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

/// Reads a TOML or JSON config; the format follows the file extension,
/// anything other than `.json` is parsed as TOML.
pub fn load(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
    };
    Ok(cfg)
}

/// Writes the resolved config next to a command's outputs.
pub fn echo(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(EFFECTIVE_CONFIG), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

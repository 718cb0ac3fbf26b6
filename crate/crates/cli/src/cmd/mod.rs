pub mod filter;
pub mod mix;
pub mod model;
pub mod stats;

use std::path::Path;

use forge_core::model::{ModelConfig, TrainConfig};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::io::read_json;

/// Parse a non-negative integer count, accepting scientific notation such as
/// `4.05e12` as long as it names a whole number that fits in 64 bits.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !x.is_finite() || x < 0.0 || x.fract() != 0.0 || x >= 18_446_744_073_709_551_616.0 {
        return Err(format!("'{s}' is not a whole number in 0..2^64"));
    }
    Ok(x as u64)
}

pub fn parse_usize(s: &str) -> Result<usize, String> {
    let v = parse_count(s)?;
    usize::try_from(v).map_err(|_| format!("'{s}' is too large"))
}

/// Model settings plus optional training settings. Config files either hold
/// a bare model config or `{"model": {...}, "train": {...}}`.
#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let value: Value = read_json(path)?;
    let invalid = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    let cfg = if value.get("model").is_some() {
        serde_json::from_value(value).map_err(invalid)?
    } else {
        RunConfig {
            model: serde_json::from_value(value).map_err(invalid)?,
            train: TrainConfig::default(),
        }
    };
    cfg.model.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(parse_count("4.05e12"), Ok(4_050_000_000_000));
        assert_eq!(parse_count("18446744073709551615"), Ok(u64::MAX));
        assert_eq!(parse_count("1e3"), Ok(1000));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-1").is_err());
        assert!(parse_count("1e20").is_err());
        assert!(parse_count("abc").is_err());
    }
}

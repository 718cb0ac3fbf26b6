use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::io::create;

/// Record of one invocation: what ran, with which resolved settings, on which
/// files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_secs: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, args: &impl Serialize) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                config: serde_json::json!({ "args": args }),
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_time_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.to_path_buf());
        self
    }

    /// Attach the configuration the command actually ran with.
    pub fn resolved(&mut self, value: &impl Serialize) -> &mut Self {
        if let Value::Object(map) = &mut self.manifest.config {
            map.insert(
                "resolved".into(),
                serde_json::to_value(value).unwrap_or(Value::Null),
            );
        }
        self
    }

    /// Write the manifest to `explicit`, else next to the first output
    /// file, else as one JSON line on stderr.
    pub fn write(mut self, explicit: Option<&Path>) -> Result<()> {
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        let target = explicit
            .map(Path::to_path_buf)
            .or_else(|| self.manifest.outputs.first().map(|p| manifest_path(p)));
        match target {
            Some(path) => {
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &self.manifest)
                    .map_err(|e| CliError::io(&path)(e.into()))?;
                writeln!(w)
                    .and_then(|_| w.flush())
                    .map_err(CliError::io(&path))
            }
            None => {
                let line = serde_json::to_string(&self.manifest)
                    .map_err(|e| CliError::io("<stderr>")(e.into()))?;
                eprintln!("{line}");
                Ok(())
            }
        }
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

//! The record written next to every run's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let hash = Sha256::digest(&bytes);
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Wall-clock information. It is the only part of the output that changes
/// between repeated runs with the same seed.
#[derive(Serialize)]
pub struct Timing {
    pub started: String,
    pub finished: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub sections: BTreeMap<String, f64>,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub master_seed: u64,
    pub settings: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timing: Timing,
}

/// Tracks inputs, outputs and timing for one invocation.
pub struct Run {
    pub out_dir: PathBuf,
    subcommand: String,
    started: chrono::DateTime<chrono::Utc>,
    clock: std::time::Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub sections: BTreeMap<String, f64>,
}

impl Run {
    pub fn start(subcommand: &str, out_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_owned(),
            subcommand: subcommand.to_owned(),
            started: chrono::Utc::now(),
            clock: std::time::Instant::now(),
            inputs: vec![],
            outputs: vec![],
            sections: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_owned());
    }

    /// Path for a named output file, registered for the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn finish(self, master_seed: u64, settings: BTreeMap<String, serde_json::Value>) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            master_seed,
            settings,
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            timing: Timing {
                started: self.started.to_rfc3339(),
                finished: chrono::Utc::now().to_rfc3339(),
                seconds: self.clock.elapsed().as_secs_f64(),
                sections: self.sections,
            },
        };
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

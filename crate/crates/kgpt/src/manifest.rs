//! Run manifests written next to every output artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Full command line, program name excluded.
    pub args: Vec<String>,
    /// Effective configuration after applying defaults, config file and flags.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub tool_version: String,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, args: &[String]) -> Self {
        Self {
            subcommand: subcommand.into(),
            args: args.to_vec(),
            config: serde_json::Value::Null,
            seed: None,
            threads: 1,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_time_secs: 0.0,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.into(), path.into());
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.into(), path.into());
    }

    /// `<artifact>.manifest.json`
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        artifact.with_file_name(name)
    }

    /// Writes one copy next to each output.
    pub fn write_all(&self) -> Result<(), CliError> {
        for path in self.outputs.values() {
            io::write_json(&Self::path_for(path), self)?;
        }
        Ok(())
    }
}

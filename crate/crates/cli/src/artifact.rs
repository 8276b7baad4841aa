//! Provenance stamped on every output file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &str, seed: u64, config: &T) -> Self {
        let config = serde_json::to_value(config).expect("run config serializes");
        Self {
            command: command.to_string(),
            config_hash: config_hash(&config),
            code_version: CODE_VERSION.to_string(),
            seed,
            config,
        }
    }

    /// One-line form for the comment header of text outputs.
    pub fn comment(&self) -> String {
        format!(
            "# command={} config_hash={} code_version={} seed={}",
            self.command, self.config_hash, self.code_version, self.seed
        )
    }
}

pub fn config_hash(config: &serde_json::Value) -> String {
    // serde_json maps are ordered, so the text is canonical.
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// A report body together with its provenance.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(
    path: &Path,
    provenance: &Provenance,
    body: &T,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text =
        serde_json::to_string_pretty(&Stamped { provenance, body }).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

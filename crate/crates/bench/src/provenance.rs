//! Run metadata attached to every report.

use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    /// Absent for runs that use no residual model.
    pub model_hash: Option<String>,
    pub git_describe: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(seed: u64, config_text: &str, model_bytes: Option<&[u8]>) -> Self {
        Provenance {
            seed,
            config_hash: sha256_hex(config_text.as_bytes()),
            model_hash: model_bytes.map(sha256_hex),
            git_describe: git_describe(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `git describe --always --dirty` of the source tree, or "unknown".
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

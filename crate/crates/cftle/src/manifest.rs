use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::io::write_json;

/// SHA-256 of the resolved configuration (defaults filled in), hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub cftle: &'static str,
    pub cftle_core: &'static str,
    pub field_format: u32,
    pub policy_format: u32,
}

pub fn versions() -> Versions {
    Versions {
        cftle: env!("CARGO_PKG_VERSION"),
        cftle_core: cftle_core::VERSION,
        field_format: crate::fieldfile::FIELD_FORMAT_VERSION,
        policy_format: crate::policyfile::POLICY_FORMAT_VERSION,
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config_path: Option<&'a Path>,
    pub config_hash: &'a str,
    pub config: &'a RunConfig,
    pub versions: Versions,
    pub threads: usize,
    pub seedless: bool,
    /// This program draws no random numbers; listed for auditing.
    pub random_sources: Vec<String>,
    pub started_unix_s: f64,
    pub wall_time_s: f64,
    pub status: &'a str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub warnings: &'a [String],
    pub outputs: &'a [PathBuf],
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn write_manifest(dir: &Path, m: &Manifest<'_>) -> CliResult<PathBuf> {
    let path = dir.join(format!("{}.manifest.json", m.command));
    write_json(&path, m)?;
    Ok(path)
}

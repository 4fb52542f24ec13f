//! Run records: config echo, input hashes, timing and the typed payload.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const RECORD_SCHEMA: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Status {
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    /// SHA-256 of every file read, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub timing: Timing,
    pub status: Status,
    pub payload: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Paths named by `file:` parts of a metric spec.
pub fn metric_files(spec: &str) -> Vec<&str> {
    spec.split('+')
        .filter_map(|p| p.trim().strip_prefix("file:"))
        .collect()
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("record serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Writes the record to `out`, or to stdout.
pub fn emit(record: &RunRecord, out: Option<&Path>) -> Result<(), CliError> {
    let text = to_json(record);
    match out {
        Some(p) => write_file(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}"))),
    }
}

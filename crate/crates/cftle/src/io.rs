//! Shared framing for field and policy files: a one-line JSON header, the
//! marker line, then little-endian f64 values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CliError, CliResult};

pub const MARKER: &[u8] = b"---BINARY---\n";

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let name = path.file_name().ok_or_else(|| CliError::io(path, "not a file path"))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn encode(header_json: &str, values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_json.len() + 1 + MARKER.len());
    out.extend_from_slice(header_json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(MARKER);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits a file into its header text and payload values.
pub fn decode<'a>(path: &Path, bytes: &'a [u8]) -> CliResult<(&'a str, Vec<f64>)> {
    let sep: Vec<u8> = [b"\n".as_slice(), MARKER].concat();
    let pos = bytes
        .windows(sep.len())
        .position(|w| w == sep.as_slice())
        .ok_or_else(|| CliError::io(path, "missing ---BINARY--- marker line"))?;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| CliError::io(path, "header is not UTF-8"))?;
    let payload = &bytes[pos + sep.len()..];
    if !payload.len().is_multiple_of(8) {
        return Err(CliError::io(path, format!("payload of {} bytes is not a whole number of f64 values", payload.len())));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

//! Scalar fields on disk.

use std::path::Path;

use cftle_core::{DomainBox, GridSpec, ScalarField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io;

pub const FIELD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub format_version: u32,
    pub quantity: String,
    pub nx: usize,
    pub ny: usize,
    /// `[x_min, x_max, y_min, y_max]`
    pub domain: [f64; 4],
    pub t0: Option<f64>,
    pub t_a: Option<f64>,
    pub config_hash: String,
    /// Nodes holding a non-finite value.
    pub invalid_count: usize,
}

impl FieldHeader {
    pub fn new(quantity: &str, field: &ScalarField, t0: Option<f64>, t_a: Option<f64>, config_hash: &str) -> Self {
        let d = field.grid.domain;
        FieldHeader {
            format_version: FIELD_FORMAT_VERSION,
            quantity: quantity.to_owned(),
            nx: field.grid.nx,
            ny: field.grid.ny,
            domain: [d.x_min, d.x_max, d.y_min, d.y_max],
            t0,
            t_a,
            config_hash: config_hash.to_owned(),
            invalid_count: field.values.len() - field.valid_count(),
        }
    }
}

pub fn encode_field(header: &FieldHeader, field: &ScalarField) -> Vec<u8> {
    let json = serde_json::to_string(header).expect("field header serializes");
    io::encode(&json, field.values.iter().copied())
}

pub fn write_field(path: &Path, header: &FieldHeader, field: &ScalarField) -> CliResult<()> {
    io::write_atomic(path, &encode_field(header, field))
}

pub fn decode_field(path: &Path, bytes: &[u8]) -> CliResult<(FieldHeader, ScalarField)> {
    let (text, values) = io::decode(path, bytes)?;
    let header: FieldHeader =
        serde_json::from_str(text).map_err(|e| CliError::io(path, format!("malformed field header: {e}")))?;
    if header.format_version != FIELD_FORMAT_VERSION {
        return Err(CliError::io(path, format!("unsupported field format version {}", header.format_version)));
    }
    let [a, b, c, d] = header.domain;
    let grid = DomainBox::new(a, b, c, d)
        .and_then(|dom| GridSpec::new(dom, header.nx, header.ny))
        .map_err(|e| CliError::io(path, format!("invalid grid in header: {e}")))?;
    if values.len() != grid.len() {
        return Err(CliError::io(
            path,
            format!("payload holds {} values but the header declares {}x{} = {}", values.len(), header.nx, header.ny, grid.len()),
        ));
    }
    let field = ScalarField::new(grid, values).map_err(|e| CliError::io(path, e))?;
    Ok((header, field))
}

pub fn read_field(path: &Path) -> CliResult<(FieldHeader, ScalarField)> {
    decode_field(path, &io::read(path)?)
}

/// Stores a boolean mask as a 0/1 field.
pub fn mask_to_field(grid: GridSpec, mask: &[bool]) -> ScalarField {
    ScalarField::new(grid, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()).expect("mask matches grid")
}

pub fn field_to_mask(field: &ScalarField) -> Vec<bool> {
    field.values.iter().map(|&v| v != 0.0 && v.is_finite()).collect()
}

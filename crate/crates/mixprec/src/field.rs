//! Flat binary field export with a JSON sidecar.
//!
//! The payload is every value as little-endian binary64 in storage order
//! (element-local, i fastest), regardless of the width the solve ran at; the
//! sidecar records the mesh extent and the storage width the values came
//! from, so a truncated f32 solve is distinguishable from a full-width one.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mesh::MeshSpec;

/// Values to export: whichever storage width the solve used.
#[derive(Clone, Copy, Debug)]
pub enum FieldValues<'a> {
    F64(&'a [f64]),
    F32(&'a [f32]),
}

impl FieldValues<'_> {
    pub fn len(&self) -> usize {
        match self {
            FieldValues::F64(v) => v.len(),
            FieldValues::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Storage width in bytes.
    pub fn width(&self) -> u32 {
        match self {
            FieldValues::F64(_) => 8,
            FieldValues::F32(_) => 4,
        }
    }
}

/// Sidecar schema, written as `<payload path>.json`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    /// Element count.
    #[serde(rename = "E")]
    pub e: u64,
    /// Nodes per element edge.
    pub nx1: u32,
    /// Storage width of the producing solve in bytes (4 or 8).
    pub width: u32,
}

/// Writes `path` (binary64 little-endian) and `path.json` (sidecar).
pub fn export_field(path: &Path, values: FieldValues<'_>, spec: &MeshSpec) -> Result<()> {
    debug_assert_eq!(values.len(), spec.npts());
    let mut payload = Vec::with_capacity(values.len() * 8);
    match values {
        FieldValues::F64(v) => {
            for &x in v {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        FieldValues::F32(v) => {
            for &x in v {
                payload.extend_from_slice(&(x as f64).to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&payload)?;

    let sidecar = FieldSidecar {
        e: spec.nel() as u64,
        nx1: spec.nx1,
        width: values.width(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a payload and its sidecar back.
pub fn import_field(path: &Path) -> Result<(Vec<f64>, FieldSidecar)> {
    let bytes = fs::read(path)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sidecar: FieldSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    Ok((values, sidecar))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

//! Raw little-endian field dumps with a JSON sidecar.
//!
//! Values are stored in natural flat order (axis 0 slowest), interleaved
//! `re, im`. Spectra are stored in natural FFT order: position `k` on an
//! axis holds frequency `k` for `k < N/2` and `k - N` otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Complex64,
    Complex128,
}

impl Dtype {
    fn bytes_per_value(self) -> usize {
        match self {
            Dtype::Complex64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Space samples `x_j = -X + j h`.
    Spatial,
    /// Spectrum in natural FFT order.
    SpectralNatural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
    pub dtype: Dtype,
    pub layout: Layout,
    pub order: String,
    pub endianness: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `field` to `path` and its description to `path.json`.
pub fn write_field(path: &Path, field: &Field, dtype: Dtype, layout: Layout) -> Result<()> {
    let g = field.grid();
    let mut bytes = Vec::with_capacity(field.len() * dtype.bytes_per_value());
    for v in field.values() {
        match dtype {
            Dtype::Complex64 => {
                bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
                bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
            Dtype::Complex128 => {
                bytes.extend_from_slice(&v.re.to_le_bytes());
                bytes.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    fs::write(path, bytes)?;
    let side = Sidecar {
        dim: g.dim(),
        n: g.points_per_axis(),
        half_width: g.half_width(),
        dtype,
        layout,
        order: "row-major, axis 0 slowest, interleaved re/im".into(),
        endianness: "little".into(),
    };
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a field written by [`write_field`].
pub fn read_field(path: &Path) -> Result<(Field, Sidecar)> {
    let text = fs::read_to_string(sidecar_path(path))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Io(format!("sidecar: {e}")))?;
    let grid = Grid::new(side.dim, side.n, side.half_width)?;
    let bytes = fs::read(path)?;
    let width = side.dtype.bytes_per_value();
    if bytes.len() != grid.len() * width {
        return Err(Error::Io(format!(
            "expected {} bytes, found {}",
            grid.len() * width,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(width)
        .map(|c| match side.dtype {
            Dtype::Complex64 => Complex64::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
            ),
            Dtype::Complex128 => Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            ),
        })
        .collect();
    Ok((Field::new(grid, values)?, side))
}

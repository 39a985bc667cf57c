//! Closed-form parameter counts and evaluation costs.
//!
//! Biases are not counted. `k_max` is the number of retained Fourier modes
//! (complex entries per channel pair), `L` the number of layers, and all
//! logarithms are base two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchRow {
    Fno,
    Afno,
    Tno,
    Vitno,
    Fano,
}

impl ArchRow {
    pub const ALL: [ArchRow; 5] = [ArchRow::Fno, ArchRow::Afno, ArchRow::Tno, ArchRow::Vitno, ArchRow::Fano];

    pub fn name(self) -> &'static str {
        match self {
            ArchRow::Fno => "fno",
            ArchRow::Afno => "afno",
            ArchRow::Tno => "tno",
            ArchRow::Vitno => "vitno",
            ArchRow::Fano => "fano",
        }
    }

    /// Layer count used when none is given.
    pub fn default_layers(self) -> usize {
        match self {
            ArchRow::Fno | ArchRow::Afno => 4,
            _ => 6,
        }
    }
}

impl fmt::Display for ArchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchRow::ALL
            .into_iter()
            .find(|r| r.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown architecture row `{s}`")))
    }
}

fn one() -> usize {
    1
}

fn eight() -> usize {
    8
}

fn d_fno_default() -> usize {
    128
}

/// Hyperparameters of one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    pub row: ArchRow,
    pub d_u: usize,
    /// Spatial dimension.
    pub d: usize,
    pub d_z: usize,
    pub d_model: usize,
    #[serde(default)]
    pub k_max: usize,
    #[serde(default = "one")]
    pub n_patches: usize,
    /// AFNO block count.
    #[serde(default = "eight")]
    pub b: usize,
    /// Width of the FNO lifting and projection networks.
    #[serde(default = "d_fno_default")]
    pub d_fno: usize,
    #[serde(default)]
    pub n_layers: Option<usize>,
    /// Grid size, needed by the AFNO parameter count.
    #[serde(default)]
    pub n_points: Option<usize>,
}

impl ComplexityConfig {
    pub fn new(row: ArchRow, d_u: usize, d: usize, d_z: usize, d_model: usize) -> Self {
        Self { row, d_u, d, d_z, d_model, k_max: 0, n_patches: 1, b: 8, d_fno: 128, n_layers: None, n_points: None }
    }

    pub fn layers(&self) -> usize {
        self.n_layers.unwrap_or(self.row.default_layers())
    }
}

/// Parameter count from the closed form for the row.
pub fn count_params_formula(c: &ComplexityConfig) -> Result<u64> {
    let (du, d, dz, dm, k) = (c.d_u as u64, c.d as u64, c.d_z as u64, c.d_model as u64, c.k_max as u64);
    let l = c.layers() as u64;
    Ok(match c.row {
        ArchRow::Fno => {
            let f = c.d_fno as u64;
            (du + d) * f + 2 * f * dm + f * dz + l * (dm * dm * k + dm * dm)
        }
        ArchRow::Afno => {
            let n = c
                .n_points
                .ok_or_else(|| Error::InvalidConfig("the AFNO parameter count needs the grid size".into()))?
                as f64;
            if c.b == 0 {
                return Err(Error::InvalidConfig("AFNO block count must be positive".into()));
            }
            let dmf = dm as f64;
            let v = (du + d) as f64 * dmf + n * dmf + dmf * dz as f64
                + l as f64 * (8.0 + 4.0 / c.b as f64) * dmf * dmf;
            v.round() as u64
        }
        ArchRow::Tno => (du + d) * dm + dm * dz + l * (6 * dm * dm + 2 * dm),
        ArchRow::Vitno => (du + d) * dm * k + dm * dz + l * (6 * dm * dm + 2 * dm),
        ArchRow::Fano => (du + d) * dm + dm * dz + l * (3 * dm * dm * k + 3 * dm * dm + 2 * dm),
    })
}

/// Evaluation cost in floating point operations on `n` grid points,
/// rounded to the nearest integer.
pub fn estimate_flops(c: &ComplexityConfig, n: usize) -> Result<u64> {
    if n == 0 {
        return Err(Error::InvalidConfig("the grid must have points".into()));
    }
    let (du, d, dz, dm, k) = (c.d_u as f64, c.d as f64, c.d_z as f64, c.d_model as f64, c.k_max as f64);
    let l = c.layers() as f64;
    let nf = n as f64;
    let p = c.n_patches as f64;
    if c.n_patches == 0 || c.n_patches > n {
        return Err(Error::InvalidConfig(format!("{} patches for {n} points", c.n_patches)));
    }
    let log_sqrt = |x: f64| x.sqrt().log2();
    let v = match c.row {
        ArchRow::Fno => {
            let f = c.d_fno as f64;
            2.0 * nf * (du + d + 2.0 * dm) * f
                + 2.0 * nf * f * dz
                + l * (15.0 * dm * nf * log_sqrt(nf) + k * (2.0 * dm * dm - dm) + 2.0 * nf * dm * dm)
        }
        ArchRow::Tno => {
            2.0 * nf * (du + d) * dm + 2.0 * nf * dm * dz + l * (8.0 * dm * dm * nf + 2.0 * nf * nf * dm + 4.0 * dm * dm * nf)
        }
        ArchRow::Vitno => {
            (du + d + dm) * 15.0 * nf * log_sqrt(nf / p) / 2.0
                + p * k * dm * (2.0 * (du + d) - 1.0)
                + 2.0 * nf * dm * dz
                + l * (8.0 * dm * dm * nf + 2.0 * dm * nf * p + 4.0 * dm * dm * nf)
        }
        ArchRow::Fano => {
            2.0 * nf * (du + d) * dm
                + 2.0 * nf * dm * dz
                + l * (45.0 * dm * nf * log_sqrt(nf / p)
                    + 3.0 * k * p * (2.0 * dm * dm - dm)
                    + 2.0 * nf * dm * dm
                    + 2.0 * dm * nf * p
                    + 4.0 * nf * dm * dm)
        }
        ArchRow::Afno => {
            if c.b == 0 {
                return Err(Error::InvalidConfig("AFNO block count must be positive".into()));
            }
            2.0 * nf * (du + d) * dm
                + 2.0 * nf * dm * dz
                + l * (16.0 * dm * dm + 15.0 * nf * dm * log_sqrt(nf) + 6.0 * nf * (2.0 * dm * dm / c.b as f64 - dm))
        }
    };
    Ok(v.round() as u64)
}

//! The controlled ODE `dz = sin(z) du` driven by random sine sums.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate_to, sample_rng};
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridSpec, SampledFunction};
use crate::training::{Dataset, Sample};

fn ten() -> usize {
    10
}
fn one() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_max_step() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdeSpec {
    pub n_samples: usize,
    /// Number of sine terms in the driving path.
    #[serde(default = "ten")]
    pub j: usize,
    #[serde(default = "one")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub z0: f64,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

impl CdeSpec {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, j: 10, t_final: 1.0, dt: 0.01, seed, z0: 1.0, max_step: 1e-3 }
    }

    pub fn grid(&self) -> Result<Grid> {
        for (name, v) in [("dt", self.dt), ("t_final", self.t_final), ("max_step", self.max_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("cde {name} must be positive, got {v}")));
            }
        }
        let steps = (self.t_final / self.dt).round() as usize;
        if steps == 0 || ((steps as f64) * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidConfig(format!("dt {} does not divide t_final {}", self.dt, self.t_final)));
        }
        Grid::new(Domain::interval(0.0, self.t_final)?, GridSpec::closed(vec![steps + 1]))
    }
}

/// Solves `z' = sin(z) du(t)` from `z(times[0]) = z0`, returning `z` at
/// every time.
pub fn cde_integrate(du: impl Fn(f64) -> f64, z0: f64, times: &[f64], max_step: f64) -> Vec<f64> {
    let f = |t: f64, z: &[f64; 1]| [z[0].sin() * du(t)];
    let t0 = times.first().copied().unwrap_or(0.0);
    integrate_to(&f, t0, [z0], times, max_step).into_iter().map(|z| z[0]).collect()
}

/// Paths `u(t) = sum_j xi_j sin(pi eta_j t)` and the solutions they drive.
pub fn cde_dataset(spec: &CdeSpec) -> Result<Dataset> {
    let grid = spec.grid()?;
    let times = grid.axis_coords(0);
    let n = times.len();
    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(spec.seed, i as u64);
            let terms: Vec<(f64, f64)> = (0..spec.j)
                .map(|_| {
                    let xi: f64 = rng.sample(StandardNormal);
                    let eta = rng.random_range(0.0..=spec.j as f64);
                    (xi, PI * eta)
                })
                .collect();
            let u = |t: f64| terms.iter().map(|&(x, w)| x * (w * t).sin()).sum::<f64>();
            let du = |t: f64| terms.iter().map(|&(x, w)| x * w * (w * t).cos()).sum::<f64>();
            let z = cde_integrate(du, spec.z0, &times, spec.max_step);
            let input = SampledFunction::new(grid.clone(), Array2::from_shape_fn((n, 1), |(r, _)| u(times[r])))?;
            let target = SampledFunction::new(grid.clone(), Array2::from_shape_fn((n, 1), |(r, _)| z[r]))?;
            Sample::new(input, target, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_drive_matches_closed_form() {
        // With u(t) = t the equation is z' = sin z, solved by tan(z/2) = e^t tan(z0/2).
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let z = cde_integrate(|_| 1.0, PI / 2.0, &times, 1e-3);
        let exact = 2.0 * std::f64::consts::E.atan();
        assert!((z[100] - exact).abs() < 1e-12, "{}", z[100] - exact);
        assert!((exact - 2.436566).abs() < 1e-6);
        for (t, v) in times.iter().zip(&z) {
            assert!((v - 2.0 * (t.exp() * (PI / 4.0).tan()).atan()).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_drives_and_fixed_points() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert!(cde_integrate(|_| 0.0, 1.3, &times, 1e-2).iter().all(|&z| z == 1.3));
        assert!(cde_integrate(|t| (3.0 * t).cos() * 5.0, 0.0, &times, 1e-2).iter().all(|&z| z == 0.0));
        let spec = CdeSpec { z0: 0.0, ..CdeSpec::new(2, 1) };
        let d = cde_dataset(&spec).unwrap();
        assert!(d.samples().iter().all(|s| s.target.values().iter().all(|&z| z == 0.0)));
    }

    #[test]
    fn dataset_is_deterministic_and_starts_at_z0() {
        let spec = CdeSpec::new(3, 5);
        let d = cde_dataset(&spec).unwrap();
        assert_eq!(d, cde_dataset(&spec).unwrap());
        assert_ne!(d, cde_dataset(&CdeSpec::new(3, 6)).unwrap());
        for s in d.samples() {
            assert_eq!(s.input.values().dim(), (101, 1));
            assert_eq!(s.input.values()[[0, 0]], 0.0);
            assert_eq!(s.target.values()[[0, 0]], 1.0);
        }
    }
}

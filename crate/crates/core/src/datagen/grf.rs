//! Gaussian random fields on the unit square with Neumann eigenfunctions.

use std::f64::consts::{PI, SQRT_2};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sample_rng;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, SampledFunction};
use crate::spectral::nyquist_limit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PushForward {
    None,
    Exp,
    /// `hi` where the field is non-negative, `lo` elsewhere.
    PiecewiseConstant { hi: f64, lo: f64 },
}

impl Default for PushForward {
    fn default() -> Self {
        PushForward::Exp
    }
}

impl PushForward {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            PushForward::None => v,
            PushForward::Exp => v.exp(),
            PushForward::PiecewiseConstant { hi, lo } => {
                if v >= 0.0 {
                    hi
                } else {
                    lo
                }
            }
        }
    }

    pub fn piecewise_default() -> Self {
        PushForward::PiecewiseConstant { hi: 12.0, lo: 3.0 }
    }
}

fn amplitude() -> f64 {
    144.0
}
fn shift() -> f64 {
    36.0
}
fn exponent() -> f64 {
    2.0
}

/// Covariance `amplitude (-Laplacian + shift)^(-exponent)` truncated to
/// modes `0 <= k_i <= truncation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    #[serde(default = "amplitude")]
    pub amplitude: f64,
    #[serde(default = "shift")]
    pub shift: f64,
    #[serde(default = "exponent")]
    pub exponent: f64,
    /// Per-axis mode cutoff; the grid's Nyquist limit when absent.
    #[serde(default)]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub push_forward: PushForward,
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self { amplitude: amplitude(), shift: shift(), exponent: exponent(), truncation: None, push_forward: PushForward::Exp }
    }
}

impl GrfSpec {
    pub fn with_push_forward(push_forward: PushForward) -> Self {
        Self { push_forward, ..Self::default() }
    }

    pub fn eigenvalue(&self, k1: usize, k2: usize) -> f64 {
        let k2sum = (k1 * k1 + k2 * k2) as f64;
        self.amplitude * (PI * PI * k2sum + self.shift).powf(-self.exponent)
    }

    fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.shift > 0.0 && self.exponent > 0.0) {
            return Err(Error::InvalidConfig("covariance parameters must be positive".into()));
        }
        if self.truncation == Some(0) {
            return Err(Error::InvalidConfig("truncation must be at least 1".into()));
        }
        Ok(())
    }

    fn cutoff(&self, grid: &Grid) -> Result<usize> {
        self.validate()?;
        let unit = grid.dim() == 2 && grid.domain().bounds().iter().all(|&(a, b)| a == 0.0 && b == 1.0);
        let shape = match grid.spec() {
            GridSpec::Uniform { shape, .. } if unit => shape,
            _ => return Err(Error::InvalidGrid("random fields need a uniform grid on the unit square".into())),
        };
        Ok(self.truncation.unwrap_or_else(|| nyquist_limit(*shape.iter().min().unwrap()).max(1)))
    }
}

/// `phi_k(x)` along one axis; unit-norm in L2(0, 1).
fn basis(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        SQRT_2 * (PI * k as f64 * x).cos()
    }
}

fn basis_matrix(coords: &[f64], kmax: usize) -> Array2<f64> {
    Array2::from_shape_fn((coords.len(), kmax + 1), |(i, k)| basis(k, coords[i]))
}

/// One draw, push-forward applied. Each mode has its own random stream, so
/// a finer grid or a larger cutoff extends the same draw.
pub fn grf_sample(spec: &GrfSpec, grid: &Grid, seed: u64) -> Result<SampledFunction> {
    let kmax = spec.cutoff(grid)?;
    let coeffs = Array2::from_shape_fn((kmax + 1, kmax + 1), |(k1, k2)| {
        if k1 == 0 && k2 == 0 {
            return 0.0;
        }
        let xi: f64 = sample_rng(seed, ((k1 as u64) << 32) | k2 as u64).sample(StandardNormal);
        spec.eigenvalue(k1, k2).sqrt() * xi
    });
    let cx = basis_matrix(&grid.axis_coords(0), kmax);
    let cy = basis_matrix(&grid.axis_coords(1), kmax);
    let field = cx.dot(&coeffs).dot(&cy.t());
    let values = Array2::from_shape_fn((field.len(), 1), |(r, _)| {
        let j = r % field.ncols();
        spec.push_forward.apply(field[[r / field.ncols(), j]])
    });
    SampledFunction::new(grid.clone(), values)
}

/// Variance of the truncated field before the push-forward, at every point.
pub fn grf_pointwise_variance(spec: &GrfSpec, grid: &Grid) -> Result<Vec<f64>> {
    let kmax = spec.cutoff(grid)?;
    let lam = Array2::from_shape_fn((kmax + 1, kmax + 1), |(a, b)| if a + b == 0 { 0.0 } else { spec.eigenvalue(a, b) });
    let sq = |m: Array2<f64>| m.mapv(|v| v * v);
    let cx = sq(basis_matrix(&grid.axis_coords(0), kmax));
    let cy = sq(basis_matrix(&grid.axis_coords(1), kmax));
    Ok(cx.dot(&lam).dot(&cy.t()).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample_seed;
    use crate::grid::Domain;

    fn grid(n: usize) -> Grid {
        Grid::unit_closed(vec![n, n]).unwrap()
    }

    #[test]
    fn eigenvalues_positive() {
        let s = GrfSpec::default();
        assert_eq!(s.eigenvalue(0, 0), 144.0 / 36.0f64.powi(2));
        let e = 144.0 * (5.0 * PI * PI + 36.0).powi(-2);
        assert!((s.eigenvalue(1, 2) - e).abs() < 1e-14 * e);
        assert!(s.eigenvalue(40, 40) > 0.0);
    }

    #[test]
    fn variance_and_mean_match_eigen_sum() {
        // Oracle: direct double loop over modes, independent of the matrix route.
        let spec = GrfSpec { truncation: Some(6), push_forward: PushForward::None, ..GrfSpec::default() };
        let g = grid(9);
        let var = grf_pointwise_variance(&spec, &g).unwrap();
        let coords = g.coords();
        for p in [0usize, 4 * 9 + 4, 17, 80] {
            let (x, y) = (coords[[p, 0]], coords[[p, 1]]);
            let mut s = 0.0;
            for a in 0..=6usize {
                for b in 0..=6usize {
                    if a + b > 0 {
                        let f = |k: usize, t: f64| if k == 0 { 1.0 } else { 2f64.sqrt() * (PI * k as f64 * t).cos() };
                        s += spec.eigenvalue(a, b) * (f(a, x) * f(b, y)).powi(2);
                    }
                }
            }
            assert!((var[p] - s).abs() < 1e-12 * s, "{p}");
        }

        let m = 10_000;
        let mut sum = vec![0.0; 81];
        let mut sumsq = vec![0.0; 81];
        for i in 0..m {
            let f = grf_sample(&spec, &g, sample_seed(3, i)).unwrap();
            for (p, &v) in f.values().column(0).iter().enumerate() {
                sum[p] += v;
                sumsq[p] += v * v;
            }
        }
        for p in 0..81 {
            let mean = sum[p] / m as f64;
            let sd = var[p].sqrt();
            assert!(mean.abs() <= 3.0 * sd / 100.0, "mean {mean} at {p}");
            // Sample variance around the known zero mean; its standard error is sqrt(2) var / sqrt(m).
            let v = sumsq[p] / m as f64;
            assert!((v - var[p]).abs() <= 5.0 * 2f64.sqrt() * var[p] / (m as f64).sqrt(), "var {v} vs {} at {p}", var[p]);
        }
    }

    #[test]
    fn push_forwards() {
        let g = grid(17);
        let pc = grf_sample(&GrfSpec::with_push_forward(PushForward::piecewise_default()), &g, 1).unwrap();
        assert!(pc.values().iter().all(|&v| v == 3.0 || v == 12.0));
        assert!(pc.values().iter().any(|&v| v == 3.0) && pc.values().iter().any(|&v| v == 12.0));
        let raw = grf_sample(&GrfSpec::with_push_forward(PushForward::None), &g, 1).unwrap();
        let ex = grf_sample(&GrfSpec::default(), &g, 1).unwrap();
        for (a, b) in raw.values().iter().zip(ex.values()) {
            assert_eq!(a.exp(), *b);
        }
    }

    #[test]
    fn refinement_extends_the_same_draw() {
        let spec = GrfSpec { truncation: Some(5), push_forward: PushForward::None, ..GrfSpec::default() };
        let coarse = grf_sample(&spec, &grid(9), 42).unwrap();
        let fine = grf_sample(&spec, &grid(17), 42).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let d = coarse.values()[[i * 9 + j, 0]] - fine.values()[[2 * i * 17 + 2 * j, 0]];
                assert!(d.abs() < 1e-13);
            }
        }
        assert_ne!(grf_sample(&spec, &grid(9), 43).unwrap(), coarse);
    }

    #[test]
    fn rejects_bad_inputs() {
        let line = Grid::unit_closed(vec![8]).unwrap();
        assert!(grf_sample(&GrfSpec::default(), &line, 0).is_err());
        let wide = Grid::new(Domain::new(vec![(0.0, 2.0), (0.0, 1.0)]).unwrap(), GridSpec::closed(vec![8, 8])).unwrap();
        assert!(grf_sample(&GrfSpec::default(), &wide, 0).is_err());
        let zero = GrfSpec { truncation: Some(0), ..GrfSpec::default() };
        assert!(grf_sample(&zero, &grid(8), 0).is_err());
    }
}

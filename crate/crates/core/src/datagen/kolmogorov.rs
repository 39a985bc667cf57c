//! Forced 2D Navier-Stokes in vorticity form on the periodic box
//! `[0, 2 pi]^2`, integrated pseudo-spectrally.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_rng, sample_seed, substeps};
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridSpec, SampledFunction};
use crate::spectral::{signed_wavenumber, FftNd};
use crate::training::{Dataset, Sample};

fn default_n() -> usize {
    64
}
fn default_nu() -> f64 {
    1.0 / 70.0
}
fn default_kf() -> usize {
    4
}
fn yes() -> bool {
    true
}
fn default_dt_solver() -> f64 {
    1e-3
}
fn default_t() -> f64 {
    11.0
}
fn default_dt_snapshot() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KolmogorovSpec {
    pub n_samples: usize,
    /// Points per axis.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_kf")]
    pub forcing_wavenumber: usize,
    #[serde(default = "yes")]
    pub forcing: bool,
    #[serde(default = "default_dt_solver")]
    pub dt_solver: f64,
    /// Time of the input snapshot.
    #[serde(default = "default_t")]
    pub t_snapshot: f64,
    /// Gap between input and target snapshots.
    #[serde(default = "default_dt_snapshot")]
    pub dt_snapshot: f64,
    #[serde(default)]
    pub seed: u64,
}

impl KolmogorovSpec {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            n: default_n(),
            nu: default_nu(),
            forcing_wavenumber: default_kf(),
            forcing: true,
            dt_solver: default_dt_solver(),
            t_snapshot: default_t(),
            dt_snapshot: default_dt_snapshot(),
            seed,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let tau = 2.0 * std::f64::consts::PI;
        Grid::new(Domain::new(vec![(0.0, tau), (0.0, tau)])?, GridSpec::periodic(vec![self.n, self.n]))
    }
}

/// Integrating-factor RK4 on unnormalized DFT coefficients, with the
/// nonlinear term dealiased by the 2/3 rule.
pub struct KolmogorovSolver {
    n: usize,
    nu: f64,
    dt: f64,
    fft: FftNd,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    keep: Vec<bool>,
    forcing: Vec<Complex64>,
}

impl KolmogorovSolver {
    pub fn new(spec: &KolmogorovSpec) -> Result<Self> {
        let n = spec.n;
        if n < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 points per axis, got {n}")));
        }
        if !(spec.nu > 0.0 && spec.dt_solver > 0.0 && spec.t_snapshot >= 0.0 && spec.dt_snapshot >= 0.0) {
            return Err(Error::InvalidConfig("viscosity and steps must be positive".into()));
        }
        let kf = spec.forcing_wavenumber;
        if spec.forcing && 3 * kf > n {
            return Err(Error::InvalidConfig(format!("forcing wavenumber {kf} is dealiased away on {n} points")));
        }
        let len = n * n;
        let wave = |b: usize| {
            // The Nyquist bin has no real derivative.
            if 2 * b == n {
                0.0
            } else {
                signed_wavenumber(b, n) as f64
            }
        };
        let (mut kx, mut ky, mut k2, mut keep) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![false; len]);
        for i in 0..n {
            for j in 0..n {
                let p = i * n + j;
                let (si, sj) = (signed_wavenumber(i, n), signed_wavenumber(j, n));
                kx[p] = wave(i);
                ky[p] = wave(j);
                k2[p] = (si * si + sj * sj) as f64;
                keep[p] = 3 * si.unsigned_abs() as usize <= n && 3 * sj.unsigned_abs() as usize <= n && 2 * i != n && 2 * j != n;
            }
        }
        let mut forcing = vec![Complex64::new(0.0, 0.0); len];
        if spec.forcing {
            // -kf cos(kf y) has coefficients -kf / 2 at (0, +-kf).
            let c = Complex64::new(-(kf as f64) * len as f64 / 2.0, 0.0);
            forcing[kf] += c;
            forcing[n - kf] += c;
        }
        Ok(Self { n, nu: spec.nu, dt: spec.dt_solver, fft: FftNd::new(&[n, n]), kx, ky, k2, keep, forcing })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mean-zero initial vorticity with covariance `7^3 (-Laplacian + 49)^(-5)`.
    /// Every wavevector pair `+-k` draws from its own stream, so grids of
    /// different size see the same field up to their resolvable modes.
    pub fn initial_condition(&self, seed: u64) -> Vec<Complex64> {
        let n = self.n;
        let scale = (n * n) as f64;
        let mut hat = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                if 2 * i == n || 2 * j == n {
                    continue;
                }
                let (kx, ky) = (signed_wavenumber(i, n), signed_wavenumber(j, n));
                if !(kx > 0 || (kx == 0 && ky > 0)) {
                    continue;
                }
                let key = ((kx as u32 as u64) << 32) | (ky as i32 as u32 as u64);
                let mut rng = sample_rng(seed, key);
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                let lam = 343.0 * ((kx * kx + ky * ky) as f64 + 49.0).powi(-5);
                let c = Complex64::new(a, b) * (lam / 2.0).sqrt() * scale;
                let (mi, mj) = ((n - i) % n, (n - j) % n);
                hat[i * n + j] = c;
                hat[mi * n + mj] = c.conj();
            }
        }
        hat
    }

    pub fn to_physical(&self, hat: &[Complex64]) -> Vec<f64> {
        let mut b = hat.to_vec();
        self.fft.inverse(&mut b);
        b.into_iter().map(|z| z.re).collect()
    }

    pub fn to_spectral(&self, values: &[f64]) -> Vec<Complex64> {
        let mut b: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut b);
        b
    }

    /// Spatial mean of the field.
    pub fn mean(&self, hat: &[Complex64]) -> f64 {
        hat[0].re / (self.n * self.n) as f64
    }

    /// Mean of `omega^2` over the box.
    pub fn enstrophy(&self, hat: &[Complex64]) -> f64 {
        let len = (self.n * self.n) as f64;
        hat.iter().map(|z| z.norm_sqr()).sum::<f64>() / (len * len)
    }

    /// Advection plus forcing, with the largest speed seen.
    fn nonlinear(&self, hat: &[Complex64]) -> (Vec<Complex64>, f64) {
        let i = Complex64::new(0.0, 1.0);
        let len = hat.len();
        let mut u = vec![Complex64::new(0.0, 0.0); len];
        let mut v = u.clone();
        let mut wx = u.clone();
        let mut wy = u.clone();
        for p in 1..len {
            let psi = hat[p] / self.k2[p];
            u[p] = i * self.ky[p] * psi;
            v[p] = -i * self.kx[p] * psi;
            wx[p] = i * self.kx[p] * hat[p];
            wy[p] = i * self.ky[p] * hat[p];
        }
        for b in [&mut u, &mut v, &mut wx, &mut wy] {
            self.fft.inverse(b);
        }
        let mut speed: f64 = 0.0;
        let mut adv: Vec<Complex64> = (0..len)
            .map(|p| {
                speed = speed.max(u[p].re.abs() + v[p].re.abs());
                Complex64::new(-(u[p].re * wx[p].re + v[p].re * wy[p].re), 0.0)
            })
            .collect();
        self.fft.forward(&mut adv);
        for p in 0..len {
            adv[p] = if self.keep[p] { adv[p] + self.forcing[p] } else { self.forcing[p] };
        }
        (adv, speed)
    }

    /// One step of length `h`.
    pub fn step(&self, hat: &mut [Complex64], h: f64) -> Result<()> {
        let e_half: Vec<f64> = self.k2.iter().map(|k| (-self.nu * k * h / 2.0).exp()).collect();
        let e_full: Vec<f64> = e_half.iter().map(|e| e * e).collect();
        let (a, speed) = self.nonlinear(hat);
        let dx = 2.0 * std::f64::consts::PI / self.n as f64;
        let courant = speed * h / dx;
        if !courant.is_finite() {
            return Err(Error::NonFinite { stage: "Kolmogorov vorticity".into() });
        }
        if courant > 1.0 {
            return Err(Error::Unstable(format!("Courant number {courant:.3} exceeds 1 at step {h}")));
        }
        let len = hat.len();
        let s2: Vec<Complex64> = (0..len).map(|p| e_half[p] * (hat[p] + h / 2.0 * a[p])).collect();
        let (b, _) = self.nonlinear(&s2);
        let s3: Vec<Complex64> = (0..len).map(|p| e_half[p] * hat[p] + h / 2.0 * b[p]).collect();
        let (c, _) = self.nonlinear(&s3);
        let s4: Vec<Complex64> = (0..len).map(|p| e_full[p] * hat[p] + h * e_half[p] * c[p]).collect();
        let (d, _) = self.nonlinear(&s4);
        for p in 0..len {
            hat[p] = e_full[p] * hat[p] + h / 6.0 * (e_full[p] * a[p] + 2.0 * e_half[p] * (b[p] + c[p]) + d[p]);
        }
        Ok(())
    }

    /// Advances by `span` in equal steps no longer than the solver step.
    pub fn advance(&self, hat: &mut [Complex64], span: f64) -> Result<()> {
        if span <= 0.0 {
            return Ok(());
        }
        let k = substeps(span, self.dt);
        for _ in 0..k {
            self.step(hat, span / k as f64)?;
        }
        Ok(())
    }
}

/// Pairs `(omega(T), omega(T + dt))` from independent initial vorticities.
pub fn kolmogorov_dataset(spec: &KolmogorovSpec) -> Result<Dataset> {
    let solver = KolmogorovSolver::new(spec)?;
    let grid = spec.grid()?;
    let column = |v: Vec<f64>| Array2::from_shape_vec((v.len(), 1), v).expect("one channel");
    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut hat = solver.initial_condition(sample_seed(spec.seed, i as u64));
            solver.advance(&mut hat, spec.t_snapshot)?;
            let input = solver.to_physical(&hat);
            solver.advance(&mut hat, spec.dt_snapshot)?;
            let target = solver.to_physical(&hat);
            Sample::new(
                SampledFunction::new(grid.clone(), column(input))?,
                SampledFunction::new(grid.clone(), column(target))?,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> KolmogorovSpec {
        KolmogorovSpec { n, ..KolmogorovSpec::new(1, 0) }
    }

    #[test]
    fn mean_vorticity_is_conserved() {
        let s = spec(32);
        let solver = KolmogorovSolver::new(&s).unwrap();
        for seed in 0..2 {
            let mut hat = solver.initial_condition(seed);
            // A non-zero mean must also be carried unchanged.
            hat[0] = Complex64::new(0.3 * 1024.0, 0.0);
            for _ in 0..20 {
                solver.advance(&mut hat, 0.1).unwrap();
                assert!((solver.mean(&hat) - 0.3).abs() <= 1e-10, "{}", solver.mean(&hat));
            }
        }
    }

    #[test]
    fn pure_diffusion_decays_enstrophy() {
        let s = KolmogorovSpec { nu: 1.0, forcing: false, ..spec(32) };
        let solver = KolmogorovSolver::new(&s).unwrap();
        let mut hat = solver.initial_condition(5);
        let mut last = solver.enstrophy(&hat);
        assert!(last > 0.0);
        for _ in 0..50 {
            solver.step(&mut hat, 1e-2).unwrap();
            let e = solver.enstrophy(&hat);
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn one_step_agrees_across_resolutions() {
        let f = |x: f64, y: f64| {
            (x + 0.3).sin() + 0.5 * (2.0 * y).cos() + 0.25 * (3.0 * x - y).sin() + 0.2 * (x + 2.0 * y).cos()
        };
        let mut out = Vec::new();
        for n in [32usize, 64] {
            let s = spec(n);
            let solver = KolmogorovSolver::new(&s).unwrap();
            let coords = s.grid().unwrap().coords();
            let vals: Vec<f64> = (0..n * n).map(|p| f(coords[[p, 0]], coords[[p, 1]])).collect();
            let mut hat = solver.to_spectral(&vals);
            solver.step(&mut hat, 1e-3).unwrap();
            out.push(solver.to_physical(&hat));
        }
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..32 {
            for j in 0..32 {
                let (a, b) = (out[0][i * 32 + j], out[1][2 * i * 64 + 2 * j]);
                num = num.max((a - b).abs());
                den = den.max(b.abs());
            }
        }
        assert!(num / den <= 1e-6, "{}", num / den);
    }

    #[test]
    fn initial_condition_is_real_and_mean_zero() {
        let solver = KolmogorovSolver::new(&spec(16)).unwrap();
        let hat = solver.initial_condition(12);
        assert_eq!(solver.mean(&hat), 0.0);
        let back = solver.to_spectral(&solver.to_physical(&hat));
        for (a, b) in hat.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn initial_condition_refines_the_same_draw() {
        let coarse = KolmogorovSolver::new(&spec(16)).unwrap();
        let fine = KolmogorovSolver::new(&spec(32)).unwrap();
        let (a, b) = (coarse.initial_condition(4), fine.initial_condition(4));
        let mut shared = 0;
        for i in 0..16 {
            for j in 0..16 {
                if i == 8 || j == 8 {
                    continue;
                }
                let (fi, fj) = (if i < 8 { i } else { i + 16 }, if j < 8 { j } else { j + 16 });
                let d = a[i * 16 + j] / 256.0 - b[fi * 32 + fj] / 1024.0;
                assert!(d.norm() <= 1e-15 * (1.0 + b[fi * 32 + fj].norm() / 1024.0));
                shared += 1;
            }
        }
        assert_eq!(shared, 225);
    }

    #[test]
    fn unstable_step_is_reported() {
        let s = spec(32);
        let solver = KolmogorovSolver::new(&s).unwrap();
        let mut hat = solver.initial_condition(0);
        hat.iter_mut().for_each(|z| *z *= 1e6);
        assert!(matches!(solver.step(&mut hat, 0.1), Err(Error::Unstable(_))));
    }

    #[test]
    fn dataset_shapes_and_determinism() {
        let s = KolmogorovSpec { n: 16, t_snapshot: 0.05, dt_snapshot: 0.01, dt_solver: 1e-2, ..KolmogorovSpec::new(2, 3) };
        let d = kolmogorov_dataset(&s).unwrap();
        assert_eq!(d, kolmogorov_dataset(&s).unwrap());
        assert_eq!(d.samples()[0].input.values().dim(), (256, 1));
        assert_ne!(d.samples()[0].input, d.samples()[0].target);
    }
}

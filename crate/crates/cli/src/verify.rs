//! Monte-Carlo convergence of continuum attention.
//!
//! For fixed pointwise parameters and smooth inputs, the attention output
//! is estimated from `N` uniform key samples and compared, in the max norm
//! over a query grid, with a fine trapezoid reference. The mean error over
//! seeds should decay like `N^(-1/2)`.

use std::f64::consts::PI;

use attnop_core::attention::mc_attention_estimate;
use attnop_core::grid::trapezoid_weights;
use attnop_core::{AttentionHeadParams, Domain, Grid, GridSpec, SampledFunction};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use attnop_core::attention::quadrature_cross_attention;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyKind {
    /// Queries, keys and values from `u` on `[0, 1]`.
    SelfAttention,
    /// Queries from `u` on `[0, 1]`, keys and values from `v` on the key domain.
    CrossAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `u(x) = sin(2 pi x) + x^2`, `v(y) = cos(pi y) + y / 2`.
    Smooth,
    Constant { value: f64 },
}

impl TestFunction {
    fn u(self, x: f64) -> f64 {
        match self {
            TestFunction::Smooth => (2.0 * PI * x).sin() + x * x,
            TestFunction::Constant { value } => value,
        }
    }

    fn v(self, y: f64) -> f64 {
        match self {
            TestFunction::Smooth => (PI * y).cos() + y / 2.0,
            TestFunction::Constant { value } => value,
        }
    }
}

fn both() -> Vec<VerifyKind> {
    vec![VerifyKind::SelfAttention, VerifyKind::CrossAttention]
}
fn thirty_two() -> usize {
    32
}
fn default_ns() -> Vec<usize> {
    (4..=12).map(|p| 1usize << p).collect()
}
fn reference_points() -> usize {
    8192
}
fn query_points() -> usize {
    129
}
fn four() -> usize {
    4
}
fn two() -> usize {
    2
}
fn smooth() -> TestFunction {
    TestFunction::Smooth
}
fn key_domain() -> (f64, f64) {
    (0.0, 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "both")]
    pub kinds: Vec<VerifyKind>,
    #[serde(default = "thirty_two")]
    pub seeds: usize,
    #[serde(default = "default_ns")]
    pub n_values: Vec<usize>,
    #[serde(default = "reference_points")]
    pub reference_points: usize,
    #[serde(default = "query_points")]
    pub query_points: usize,
    #[serde(default = "four")]
    pub key_dim: usize,
    #[serde(default = "two")]
    pub value_dim: usize,
    /// Seed of the fixed attention parameters; Monte-Carlo draws use
    /// seeds `0..seeds`.
    #[serde(default)]
    pub params_seed: u64,
    #[serde(default = "smooth")]
    pub test_function: TestFunction,
    /// Key domain of the cross-attention check.
    #[serde(default = "key_domain")]
    pub key_domain: (f64, f64),
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub kind: VerifyKind,
    pub n_values: Vec<usize>,
    pub mean_errors: Vec<f64>,
    /// Standard error of each mean over seeds.
    pub std_errors: Vec<f64>,
    pub slope: f64,
    pub inversions: usize,
    pub pass: bool,
    pub note: String,
}

pub const SLOPE_BAND: (f64, f64) = (-0.65, -0.35);
pub const MAX_INVERSIONS: usize = 2;

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn head(cfg: &VerifyConfig) -> CliResult<AttentionHeadParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.params_seed);
    let mut m = |r: usize| Array2::from_shape_fn((r, 1), |_| rng.random_range(-1.0..1.0));
    let (q, k, v) = (m(cfg.key_dim), m(cfg.key_dim), m(cfg.value_dim));
    Ok(AttentionHeadParams::pointwise(q, k, v)?)
}

fn line(a: f64, b: f64, n: usize) -> CliResult<Grid> {
    Ok(Grid::new(Domain::interval(a, b)?, GridSpec::closed(vec![n]))?)
}

fn sup_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn verify_convergence(kind: VerifyKind, cfg: &VerifyConfig) -> CliResult<VerifyReport> {
    if cfg.seeds == 0 || cfg.n_values.len() < 2 || cfg.n_values.contains(&0) {
        return Err(CliError::Config("need seeds and at least two positive sample sizes".into()));
    }
    let tf = cfg.test_function;
    let (a, b) = match kind {
        VerifyKind::SelfAttention => (0.0, 1.0),
        VerifyKind::CrossAttention => cfg.key_domain,
    };
    let key_fn = |y: f64| match kind {
        VerifyKind::SelfAttention => tf.u(y),
        VerifyKind::CrossAttention => tf.v(y),
    };
    let params = head(cfg)?;
    let queries = SampledFunction::from_fn(line(0.0, 1.0, cfg.query_points)?, 1, |x| vec![tf.u(x[0])])?;
    let keys = SampledFunction::from_fn(line(a, b, cfg.reference_points)?, 1, |y| vec![key_fn(y[0])])?;
    let reference = quadrature_cross_attention(&queries, &keys, &params, &trapezoid_weights(keys.grid())?)?;

    let mut mean_errors = Vec::new();
    let mut std_errors = Vec::new();
    for &n in &cfg.n_values {
        let errs: Vec<f64> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
                rng.set_stream(n as u64);
                let samples = Array2::from_shape_fn((n, 1), |_| key_fn(rng.random_range(a..b)));
                let est = mc_attention_estimate(queries.values().view(), samples.view(), &params)?;
                Ok(sup_distance(&est, reference.values()))
            })
            .collect::<CliResult<_>>()?;
        let m = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (errs.len().max(2) - 1) as f64;
        mean_errors.push(m);
        std_errors.push((var / errs.len() as f64).sqrt());
    }
    let xs: Vec<f64> = cfg.n_values.iter().map(|&n| n as f64).collect();
    let exact = mean_errors.iter().all(|&e| e <= 1e-12);
    let slope = if exact { f64::NAN } else { loglog_slope(&xs, &mean_errors.iter().map(|e| e.max(1e-300)).collect::<Vec<_>>()) };
    let inversions = mean_errors.windows(2).filter(|w| w[1] > w[0]).count();
    let pass = exact || (slope >= SLOPE_BAND.0 && slope <= SLOPE_BAND.1 && inversions <= MAX_INVERSIONS);
    Ok(VerifyReport {
        kind,
        n_values: cfg.n_values.clone(),
        mean_errors,
        std_errors,
        slope,
        inversions,
        pass,
        note: if exact {
            "estimator exact at every N (errors <= 1e-12); no slope fitted".into()
        } else {
            "errors are maxima over the query grid, a lower bound for the continuum sup-norm".into()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [16.0, 32.0, 64.0, 128.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_exact() {
        let cfg = VerifyConfig {
            seeds: 4,
            n_values: vec![16, 64, 256],
            test_function: TestFunction::Constant { value: 0.7 },
            ..VerifyConfig::default()
        };
        for kind in both() {
            let r = verify_convergence(kind, &cfg).unwrap();
            assert!(r.mean_errors.iter().all(|&e| e <= 1e-12), "{:?}", r.mean_errors);
            assert!(r.pass);
        }
    }
}

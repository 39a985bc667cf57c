//! Lorenz-63 trajectories.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate_to, irregular_time_grid, rk4, sample_rng, substeps, time_grid, TimeGridKind};
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridSpec, SampledFunction};
use crate::training::{Dataset, Sample};

const SIGMA: f64 = 10.0;
const RHO: f64 = 28.0;
const BETA: f64 = 8.0 / 3.0;

pub fn lorenz_rhs(s: &[f64; 3]) -> [f64; 3] {
    [SIGMA * (s[1] - s[0]), s[0] * (RHO - s[2]) - s[1], s[0] * s[1] - BETA * s[2]]
}

/// One classical RK4 step of size `h`.
pub fn lorenz_rk4_step(s: &[f64; 3], h: f64) -> [f64; 3] {
    rk4(&|_, y: &[f64; 3]| lorenz_rhs(y), 0.0, s, h)
}

/// Advances by `dt` with equal RK4 substeps no longer than `max_step`.
pub fn lorenz_advance(s: &[f64; 3], dt: f64, max_step: f64) -> [f64; 3] {
    let k = substeps(dt, max_step);
    let h = dt / k as f64;
    (0..k).fold(*s, |y, _| lorenz_rk4_step(&y, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorenzTask {
    /// x trajectory plus `(y(0), z(0))` as a token, to `(y, z)`.
    #[default]
    XToYz,
    /// x trajectory to y, without initial conditions.
    XToY,
}

fn two() -> f64 {
    2.0
}
fn default_dt() -> f64 {
    0.01
}
fn five() -> f64 {
    5.0
}
fn default_max_step() -> f64 {
    0.01 / 16.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzSpec {
    pub n_samples: usize,
    #[serde(default = "two")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub task: LorenzTask,
    #[serde(default)]
    pub seed: u64,
    /// Time integrated and discarded before recording.
    #[serde(default = "five")]
    pub spin_up: f64,
    /// Longest RK4 substep.
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    /// Irregular recording times built from `t_final / dt` steps; the
    /// uniform closed grid when absent.
    #[serde(default)]
    pub time_grid: Option<TimeGridKind>,
}

impl LorenzSpec {
    pub fn new(n_samples: usize, task: LorenzTask, seed: u64) -> Self {
        Self {
            n_samples,
            t_final: two(),
            dt: default_dt(),
            task,
            seed,
            spin_up: five(),
            max_step: default_max_step(),
            time_grid: None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("dt", self.dt), ("t_final", self.t_final), ("max_step", self.max_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("lorenz {name} must be positive, got {v}")));
            }
        }
        if !(self.spin_up >= 0.0) {
            return Err(Error::InvalidConfig("lorenz spin-up must be non-negative".into()));
        }
        Ok(())
    }

    /// The recording grid: uniform on `[0, t_final]` unless an irregular
    /// kind is set.
    pub fn grid(&self) -> Result<Grid> {
        self.validate()?;
        let steps = (self.t_final / self.dt).round() as usize;
        if steps == 0 || ((steps as f64) * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidConfig(format!("dt {} does not divide t_final {}", self.dt, self.t_final)));
        }
        match self.time_grid {
            None => Grid::new(Domain::interval(0.0, self.t_final)?, GridSpec::closed(vec![steps + 1])),
            Some(kind) => time_grid(irregular_time_grid(steps, self.dt, kind)?),
        }
    }
}

/// One trajectory at `times`, redrawing the initial state while it
/// diverges. Returns the states and the number of redraws.
fn trajectory(spec: &LorenzSpec, index: usize, times: &[f64]) -> (Vec<[f64; 3]>, usize) {
    let mut rng = sample_rng(spec.seed, index as u64);
    let f = |_: f64, y: &[f64; 3]| lorenz_rhs(y);
    let mut redraws = 0;
    loop {
        let n: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let x0 = [7.5 * n[0], 9.0 * n[1], 25.0 * n[2] + 24.0];
        let start = integrate_to(&f, 0.0, x0, &[spec.spin_up], spec.max_step)[0];
        let states = integrate_to(&f, 0.0, start, times, spec.max_step);
        if start.iter().chain(states.iter().flatten()).all(|v| v.is_finite()) {
            return (states, redraws);
        }
        redraws += 1;
    }
}

/// Trajectories recorded on `spec.grid()`. Also returns the
/// number of initial states redrawn after divergence.
pub fn lorenz63_dataset(spec: &LorenzSpec) -> Result<(Dataset, usize)> {
    lorenz63_dataset_on(spec, &spec.grid()?)
}

/// The same trajectories as [`lorenz63_dataset`], recorded on any 1D grid
/// of times starting at or after zero.
pub fn lorenz63_dataset_on(spec: &LorenzSpec, grid: &Grid) -> Result<(Dataset, usize)> {
    spec.validate()?;
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid("lorenz trajectories need a 1D time grid".into()));
    }
    let times = grid.axis_coords(0);
    if times[0] < 0.0 {
        return Err(Error::InvalidGrid("recording times must be non-negative".into()));
    }
    let results: Vec<(Sample, usize)> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let (states, redraws) = trajectory(spec, i, &times);
            let n = states.len();
            let col = |c: usize| Array2::from_shape_fn((n, 1), |(r, _)| states[r][c]);
            let input = SampledFunction::new(grid.clone(), col(0))?;
            let (target, ic) = match spec.task {
                LorenzTask::XToYz => {
                    let v = Array2::from_shape_fn((n, 2), |(r, c)| states[r][c + 1]);
                    (SampledFunction::new(grid.clone(), v)?, Some(vec![states[0][1], states[0][2]]))
                }
                LorenzTask::XToY => (SampledFunction::new(grid.clone(), col(1))?, None),
            };
            Ok((Sample::new(input, target, ic)?, redraws))
        })
        .collect::<Result<_>>()?;
    let redraws = results.iter().map(|r| r.1).sum();
    Ok((Dataset::new(results.into_iter().map(|r| r.0).collect())?, redraws))
}

//! Generators for the benchmark problems. Every generator is a
//! deterministic function of its spec and seed; sample `i` draws from its
//! own random stream, so serial and parallel generation agree bit-exactly.

mod cde;
mod darcy;
mod grf;
mod kolmogorov;
mod lorenz;
mod timegrid;

pub use cde::{cde_dataset, cde_integrate, CdeSpec};
pub use darcy::{darcy_dataset, darcy_residual, darcy_solve, DarcySolver, DarcySpec, FaceAverage};
pub use grf::{grf_pointwise_variance, grf_sample, GrfSpec, PushForward};
pub use kolmogorov::{kolmogorov_dataset, KolmogorovSolver, KolmogorovSpec};
pub use lorenz::{
    lorenz63_dataset, lorenz63_dataset_on, lorenz_advance, lorenz_rhs, lorenz_rk4_step, LorenzSpec, LorenzTask,
};
pub use timegrid::{irregular_time_grid, time_grid, TimeGridKind};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random stream of sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A child seed for sample `index`, for generators that reseed internally.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    sample_rng(seed, index).next_u64()
}

/// Number of equal substeps of length at most `max_step` covering `span`.
pub(crate) fn substeps(span: f64, max_step: f64) -> usize {
    ((span / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Classical fourth-order Runge-Kutta step for an autonomous or
/// time-dependent right-hand side on a fixed-size state.
pub(crate) fn rk4<const N: usize>(f: &impl Fn(f64, &[f64; N]) -> [f64; N], t: f64, y: &[f64; N], h: f64) -> [f64; N] {
    let axpy = |a: &[f64; N], s: f64, b: &[f64; N]| {
        let mut o = *a;
        for i in 0..N {
            o[i] += s * b[i];
        }
        o
    };
    let k1 = f(t, y);
    let k2 = f(t + h / 2.0, &axpy(y, h / 2.0, &k1));
    let k3 = f(t + h / 2.0, &axpy(y, h / 2.0, &k2));
    let k4 = f(t + h, &axpy(y, h, &k3));
    let mut o = *y;
    for i in 0..N {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Integrates from `t0` through every time in `times` (non-decreasing,
/// starting at or after `t0`), returning the state at each.
pub(crate) fn integrate_to<const N: usize>(
    f: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    times: &[f64],
    max_step: f64,
) -> Vec<[f64; N]> {
    let mut t = t0;
    let mut y = y0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let k = substeps(span, max_step);
            let h = span / k as f64;
            for i in 0..k {
                y = rk4(f, t + i as f64 * h, &y, h);
            }
            t = target;
        }
        out.push(y);
    }
    out
}

use std::f64::consts::PI;
use std::hint::black_box;

use attnop_core::attention::discrete_self_attention;
use attnop_core::datagen::{darcy_solve, DarcySolver};
use attnop_core::models::{predict, ModelInput};
use attnop_core::spectral::{fourier_integral_apply, smoothing_apply};
use attnop_core::{
    AttentionHeadParams, Domain, FourierMultiplier, Grid, GridSpec, ModelConfig, ModelParameters, SampledFunction,
    SmoothingParams, Variant,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn periodic(shape: Vec<usize>) -> Grid {
    Grid::new(Domain::unit(shape.len()), GridSpec::periodic(shape)).unwrap()
}

fn wave(grid: Grid) -> SampledFunction {
    SampledFunction::from_fn(grid, 1, |x| vec![x.iter().map(|v| (2.0 * PI * v).sin()).sum()]).unwrap()
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut m = |r: usize, k: usize| Array2::from_shape_fn((r, k), |_| rng.random_range(-1.0..1.0));
    let head = AttentionHeadParams::pointwise(m(16, 16), m(16, 16), m(16, 16)).unwrap();
    let mut g = c.benchmark_group("discrete_self_attention");
    for n in [256usize, 1024] {
        let u = m(n, 16);
        g.bench_with_input(BenchmarkId::from_parameter(n), &u, |b, u| {
            b.iter(|| discrete_self_attention(black_box(u.view()), &head).unwrap())
        });
    }
    g.finish();
}

fn spectral(c: &mut Criterion) {
    let u = wave(periodic(vec![64, 64]));
    let mult = FourierMultiplier::identity(vec![8, 8], 1);
    c.bench_function("fourier_integral_64x64", |b| b.iter(|| fourier_integral_apply(&mult, black_box(&u)).unwrap()));
    let s = SmoothingParams::new(1e-3, 2.0).unwrap();
    c.bench_function("smoothing_64x64", |b| b.iter(|| smoothing_apply(black_box(&u), &s).unwrap()));
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(20);
    let u = wave(periodic(vec![32, 32]));
    let tno = ModelParameters::init(ModelConfig::tno(1, 1, 2, 32, 2, 2), 0).unwrap();
    g.bench_function("tno_32x32", |b| b.iter(|| predict(&tno, ModelInput::new(black_box(&u))).unwrap()));
    for v in [Variant::Vitno, Variant::Fano] {
        let m = ModelParameters::init(ModelConfig::patched(v, 1, 1, 32, 2, 2, vec![4, 4], vec![2, 2]), 0).unwrap();
        g.bench_function(format!("{v:?}_32x32").to_lowercase(), |b| {
            b.iter(|| predict(&m, ModelInput::new(black_box(&u))).unwrap())
        });
    }
    g.finish();
}

fn darcy(c: &mut Criterion) {
    let a = SampledFunction::from_fn(Grid::unit_closed(vec![33, 33]).unwrap(), 1, |_| vec![1.0]).unwrap();
    let solver = DarcySolver::default();
    c.bench_function("darcy_solve_33x33", |b| b.iter(|| darcy_solve(black_box(&a), &solver).unwrap()));
}

criterion_group!(benches, attention, spectral, forward, darcy);
criterion_main!(benches);

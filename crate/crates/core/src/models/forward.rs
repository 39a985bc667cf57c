//! Differentiable forward passes recorded on a [`Tape`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::{Array2, Axis};

use super::params::{LiftSlots, MapSlots, ModelParameters, OutSlots};
use super::{ModelConfig, Variant};
use crate::attention::patch_metric;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{default_weights, position_channels, PatchLayout, QuadratureWeights, SampledFunction};
use crate::spectral::SpectralPlan;

/// One model evaluation: the input function, an optional
/// initial-condition token and optional quadrature weights (TNO and the
/// minimal universal variant; defaults to [`default_weights`]).
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub u: &'a SampledFunction,
    pub ic: Option<&'a [f64]>,
    pub weights: Option<&'a QuadratureWeights>,
}

impl<'a> ModelInput<'a> {
    pub fn new(u: &'a SampledFunction) -> Self {
        Self { u, ic: None, weights: None }
    }

    pub fn with_ic(mut self, ic: Option<&'a [f64]>) -> Self {
        self.ic = ic;
        self
    }

    pub fn with_weights(mut self, w: &'a QuadratureWeights) -> Self {
        self.weights = Some(w);
        self
    }
}

type PlanKey = (Vec<usize>, Vec<usize>, usize);

/// Partial-DFT plans shared across evaluations.
#[derive(Default)]
pub struct PlanCache {
    plans: Mutex<HashMap<PlanKey, Arc<SpectralPlan>>>,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plan(&self, shape: &[usize], kmax: &[usize], pad: usize) -> Result<Arc<SpectralPlan>> {
        let key = (shape.to_vec(), kmax.to_vec(), pad);
        if let Some(p) = self.plans.lock().expect("plan cache poisoned").get(&key) {
            return Ok(p.clone());
        }
        let plan = Arc::new(SpectralPlan::new(shape, kmax, pad)?);
        self.plans.lock().expect("plan cache poisoned").insert(key, plan.clone());
        Ok(plan)
    }
}

enum Ctx {
    Quadrature { weights: Vec<f64> },
    Patched { n_patches: usize, patch_len: usize, patch_shape: Vec<usize>, metric: Arc<Vec<f64>> },
}

/// A recorded forward pass. Parameter leaves follow the layout's slots.
pub struct ForwardGraph {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub output: Var,
}

impl ForwardGraph {
    pub fn build(model: &ModelParameters, input: ModelInput<'_>, cache: &PlanCache) -> Result<Self> {
        let c = model.config();
        let u = input.u;
        let grid = u.grid();
        if u.channels() != c.d_in {
            return Err(Error::DimensionMismatch(format!(
                "{} input channels for a model expecting {}",
                u.channels(),
                c.d_in
            )));
        }
        if grid.dim() != c.dim {
            return Err(Error::DimensionMismatch(format!(
                "a {}-dimensional grid for a {}-dimensional model",
                grid.dim(),
                c.dim
            )));
        }
        let norm = model.normalizer();
        let data = match norm {
            Some(n) => n.input.normalize(u.values()),
            None => u.values().clone(),
        };
        let pos = position_channels(grid, c.positions);
        let mut x = ndarray::concatenate(Axis(1), &[data.view(), pos.view()]).expect("row counts agree");

        let mut tape = Tape::new();
        let params: Vec<Var> = (0..model.layout().slots().len()).map(|s| tape.leaf(model.matrix(s))).collect();

        let (ctx, perm) = if c.variant.is_patched() {
            let shape = grid
                .shape()
                .ok_or_else(|| Error::InvalidGrid("patched models need a uniform grid".into()))?;
            c.check_grid_shape(shape)?;
            let layout = PatchLayout::new(shape, c.patches.as_ref().expect("validated"))?;
            let perm = layout.permutation();
            x = x.select(Axis(0), &perm);
            let m = layout.patch_len();
            let vol = layout.patch_domain(grid.domain()).volume();
            let cell = vec![vol / m as f64; m];
            let ctx = Ctx::Patched {
                n_patches: layout.n_patches(),
                patch_len: m,
                patch_shape: layout.patch_shape().to_vec(),
                metric: Arc::new(patch_metric(&cell, c.key_dim())),
            };
            (ctx, Some(perm))
        } else {
            let w = match input.weights {
                Some(w) => {
                    if w.len() != grid.len() {
                        return Err(Error::DimensionMismatch(format!(
                            "{} quadrature weights for {} points",
                            w.len(),
                            grid.len()
                        )));
                    }
                    w.clone()
                }
                None => default_weights(grid)?,
            };
            (Ctx::Quadrature { weights: w.as_slice().to_vec() }, None)
        };

        let xin = tape.leaf(x.clone());
        let mut h = lift(&mut tape, model, &params, xin, &x, &input, &ctx, cache)?;
        for li in 0..c.n_layers {
            h = encoder_layer(&mut tape, model, &params, li, h, &ctx, cache)?;
        }
        let mut y = match &model.slots.out {
            OutSlots::Linear { w, b } => {
                let y = tape.matmul_t(h, params[*w]);
                tape.add_row(y, params[*b])
            }
            OutSlots::Mlp { p1, bp, p2, bp2 } => {
                let hp = if pos.ncols() > 0 {
                    let pv = tape.leaf(pos.clone());
                    tape.concat_cols(&[h, pv])
                } else {
                    h
                };
                let y = tape.matmul_t(hp, params[*p1]);
                let y = tape.add_row(y, params[*bp]);
                let y = tape.activation(y, c.activation);
                let y = tape.matmul_t(y, params[*p2]);
                tape.add_row(y, params[*bp2])
            }
        };
        if let Some(perm) = perm {
            let mut inv = vec![0; perm.len()];
            for (r, &dst) in perm.iter().enumerate() {
                inv[dst] = r;
            }
            y = tape.select_rows(y, Arc::new(inv));
        }
        if let Some(s) = &c.smoothing {
            let shape = grid
                .shape()
                .ok_or_else(|| Error::InvalidGrid("smoothing needs a uniform grid".into()))?;
            let mult = s.multiplier(grid)?;
            y = tape.real_multiplier(y, Arc::new(shape.to_vec()), Arc::new(mult));
        }
        if let Some(n) = norm {
            y = tape.affine_cols(y, &n.output.std, &n.output.mean);
        }
        tape.check_finite()?;
        Ok(Self { tape, params, output: y })
    }

    pub fn output(&self) -> &Array2<f64> {
        self.tape.value(self.output)
    }

    /// Gradient of `<seed, output>` with respect to the flat parameters.
    pub fn param_gradient(&self, seed: Array2<f64>, n_params: usize) -> Vec<f64> {
        let grads = self.tape.backward(self.output, seed);
        let mut flat = vec![0.0; n_params];
        let mut offset = 0;
        for &p in &self.params {
            let len = self.tape.value(p).len();
            if let Some(g) = &grads[p.index()] {
                flat[offset..offset + len].iter_mut().zip(g.iter()).for_each(|(a, &b)| *a = b);
            }
            offset += len;
        }
        flat
    }
}

#[allow(clippy::too_many_arguments)]
fn lift(
    tape: &mut Tape,
    model: &ModelParameters,
    params: &[Var],
    xin: Var,
    x: &Array2<f64>,
    input: &ModelInput<'_>,
    ctx: &Ctx,
    cache: &PlanCache,
) -> Result<Var> {
    let c = model.config();
    match (&model.slots.lift, input.ic) {
        (LiftSlots::Linear { w0: None, .. } | LiftSlots::Fourier { .. } | LiftSlots::Mlp { .. }, Some(_)) => {
            return Err(Error::InvalidConfig("this model takes no initial-condition token".into()));
        }
        (LiftSlots::Linear { w0: Some(_), .. }, None) => {
            return Err(Error::InvalidConfig("this model needs an initial-condition token".into()));
        }
        _ => {}
    }
    Ok(match &model.slots.lift {
        LiftSlots::Linear { w, b, w0 } => {
            let h = tape.matmul_t(xin, params[*w]);
            let h = tape.add_row(h, params[*b]);
            match w0 {
                None => h,
                Some(w0) => {
                    let ic = input.ic.expect("checked above");
                    if ic.len() != c.ic_channels {
                        return Err(Error::DimensionMismatch(format!(
                            "{} initial-condition values for a {}-channel token",
                            ic.len(),
                            c.ic_channels
                        )));
                    }
                    let ic = match model.normalizer().and_then(|n| n.ic.as_ref()) {
                        Some(s) => s.normalize_slice(ic),
                        None => ic.to_vec(),
                    };
                    let mut row: Vec<f64> = x.row(0).to_vec();
                    row.extend(ic);
                    let n = row.len();
                    let r = tape.leaf(Array2::from_shape_vec((1, n), row).expect("length"));
                    let r = tape.matmul_t(r, params[*w0]);
                    let r = tape.add_row(r, params[*b]);
                    tape.set_row0(h, r)
                }
            }
        }
        LiftSlots::Fourier { re, im, b } => {
            let Ctx::Patched { n_patches, patch_shape, .. } = ctx else {
                unreachable!("Fourier lifts belong to patched models")
            };
            let plan = cache.plan(patch_shape, c.kmax.as_ref().expect("validated"), 0)?;
            let h = tape.spectral(xin, params[*re], params[*im], plan, c.d_model, c.lift_in(), *n_patches)?;
            tape.add_row(h, params[*b])
        }
        LiftSlots::Mlp { r1, br, r2, br2 } => {
            let h = tape.matmul_t(xin, params[*r1]);
            let h = tape.add_row(h, params[*br]);
            let h = tape.activation(h, c.activation);
            let h = tape.matmul_t(h, params[*r2]);
            tape.add_row(h, params[*br2])
        }
    })
}

fn apply_map(
    tape: &mut Tape,
    c: &ModelConfig,
    params: &[Var],
    map: &MapSlots,
    v: Var,
    ctx: &Ctx,
    cache: &PlanCache,
) -> Result<Var> {
    match map {
        MapSlots::Matrix(s) => Ok(tape.matmul_t(v, params[*s])),
        MapSlots::Fourier { re, im } => {
            let Ctx::Patched { n_patches, patch_shape, .. } = ctx else {
                unreachable!("Fourier heads belong to patched models")
            };
            let plan = cache.plan(patch_shape, c.kmax.as_ref().expect("validated"), c.extension)?;
            tape.spectral(v, params[*re], params[*im], plan, c.key_dim(), c.d_model, *n_patches)
        }
    }
}

fn encoder_layer(
    tape: &mut Tape,
    model: &ModelParameters,
    params: &[Var],
    li: usize,
    v: Var,
    ctx: &Ctx,
    cache: &PlanCache,
) -> Result<Var> {
    let c = model.config();
    let ls = &model.slots.layers[li];
    let dk = c.key_dim();
    let scale = c.temperature.unwrap_or(1.0);
    let mut outs = Vec::with_capacity(ls.heads.len());
    for hs in &ls.heads {
        let q = apply_map(tape, c, params, &hs.q, v, ctx, cache)?;
        let k = apply_map(tape, c, params, &hs.k, v, ctx, cache)?;
        let val = apply_map(tape, c, params, &hs.v, v, ctx, cache)?;
        let a = match ctx {
            Ctx::Quadrature { weights } => tape.attention(q, k, val, None, Some(weights), scale),
            Ctx::Patched { n_patches, patch_len, metric, .. } => {
                let (p, m) = (*n_patches, *patch_len);
                let qf = tape.reshape(q, p, m * dk);
                let kf = tape.reshape(k, p, m * dk);
                let vf = tape.reshape(val, p, m * dk);
                let a = tape.attention(qf, kf, vf, Some(metric.clone()), None, scale);
                tape.reshape(a, p * m, dk)
            }
        };
        outs.push(a);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
    let mh = tape.matmul_t(cat, params[ls.w_mh]);
    let skip = match ls.w1 {
        Some(w1) => tape.matmul_t(v, params[w1]),
        None => v,
    };
    let mut a = tape.add(skip, mh);
    if let Some((g, b)) = ls.ln1 {
        a = tape.layer_norm(a, params[g], params[b], c.ln_eps);
    }
    let h = tape.matmul_t(a, params[ls.w4]);
    let h = tape.add_row(h, params[ls.b1]);
    let h = tape.activation(h, c.activation);
    let h = tape.matmul_t(h, params[ls.w3]);
    let f = tape.add_row(h, params[ls.b2]);
    let skip = match ls.w2 {
        Some(w2) => tape.matmul_t(a, params[w2]),
        None => a,
    };
    let mut out = tape.add(skip, f);
    if let Some((g, b)) = ls.ln2 {
        out = tape.layer_norm(out, params[g], params[b], c.ln_eps);
    }
    Ok(out)
}

/// Evaluates the model on one input; the output lives on the input grid.
pub fn predict(model: &ModelParameters, input: ModelInput<'_>) -> Result<SampledFunction> {
    let graph = ForwardGraph::build(model, input, &PlanCache::new())?;
    SampledFunction::new(input.u.grid().clone(), graph.output().clone())
}

fn require(model: &ModelParameters, v: Variant) -> Result<()> {
    if model.config().variant != v {
        return Err(Error::InvalidConfig(format!(
            "expected a {:?} model, got {:?}",
            v,
            model.config().variant
        )));
    }
    Ok(())
}

/// TNO forward pass with the given quadrature weights.
pub fn tno_forward(model: &ModelParameters, u: &SampledFunction, w: &QuadratureWeights) -> Result<SampledFunction> {
    require(model, Variant::Tno)?;
    predict(model, ModelInput::new(u).with_weights(w))
}

pub fn vitno_forward(model: &ModelParameters, u: &SampledFunction) -> Result<SampledFunction> {
    require(model, Variant::Vitno)?;
    predict(model, ModelInput::new(u))
}

pub fn fano_forward(model: &ModelParameters, u: &SampledFunction) -> Result<SampledFunction> {
    require(model, Variant::Fano)?;
    predict(model, ModelInput::new(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::LinearMap;
    use crate::grid::{Domain, Grid, GridSpec, PositionEncoding};
    use crate::models::layers::{encoder_layer_apply, minimal_universal_layer, AttentionContext};
    use crate::models::Activation;
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slot_mat(m: &ModelParameters, name: &str) -> Array2<f64> {
        let s = m.slot(name).unwrap_or_else(|| panic!("no slot {name}"));
        Array2::from_shape_vec((s.rows, s.cols), m.flatten()[s.range()].to_vec()).unwrap()
    }

    fn slot_vec(m: &ModelParameters, name: &str) -> Array1<f64> {
        Array1::from(m.flatten()[m.slot(name).unwrap().range()].to_vec())
    }

    fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let n: f64 = b.iter().map(|y| y * y).sum();
        (d / n).sqrt()
    }

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn perturb(m: &mut ModelParameters, seed: u64) {
        // Random biases and shifts so that every slot matters.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = m.layout().slots().to_vec();
        let v = m.flatten_mut();
        for s in slots {
            for x in &mut v[s.range()] {
                *x += 0.1 * rng.random_range(-1.0..1.0);
            }
        }
    }

    fn input_1d(n: usize, periodic: bool) -> SampledFunction {
        let spec = if periodic { GridSpec::periodic(vec![n]) } else { GridSpec::closed(vec![n]) };
        let g = Grid::new(Domain::unit(1), spec).unwrap();
        SampledFunction::from_fn(g, 1, |x| vec![(2.0 * std::f64::consts::PI * x[0]).sin() + 0.3 * x[0]]).unwrap()
    }

    fn input_2d(n: usize) -> SampledFunction {
        let g = Grid::new(Domain::unit(2), GridSpec::periodic(vec![n, n])).unwrap();
        SampledFunction::from_fn(g, 1, |x| {
            vec![(2.0 * std::f64::consts::PI * x[0]).cos() * (4.0 * std::f64::consts::PI * x[1]).sin()]
        })
        .unwrap()
    }

    fn plain_ffn_stack(m: &ModelParameters, mut h: Array2<f64>, ctx: &AttentionContext) -> Array2<f64> {
        for l in 0..m.config().n_layers {
            h = encoder_layer_apply(h.view(), &m.layer(l).unwrap(), ctx).unwrap();
        }
        h
    }

    fn with_positions(u: &SampledFunction, enc: PositionEncoding) -> Array2<f64> {
        let pos = position_channels(u.grid(), enc);
        ndarray::concatenate(Axis(1), &[u.values().view(), pos.view()]).unwrap()
    }

    #[test]
    fn tno_tape_matches_layer_composition() {
        let mut c = ModelConfig::tno(1, 2, 1, 8, 2, 2);
        c.temperature = Some(0.7);
        let mut m = ModelParameters::init(c, 3).unwrap();
        perturb(&mut m, 4);
        let u = input_1d(23, false);
        let w = crate::grid::trapezoid_weights(u.grid()).unwrap();
        let x = with_positions(&u, PositionEncoding::Normalized);
        let h = x.dot(&slot_mat(&m, "lift.w_in").t()) + slot_vec(&m, "lift.b_in");
        let ctx = AttentionContext::Quadrature { grid: u.grid().clone(), weights: w.clone(), scale: 0.7 };
        let h = plain_ffn_stack(&m, h, &ctx);
        let want = h.dot(&slot_mat(&m, "out.w_out").t()) + slot_vec(&m, "out.b_out");
        let got = tno_forward(&m, &u, &w).unwrap();
        assert!(max_abs(got.values(), &want) <= 1e-12);
    }

    #[test]
    fn tno_initial_condition_token_replaces_first_row() {
        let mut c = ModelConfig::tno(1, 1, 1, 4, 1, 1);
        c.ic_channels = 3;
        let mut m = ModelParameters::init(c, 5).unwrap();
        perturb(&mut m, 6);
        let u = input_1d(9, false);
        let ic = [0.5, -1.0, 2.0];
        let x = with_positions(&u, PositionEncoding::Normalized);
        let b = slot_vec(&m, "lift.b_in");
        let mut h = x.dot(&slot_mat(&m, "lift.w_in").t()) + &b;
        let mut row0: Vec<f64> = x.row(0).to_vec();
        row0.extend(ic);
        let r = slot_mat(&m, "lift.w_in0").dot(&Array1::from(row0)) + &b;
        h.row_mut(0).assign(&r);
        let w = default_weights(u.grid()).unwrap();
        let h = plain_ffn_stack(&m, h, &AttentionContext::quadrature(u.grid().clone(), w));
        let want = h.dot(&slot_mat(&m, "out.w_out").t()) + slot_vec(&m, "out.b_out");
        let got = predict(&m, ModelInput::new(&u).with_ic(Some(&ic))).unwrap();
        assert!(max_abs(got.values(), &want) <= 1e-12);
        assert!(predict(&m, ModelInput::new(&u)).is_err());
        assert!(predict(&m, ModelInput::new(&u).with_ic(Some(&ic[..2]))).is_err());
    }

    fn patched_oracle(m: &ModelParameters, u: &SampledFunction) -> Array2<f64> {
        let c = m.config();
        let layout = PatchLayout::new(u.grid().shape().unwrap(), c.patches.as_ref().unwrap()).unwrap();
        let perm = layout.permutation();
        let x = with_positions(u, c.positions).select(Axis(0), &perm);
        let h = match c.variant {
            Variant::Vitno => {
                let s = m.slot("lift.w_in.re").unwrap();
                let re = m.layout().slots().iter().position(|t| t.name == s.name).unwrap();
                let mult = m.multiplier(re, re + 1, c.d_model, c.lift_in());
                let lift = LinearMap::fourier(mult);
                lift.apply_patches(x.view(), layout.n_patches(), layout.patch_shape(), 0).unwrap()
                    + slot_vec(m, "lift.b_in")
            }
            _ => x.dot(&slot_mat(m, "lift.w_in").t()) + slot_vec(m, "lift.b_in"),
        };
        let ctx = AttentionContext::Patched {
            grid: u.grid().clone(),
            layout: layout.clone(),
            extension: c.extension,
            scale: c.temperature.unwrap_or(1.0),
        };
        let h = plain_ffn_stack(m, h, &ctx);
        let y = h.dot(&slot_mat(m, "out.w_out").t()) + slot_vec(m, "out.b_out");
        crate::grid::patch_merge_rows(y.view(), &layout).unwrap()
    }

    #[test]
    fn fano_toy_matches_module_composition() {
        for ext in [0, 2] {
            let mut c = ModelConfig::patched(Variant::Fano, 1, 1, 4, 1, 1, vec![2], vec![1]);
            c.extension = ext;
            let mut m = ModelParameters::init(c, 7).unwrap();
            perturb(&mut m, 8);
            let u = input_1d(8, true);
            let got = fano_forward(&m, &u).unwrap();
            assert!(max_abs(got.values(), &patched_oracle(&m, &u)) <= 1e-12, "extension {ext}");
        }
    }

    #[test]
    fn patched_2d_matches_module_composition() {
        for variant in [Variant::Vitno, Variant::Fano] {
            let mut c = ModelConfig::patched(variant, 1, 2, 8, 2, 2, vec![2, 2], vec![1, 2]);
            c.temperature = Some(1.3);
            let mut m = ModelParameters::init(c, 9).unwrap();
            perturb(&mut m, 10);
            let u = input_2d(12);
            let got = predict(&m, ModelInput::new(&u)).unwrap();
            assert!(max_abs(got.values(), &patched_oracle(&m, &u)) <= 1e-12, "{variant:?}");
        }
    }

    #[test]
    fn minimal_universal_matches_composition() {
        let c = ModelConfig { variant: Variant::MinimalUniversal, ..ModelConfig::tno(1, 1, 1, 4, 2, 1) };
        let mut m = ModelParameters::init(c, 11).unwrap();
        perturb(&mut m, 12);
        let u = input_1d(15, false);
        let w = default_weights(u.grid()).unwrap();
        let x = with_positions(&u, PositionEncoding::Normalized);
        let f = |a: Array2<f64>| a.mapv(|t| Activation::Gelu.eval(t));
        let h = f(x.dot(&slot_mat(&m, "lift.r1").t()) + slot_vec(&m, "lift.b_r"));
        let h = h.dot(&slot_mat(&m, "lift.r2").t()) + slot_vec(&m, "lift.b_r2");
        let h = plain_ffn_stack(&m, h, &AttentionContext::quadrature(u.grid().clone(), w));
        let pos = position_channels(u.grid(), PositionEncoding::Normalized);
        let hp = ndarray::concatenate(Axis(1), &[h.view(), pos.view()]).unwrap();
        let h = f(hp.dot(&slot_mat(&m, "out.p1").t()) + slot_vec(&m, "out.b_p"));
        let want = h.dot(&slot_mat(&m, "out.p2").t()) + slot_vec(&m, "out.b_p2");
        let got = predict(&m, ModelInput::new(&u)).unwrap();
        assert!(max_abs(got.values(), &want) <= 1e-12);
    }

    #[test]
    fn substituted_layers_reduce_to_minimal_universal_layers() {
        let dm = 3;
        let c = ModelConfig { variant: Variant::MinimalUniversal, ..ModelConfig::tno(1, 1, 1, dm, 2, 1) };
        let mut m = ModelParameters::init(c, 13).unwrap();
        perturb(&mut m, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let eye = Array2::<f64>::eye(dm);
        let zero = Array2::<f64>::zeros((dm, dm));
        let mut subs = Vec::new();
        for l in 0..2 {
            let w1 = Array2::from_shape_fn((dm, dm), |_| rng.random_range(-1.0..1.0));
            let b1 = Array2::from_shape_fn((1, dm), |_| rng.random_range(-1.0..1.0));
            for (k, v) in [
                ("head0.q", &zero),
                ("head0.k", &zero),
                ("head0.v", &eye),
                ("w_multihead", &eye),
                ("w1", &w1),
                ("w2", &zero),
                ("ffn.w4", &eye),
                ("ffn.w3", &eye),
            ] {
                m.set_slot(&format!("layer{l}.{k}"), v).unwrap();
            }
            m.set_slot(&format!("layer{l}.ffn.b1"), &b1).unwrap();
            m.set_slot(&format!("layer{l}.ffn.b2"), &Array2::zeros((1, dm))).unwrap();
            subs.push((w1, b1.row(0).to_owned()));
        }
        let u = input_1d(21, false);
        let w = default_weights(u.grid()).unwrap();
        let x = with_positions(&u, PositionEncoding::Normalized);
        let f = |a: Array2<f64>| a.mapv(|t| Activation::Gelu.eval(t));
        let h = f(x.dot(&slot_mat(&m, "lift.r1").t()) + slot_vec(&m, "lift.b_r"));
        let mut h = h.dot(&slot_mat(&m, "lift.r2").t()) + slot_vec(&m, "lift.b_r2");
        for (w1, b1) in &subs {
            h = minimal_universal_layer(h.view(), w1, b1, Activation::Gelu, &w, 1.0).unwrap();
        }
        let pos = position_channels(u.grid(), PositionEncoding::Normalized);
        let hp = ndarray::concatenate(Axis(1), &[h.view(), pos.view()]).unwrap();
        let h = f(hp.dot(&slot_mat(&m, "out.p1").t()) + slot_vec(&m, "out.b_p"));
        let want = h.dot(&slot_mat(&m, "out.p2").t()) + slot_vec(&m, "out.b_p2");
        let got = predict(&m, ModelInput::new(&u).with_weights(&w)).unwrap();
        assert!(max_abs(got.values(), &want) <= 1e-12);
    }

    #[test]
    fn outputs_live_on_the_input_grid() {
        let m = ModelParameters::init(ModelConfig::tno(1, 3, 1, 8, 2, 2), 1).unwrap();
        for n in [17, 64, 256] {
            let u = input_1d(n, false);
            let y = predict(&m, ModelInput::new(&u)).unwrap();
            assert_eq!(y.grid(), u.grid());
            assert_eq!(y.values().dim(), (n, 3));
        }
        let v = ModelParameters::init(ModelConfig::patched(Variant::Vitno, 1, 2, 8, 1, 2, vec![4, 4], vec![1, 1]), 1)
            .unwrap();
        let f = ModelParameters::init(ModelConfig::patched(Variant::Fano, 1, 2, 8, 1, 2, vec![4, 4], vec![1, 1]), 1)
            .unwrap();
        for n in [16, 32] {
            let u = input_2d(n);
            for m in [&v, &f] {
                let y = predict(m, ModelInput::new(&u)).unwrap();
                assert_eq!(y.grid(), u.grid());
                assert_eq!(y.values().dim(), (n * n, 2));
            }
        }
        assert!(predict(&v, ModelInput::new(&input_2d(18))).is_err());
        assert!(vitno_forward(&f, &input_2d(16)).is_err());
    }

    #[test]
    fn tno_converges_under_refinement() {
        let m = ModelParameters::init(ModelConfig::tno(1, 1, 1, 8, 2, 2), 21).unwrap();
        let coarse = predict(&m, ModelInput::new(&input_1d(64, true))).unwrap();
        let fine = predict(&m, ModelInput::new(&input_1d(512, true))).unwrap();
        let shared = fine.values().select(Axis(0), &(0..64).map(|i| 8 * i).collect::<Vec<_>>());
        assert!(rel_l2(coarse.values(), &shared) < 1e-2);
    }

    fn banded(n: usize, patches: usize) -> SampledFunction {
        // One mode per patch, so every patch sees a band-limited periodic signal.
        let g = Grid::new(Domain::unit(1), GridSpec::periodic(vec![n])).unwrap();
        let k = 2.0 * std::f64::consts::PI * patches as f64;
        SampledFunction::from_fn(g, 1, |x| vec![0.4 * (k * x[0]).sin() + 0.2 * (k * x[0]).cos() + 0.1]).unwrap()
    }

    #[test]
    fn patched_models_are_resolution_consistent_on_band_limited_input() {
        for variant in [Variant::Vitno, Variant::Fano] {
            let mut c = ModelConfig::patched(variant, 1, 1, 4, 1, 1, vec![2], vec![1]);
            c.positions = PositionEncoding::None;
            let m = ModelParameters::init(c, 31).unwrap();
            let coarse = predict(&m, ModelInput::new(&banded(32, 2))).unwrap();
            let fine = predict(&m, ModelInput::new(&banded(64, 2))).unwrap();
            let shared = fine.values().select(Axis(0), &(0..32).map(|i| 2 * i).collect::<Vec<_>>());
            let err = max_abs(coarse.values(), &shared);
            assert!(err < 1e-6, "{variant:?}: {err}");
        }
    }

    #[test]
    fn smoothing_and_normalizer_are_applied() {
        let mut c = ModelConfig::tno(1, 1, 1, 4, 1, 1);
        let m0 = ModelParameters::init(c.clone(), 2).unwrap();
        c.smoothing = Some(crate::spectral::SmoothingParams::new(0.05, 2.0).unwrap());
        let m1 = ModelParameters::from_flat(c.clone(), m0.flatten().to_vec()).unwrap();
        let u = input_1d(32, true);
        let y0 = predict(&m0, ModelInput::new(&u)).unwrap();
        let y1 = predict(&m1, ModelInput::new(&u)).unwrap();
        let mult = c.smoothing.as_ref().unwrap().multiplier(u.grid()).unwrap();
        let want = crate::spectral::apply_real_multiplier(&[32], &mult, y0.values().view());
        assert!(max_abs(y1.values(), &want) <= 1e-12);

        let mut m2 = m0.clone();
        let stats = |mean: f64, std: f64| crate::models::ChannelStats { mean: vec![mean], std: vec![std] };
        m2.set_normalizer(Some(crate::models::Normalizer { input: stats(0.0, 1.0), output: stats(3.0, 2.0), ic: None }));
        let y2 = predict(&m2, ModelInput::new(&u)).unwrap();
        assert!(max_abs(y2.values(), &y0.values().mapv(|t| 2.0 * t + 3.0)) <= 1e-12);
        let mut m3 = m0.clone();
        m3.set_normalizer(Some(crate::models::Normalizer { input: stats(0.5, 2.0), output: stats(0.0, 1.0), ic: None }));
        let shifted = SampledFunction::new(u.grid().clone(), u.values().mapv(|t| 2.0 * t + 0.5)).unwrap();
        let y3 = predict(&m3, ModelInput::new(&shifted)).unwrap();
        assert!(max_abs(y3.values(), y0.values()) <= 1e-12);
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let m = ModelParameters::init(ModelConfig::tno(1, 1, 1, 4, 1, 1), 0).unwrap();
        let u = input_1d(8, true);
        assert!(fano_forward(&m, &u).is_err());
        let w = default_weights(u.grid()).unwrap();
        assert!(tno_forward(&m, &u, &w).is_ok());
        let bad = QuadratureWeights::uniform(7, 1.0).unwrap();
        assert!(tno_forward(&m, &u, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn tno_commutes_with_point_permutations(seed in 0u64..1000, n in 3usize..20) {
            let mut c = ModelConfig::tno(2, 1, 1, 4, 1, 2);
            c.positions = PositionEncoding::None;
            let m = ModelParameters::init(c, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::unit_closed(vec![n]).unwrap();
            let vals = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let u = SampledFunction::new(g.clone(), vals.clone()).unwrap();
            let up = SampledFunction::new(g, vals.select(Axis(0), &perm)).unwrap();
            let wq = QuadratureWeights::new(w.clone()).unwrap();
            let wp = QuadratureWeights::new(perm.iter().map(|&i| w[i]).collect()).unwrap();
            let y = tno_forward(&m, &u, &wq).unwrap();
            let yp = tno_forward(&m, &up, &wp).unwrap();
            prop_assert!(max_abs(yp.values(), &y.values().select(Axis(0), &perm)) < 1e-12);
        }
    }
}

//! Losses, batch gradients, gradient checking, Adam and the training loop.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{default_weights, Grid, GridSpec, QuadratureWeights, SampledFunction};
use crate::models::{ChannelStats, ForwardGraph, ModelInput, ModelParameters, Normalizer, PlanCache};

/// One input/output pair, with an optional initial-condition token.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: SampledFunction,
    pub target: SampledFunction,
    pub ic: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(input: SampledFunction, target: SampledFunction, ic: Option<Vec<f64>>) -> Result<Self> {
        if input.grid() != target.grid() {
            return Err(Error::InvalidGrid("input and target must share a grid".into()));
        }
        Ok(Self { input, target, ic })
    }

    pub fn model_input(&self) -> ModelInput<'_> {
        ModelInput::new(&self.input).with_ic(self.ic.as_deref())
    }
}

/// A list of samples with consistent channel counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let key = |s: &Sample| (s.input.channels(), s.target.channels(), s.ic.as_ref().map(Vec::len));
            let k0 = key(first);
            if let Some(i) = samples.iter().position(|s| key(s) != k0) {
                return Err(Error::DimensionMismatch(format!("sample {i} has different channel counts")));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.samples.get(i)
    }

    /// The first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        (Dataset { samples: self.samples[..n].to_vec() }, Dataset { samples: self.samples[n..].to_vec() })
    }

    /// Per-channel statistics of inputs, targets and tokens.
    pub fn fit_normalizer(&self) -> Result<Normalizer> {
        let first = self.samples.first().ok_or_else(|| Error::Empty("cannot normalize an empty dataset".into()))?;
        let input = ChannelStats::from_rows(self.samples.iter().map(|s| s.input.values().view()), first.input.channels());
        let output =
            ChannelStats::from_rows(self.samples.iter().map(|s| s.target.values().view()), first.target.channels());
        let ic = first.ic.as_ref().map(|t| {
            let rows: Vec<Array2<f64>> = self
                .samples
                .iter()
                .map(|s| Array2::from_shape_vec((1, t.len()), s.ic.clone().unwrap_or_default()).expect("length"))
                .collect();
            ChannelStats::from_rows(rows.iter().map(|r| r.view()), t.len())
        });
        Ok(Normalizer { input, output, ic })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    RelL2,
    RelH1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    20
}

fn default_epochs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Fit a normalizer on the training set when the model has none.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

fn default_normalize() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            loss: Loss::default(),
            seed: 0,
            adam: AdamConfig::default(),
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epoch count must be positive");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

fn check_pair(pred: ArrayView2<f64>, truth: ArrayView2<f64>, w: &QuadratureWeights) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!("prediction {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    if w.len() != pred.nrows() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} points", w.len(), pred.nrows())));
    }
    Ok(())
}

fn weighted_sq(x: ArrayView2<f64>, w: &[f64]) -> f64 {
    x.axis_iter(Axis(0)).zip(w).map(|(r, wi)| wi * r.iter().map(|v| v * v).sum::<f64>()).sum()
}

/// Relative L2 error under quadrature weights, summed over channels.
pub fn relative_l2(pred: ArrayView2<f64>, truth: ArrayView2<f64>, w: &QuadratureWeights) -> Result<f64> {
    Ok(relative_l2_grad(pred, truth, w)?.0)
}

/// Relative L2 error and its gradient with respect to `pred`.
pub fn relative_l2_grad(
    pred: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    w: &QuadratureWeights,
) -> Result<(f64, Array2<f64>)> {
    check_pair(pred, truth, w)?;
    let w = w.as_slice();
    let den = weighted_sq(truth, w).sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let diff = &pred - &truth;
    let num = weighted_sq(diff.view(), w).sqrt();
    let mut g = diff;
    if num > 0.0 {
        for (mut r, wi) in g.axis_iter_mut(Axis(0)).zip(w) {
            r.mapv_inplace(|v| v * wi / (num * den));
        }
    } else {
        g.fill(0.0);
    }
    Ok((num / den, g))
}

/// Finite-difference gradient stencils on a uniform grid: central in the
/// interior, second order one-sided at closed boundaries, wrapped when
/// periodic. `stencils[axis][point]` lists `(neighbour, coefficient)`.
struct Gradient {
    stencils: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Gradient {
    fn new(grid: &Grid) -> Result<Self> {
        let GridSpec::Uniform { shape, periodic } = grid.spec() else {
            return Err(Error::InvalidGrid("H1 norms need a uniform grid".into()));
        };
        let n_total = grid.len();
        let mut stencils = Vec::with_capacity(shape.len());
        for ax in 0..shape.len() {
            let x = grid.axis_coords(ax);
            let n = shape[ax];
            let h = x[1] - x[0];
            let stride: usize = shape[ax + 1..].iter().product();
            let mut st = Vec::with_capacity(n_total);
            for p in 0..n_total {
                let i = (p / stride) % n;
                let at = |j: usize| p - i * stride + j * stride;
                let s = if *periodic {
                    vec![(at((i + 1) % n), 0.5 / h), (at((i + n - 1) % n), -0.5 / h)]
                } else if n == 2 {
                    vec![(at(1), 1.0 / h), (at(0), -1.0 / h)]
                } else if i == 0 {
                    vec![(at(0), -1.5 / h), (at(1), 2.0 / h), (at(2), -0.5 / h)]
                } else if i == n - 1 {
                    vec![(at(n - 1), 1.5 / h), (at(n - 2), -2.0 / h), (at(n - 3), 0.5 / h)]
                } else {
                    vec![(at(i + 1), 0.5 / h), (at(i - 1), -0.5 / h)]
                };
                st.push(s);
            }
            stencils.push(st);
        }
        Ok(Self { stencils })
    }

    fn apply(&self, ax: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.dim());
        for (p, st) in self.stencils[ax].iter().enumerate() {
            for &(j, c) in st {
                out.row_mut(p).scaled_add(c, &x.row(j));
            }
        }
        out
    }

    fn apply_t(&self, ax: usize, y: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(y.dim());
        for (p, st) in self.stencils[ax].iter().enumerate() {
            for &(j, c) in st {
                out.row_mut(j).scaled_add(c, &y.row(p));
            }
        }
        out
    }
}

/// Relative error in the norm `(|f|^2_{L2} + |grad f|^2_{L2})^{1/2}` with
/// finite-difference gradients.
pub fn relative_h1(pred: ArrayView2<f64>, truth: ArrayView2<f64>, grid: &Grid) -> Result<f64> {
    Ok(relative_h1_grad(pred, truth, grid)?.0)
}

pub fn relative_h1_grad(pred: ArrayView2<f64>, truth: ArrayView2<f64>, grid: &Grid) -> Result<(f64, Array2<f64>)> {
    let w = default_weights(grid)?;
    check_pair(pred, truth, &w)?;
    let d = Gradient::new(grid)?;
    let ws = w.as_slice();
    let h1_sq = |f: ArrayView2<f64>| -> f64 {
        weighted_sq(f, ws) + (0..grid.dim()).map(|ax| weighted_sq(d.apply(ax, f).view(), ws)).sum::<f64>()
    };
    let den = h1_sq(truth).sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let e = &pred - &truth;
    let num = h1_sq(e.view()).sqrt();
    if num == 0.0 {
        return Ok((0.0, Array2::zeros(e.dim())));
    }
    // d/de of num is (W e + sum_ax D^T W D e) / num.
    let scale_rows = |mut a: Array2<f64>| {
        for (mut r, wi) in a.axis_iter_mut(Axis(0)).zip(ws) {
            r.mapv_inplace(|v| v * wi);
        }
        a
    };
    let mut g = scale_rows(e.clone());
    for ax in 0..grid.dim() {
        g += &d.apply_t(ax, scale_rows(d.apply(ax, e.view())).view());
    }
    g.mapv_inplace(|v| v / (num * den));
    Ok((num / den, g))
}

/// Loss of one prediction against its target and the gradient seed.
pub fn sample_loss(loss: Loss, pred: ArrayView2<f64>, target: &SampledFunction) -> Result<(f64, Array2<f64>)> {
    match loss {
        Loss::RelL2 => relative_l2_grad(pred, target.values().view(), &default_weights(target.grid())?),
        Loss::RelH1 => relative_h1_grad(pred, target.values().view(), target.grid()),
    }
}

/// Mean batch loss without gradients.
pub fn batch_loss(model: &ModelParameters, batch: &[&Sample], loss: Loss) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let cache = PlanCache::new();
    let per: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let g = ForwardGraph::build(model, s.model_input(), &cache)?;
            Ok(sample_loss(loss, g.output().view(), &s.target)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / batch.len() as f64)
}

/// Mean batch loss and its gradient in the flat parameter layout.
/// Per-sample gradients are summed in ascending sample order.
pub fn backward(model: &ModelParameters, batch: &[&Sample], loss: Loss) -> Result<(f64, Vec<f64>)> {
    backward_with(model, batch, loss, &PlanCache::new())
}

pub fn backward_with(
    model: &ModelParameters,
    batch: &[&Sample],
    loss: Loss,
    cache: &PlanCache,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let n = model.layout().len();
    let per: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let g = ForwardGraph::build(model, s.model_input(), cache)?;
            let (l, seed) = sample_loss(loss, g.output().view(), &s.target)?;
            if !l.is_finite() {
                return Err(Error::NonFinite { stage: "loss".into() });
            }
            Ok((l, g.param_gradient(seed, n)))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in &per {
        total += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    let mean = total * inv;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        let slot = model.layout().slots().iter().find(|s| s.range().contains(&i)).map_or("?", |s| s.name.as_str());
        return Err(Error::NonFinite { stage: format!("gradient of {slot}") });
    }
    Ok((mean, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub slot: String,
    pub analytic: f64,
    pub numeric: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_deviation: f64,
    /// Absolute floor in the deviation denominator.
    pub floor: f64,
}

/// Coordinates checked by [`finite_diff_gradcheck`]: the first and middle
/// entry of every slot plus an even stride filling up to `min_count`.
pub fn gradcheck_indices(model: &ModelParameters, min_count: usize) -> Vec<usize> {
    let n = model.layout().len();
    let mut idx: Vec<usize> = Vec::new();
    for s in model.layout().slots() {
        if !s.is_empty() {
            idx.push(s.offset);
            idx.push(s.offset + s.len() / 2);
        }
    }
    if n <= min_count {
        idx.extend(0..n);
    } else {
        let stride = n as f64 / min_count as f64;
        idx.extend((0..min_count).map(|i| (i as f64 * stride) as usize));
    }
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Central differences of `f` at `theta` along the listed coordinates,
/// with step `h * (1 + |theta_i|)`.
pub fn central_differences(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    indices: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    indices
        .iter()
        .map(|&i| {
            let t = theta[i];
            let step = h * (1.0 + t.abs());
            x[i] = t + step;
            let lp = f(&x)?;
            x[i] = t - step;
            let lm = f(&x)?;
            x[i] = t;
            Ok((lp - lm) / (2.0 * step))
        })
        .collect()
}

/// Compares [`backward`] with central differences of [`batch_loss`]
/// using step `h * (1 + |theta_i|)`. The deviation of an entry is
/// `|a - n| / max(|a|, |n|, floor)` where the floor is `1e-3` times the
/// largest analytic gradient magnitude. Central differences carry rounding
/// noise of order `eps * loss / h`, so entries far below the gradient's
/// scale are compared on that scale instead of their own.
pub fn finite_diff_gradcheck(model: &ModelParameters, batch: &[&Sample], loss: Loss, h: f64) -> Result<GradCheckReport> {
    let (_, grad) = backward(model, batch, loss)?;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = 1e-3 * gmax.max(f64::MIN_POSITIVE);
    let indices = gradcheck_indices(model, 200);
    let mut probe = model.clone();
    let numeric = central_differences(
        |theta| {
            probe.flatten_mut().copy_from_slice(theta);
            batch_loss(&probe, batch, loss)
        },
        model.flatten(),
        &indices,
        h,
    )?;
    let mut entries = Vec::with_capacity(indices.len());
    for (i, numeric) in indices.into_iter().zip(numeric) {
        let analytic = grad[i];
        let deviation = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        let slot = model.layout().slots().iter().find(|s| s.range().contains(&i)).expect("index in layout");
        entries.push(GradCheckEntry { index: i, slot: slot.name.clone(), analytic, numeric, deviation });
    }
    let max_deviation = entries.iter().fold(0.0f64, |m, e| m.max(e.deviation));
    Ok(GradCheckReport { entries, max_deviation, floor })
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Per-sample relative L2 errors and their summary. The median is the
/// lower median for even counts, so it is always one of the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub errors: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    pub median_index: usize,
    pub worst_index: usize,
}

impl Metrics {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Empty("no errors to summarize".into()));
        }
        if let Some(i) = errors.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFinite { stage: format!("error of sample {i}") });
        }
        let mut order: Vec<usize> = (0..errors.len()).collect();
        order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
        let median_index = order[(errors.len() - 1) / 2];
        let worst_index = *order.last().expect("non-empty");
        Ok(Self {
            median: errors[median_index],
            mean: errors.iter().sum::<f64>() / errors.len() as f64,
            max: errors[worst_index],
            median_index,
            worst_index,
            errors,
        })
    }
}

/// Relative L2 error of the model on every sample.
pub fn evaluate(model: &ModelParameters, data: &Dataset) -> Result<Metrics> {
    let cache = PlanCache::new();
    let errors = data
        .samples()
        .par_iter()
        .map(|s| {
            let g = ForwardGraph::build(model, s.model_input(), &cache)?;
            relative_l2(g.output().view(), s.target.values().view(), &default_weights(s.target.grid())?)
        })
        .collect::<Result<Vec<_>>>()?;
    Metrics::from_errors(errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_median_rel_l2: Option<f64>,
    pub wall_seconds: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_median_rel_l2,wall_seconds\n");
    for r in history {
        let val = r.val_median_rel_l2.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(s, "{},{:.17e},{},{:.3}", r.epoch, r.train_loss, val, r.wall_seconds).expect("string write");
    }
    s
}

/// Training stopped by a non-finite loss or gradient. `model` holds the
/// last finite parameters.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub history: Vec<EpochRecord>,
    pub model: ModelParameters,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} epochs: {}", self.history.len(), self.error)
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub struct TrainOutcome {
    pub model: ModelParameters,
    pub history: Vec<EpochRecord>,
}

/// Minibatch Adam over `train`, shuffled per epoch from `config.seed`.
/// `on_epoch` sees every finished epoch.
pub fn train(
    mut model: ModelParameters,
    data: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let mut history = Vec::new();
    let fail = |error, history, model| TrainFailure { error, history, model };
    if let Err(e) = config.validate() {
        return Err(fail(e, history, model));
    }
    if data.is_empty() {
        return Err(fail(Error::Empty("empty training set".into()), history, model));
    }
    if config.normalize && model.normalizer().is_none() {
        match data.fit_normalizer() {
            Ok(n) => model.set_normalizer(Some(n)),
            Err(e) => return Err(fail(e, history, model)),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(model.layout().len());
    let cache = PlanCache::new();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.samples()[i]).collect();
            let (l, g) = match backward_with(&model, &batch, config.loss, &cache) {
                Ok(r) => r,
                Err(e) => return Err(fail(e, history, model)),
            };
            let mut next = model.flatten().to_vec();
            adam_step(&mut next, &g, &mut state, config.learning_rate, &config.adam).expect("sizes agree");
            if next.iter().any(|v| !v.is_finite()) {
                return Err(fail(Error::NonFinite { stage: "parameter update".into() }, history, model));
            }
            model.unflatten(&next).expect("sizes agree");
            sum += l * batch.len() as f64;
        }
        let val = match validation {
            Some(v) => match evaluate(&model, v) {
                Ok(m) => Some(m.median),
                Err(e) => return Err(fail(e, history, model)),
            },
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            train_loss: sum / data.len() as f64,
            val_median_rel_l2: val,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: train loss {:.6e}, validation median {:?}", rec.train_loss, rec.val_median_rel_l2);
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { model, history })
}

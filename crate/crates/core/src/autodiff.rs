//! A small reverse-mode tape over dense matrices.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep
//! accumulates gradients. Every operation needed by the models has a
//! hand-written vector-Jacobian product here.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::attention::{attention_kernel, attention_kernel_backward};
use crate::error::{Error, Result};
use crate::models::Activation;
use crate::spectral::{apply_real_multiplier, FourierMultiplier, SpectralPlan};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMulT { x: Var, w: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, b: Var },
    Act { x: Var, act: Activation },
    LayerNorm { x: Var, gamma: Var, xhat: Array2<f64>, inv_std: Vec<f64> },
    LayerNormBeta { ln: Var, beta: Var },
    Attention { q: Var, k: Var, v: Var, metric: Option<Arc<Vec<f64>>>, scale: f64, probs: Array2<f64> },
    Reshape { x: Var },
    SelectRows { x: Var, index: Arc<Vec<usize>> },
    ConcatCols { parts: Vec<Var> },
    SetRow0 { x: Var, r: Var },
    Spectral { x: Var, re: Var, im: Var, plan: Arc<SpectralPlan>, mult: FourierMultiplier, fr: Array2<f64>, fi: Array2<f64>, batch: usize },
    RealMultiplier { x: Var, shape: Arc<Vec<usize>>, mult: Arc<Vec<f64>> },
    WeightedMean { x: Var, w: Arc<Vec<f64>>, volume: f64 },
    AffineCols { x: Var, scale: Vec<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    nonfinite: Option<&'static str>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Name of the first operation that produced a non-finite value.
    pub fn first_nonfinite(&self) -> Option<&'static str> {
        self.nonfinite
    }

    /// Errors if any recorded value is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some(stage) => Err(Error::NonFinite { stage: stage.into() }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, stage: &'static str) -> Var {
        if self.nonfinite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.nonfinite = Some(stage);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, "input")
    }

    /// `x w^T`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let y = self.value(x).dot(&self.value(w).t());
        self.push(y, Op::MatMulT { x, w }, "linear map")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add { a, b }, "residual sum")
    }

    /// Adds the `1 x c` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let y = self.value(x) + self.value(b);
        self.push(y, Op::AddRow { x, b }, "bias")
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let y = self.value(x).mapv(|t| act.eval(t));
        self.push(y, Op::Act { x, act }, "activation")
    }

    /// Per-row layer normalization with `1 x c` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.dim();
        let mut xhat = Array2::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        for (mut out, row) in xhat.axis_iter_mut(Axis(0)).zip(xv.axis_iter(Axis(0))) {
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            out.iter_mut().zip(row).for_each(|(o, &t)| *o = (t - mean) * is);
            inv_std.push(is);
        }
        let scaled = &xhat * self.value(gamma);
        let ln = self.push(scaled, Op::LayerNorm { x, gamma, xhat, inv_std }, "layer norm");
        let y = self.value(ln) + self.value(beta);
        self.push(y, Op::LayerNormBeta { ln, beta }, "layer norm")
    }

    /// Attention with logits `scale (q . metric) k^T` and optional key
    /// weights in the softmax.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        metric: Option<Arc<Vec<f64>>>,
        key_weights: Option<&[f64]>,
        scale: f64,
    ) -> Var {
        let (out, probs) = attention_kernel(
            self.value(q).view(),
            self.value(k).view(),
            self.value(v).view(),
            metric.as_deref().map(|m| m.as_slice()),
            key_weights,
            scale,
        );
        self.push(out, Op::Attention { q, k, v, metric, scale, probs }, "attention")
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let y = self
            .value(x)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, cols))
            .expect("reshape preserves the element count");
        self.push(y, Op::Reshape { x }, "reshape")
    }

    /// Output row `r` is input row `index[r]`.
    pub fn select_rows(&mut self, x: Var, index: Arc<Vec<usize>>) -> Var {
        let y = self.value(x).select(Axis(0), &index);
        self.push(y, Op::SelectRows { x, index }, "row permutation")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(y, Op::ConcatCols { parts: parts.to_vec() }, "head concatenation")
    }

    /// Replaces row 0 of `x` with the `1 x c` row `r`.
    pub fn set_row0(&mut self, x: Var, r: Var) -> Var {
        let mut y = self.value(x).clone();
        y.row_mut(0).assign(&self.value(r).row(0));
        self.push(y, Op::SetRow0 { x, r }, "initial-condition token")
    }

    /// Fourier multiplier with parameters `re`, `im` (each `1 x len`)
    /// applied to `batch` patches stacked in `x`.
    #[allow(clippy::too_many_arguments)]
    pub fn spectral(
        &mut self,
        x: Var,
        re: Var,
        im: Var,
        plan: Arc<SpectralPlan>,
        r_out: usize,
        r_in: usize,
        batch: usize,
    ) -> Result<Var> {
        let mult = FourierMultiplier::new(
            plan.kmax().to_vec(),
            r_out,
            r_in,
            self.value(re).iter().copied().collect(),
            self.value(im).iter().copied().collect(),
        )?;
        let xv = self.value(x);
        if xv.nrows() != batch * plan.patch_len() || xv.ncols() != r_in {
            return Err(Error::DimensionMismatch(format!(
                "spectral input {:?} for {batch} patches of {} points and {r_in} channels",
                xv.dim(),
                plan.patch_len()
            )));
        }
        let (fr, fi) = plan.analyze(xv.view(), batch);
        let y = plan.synthesize_from(&mult, &fr, &fi, batch);
        Ok(self.push(y, Op::Spectral { x, re, im, plan, mult, fr, fi, batch }, "Fourier multiplier"))
    }

    /// Real, even multiplier on a uniform grid of `shape` (self-adjoint).
    pub fn real_multiplier(&mut self, x: Var, shape: Arc<Vec<usize>>, mult: Arc<Vec<f64>>) -> Var {
        let y = apply_real_multiplier(&shape, &mult, self.value(x).view());
        self.push(y, Op::RealMultiplier { x, shape, mult }, "smoothing")
    }

    /// `1 x c` row `sum_i w_i x_i / volume`.
    pub fn weighted_mean(&mut self, x: Var, w: Arc<Vec<f64>>, volume: f64) -> Var {
        let xv = self.value(x);
        let mut y = Array2::zeros((1, xv.ncols()));
        for (row, &wi) in xv.axis_iter(Axis(0)).zip(w.iter()) {
            y.row_mut(0).scaled_add(wi / volume, &row);
        }
        self.push(y, Op::WeightedMean { x, w, volume }, "quadrature mean")
    }

    /// `x_ic * scale_c + shift_c` with constant per-column scale and shift.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let mut y = self.value(x).clone();
        for mut row in y.axis_iter_mut(Axis(0)) {
            for ((t, &a), &b) in row.iter_mut().zip(scale).zip(shift) {
                *t = *t * a + b;
            }
        }
        self.push(y, Op::AffineCols { x, scale: scale.to_vec() }, "output scaling")
    }

    /// Reverse sweep from `out` seeded with `seed`; entry `i` of the result
    /// is the gradient of node `i`, if it influences `out`.
    pub fn backward(&self, out: Var, seed: Array2<f64>) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMulT { x, w } => {
                    let gx = g.dot(self.value(*w));
                    let gw = g.t().dot(self.value(*x));
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow { x, b } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Act { x, act } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    gx.zip_mut_with(xv, |gi, &t| *gi *= act.derivative(t));
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gamma, xhat, inv_std } => {
                    let gamma_v = self.value(*gamma);
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &g * gamma_v;
                    let c = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let gh = gxhat.row(r);
                        let xh = xhat.row(r);
                        let m1 = gh.sum() / c;
                        let m2 = gh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c;
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (gh[j] - m1 - xh[j] * m2);
                        }
                    }
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNormBeta { ln, beta } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *beta, gb);
                    acc(&mut grads, *ln, g);
                }
                Op::Attention { q, k, v, metric, scale, probs } => {
                    let (gq, gk, gv) = attention_kernel_backward(
                        self.value(*q).view(),
                        self.value(*k).view(),
                        self.value(*v).view(),
                        metric.as_deref().map(|m| m.as_slice()),
                        *scale,
                        probs.view(),
                        g.view(),
                    );
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::Reshape { x } => {
                    let shape = self.value(*x).dim();
                    let gx = g.into_shape_with_order(shape).expect("reshape preserves the element count");
                    acc(&mut grads, *x, gx);
                }
                Op::SelectRows { x, index } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (r, &src) in index.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols { parts } => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SetRow0 { x, r } => {
                    let gr = g.row(0).to_owned().insert_axis(Axis(0));
                    let mut gx = g;
                    gx.row_mut(0).fill(0.0);
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *x, gx);
                }
                Op::Spectral { x, re, im, plan, mult, fr, fi, batch } => {
                    let (gx, gre, gim) = plan.backward(mult, fr, fi, g.view(), *batch);
                    let n = gre.len();
                    acc(&mut grads, *re, Array2::from_shape_vec((1, n), gre).expect("length"));
                    acc(&mut grads, *im, Array2::from_shape_vec((1, n), gim).expect("length"));
                    acc(&mut grads, *x, gx);
                }
                Op::RealMultiplier { x, shape, mult } => {
                    let gx = apply_real_multiplier(shape, mult, g.view());
                    acc(&mut grads, *x, gx);
                }
                Op::WeightedMean { x, w, volume } => {
                    let n = self.value(*x).nrows();
                    let mut gx = Array2::zeros((n, g.ncols()));
                    for (mut row, &wi) in gx.axis_iter_mut(Axis(0)).zip(w.iter()) {
                        row.scaled_add(wi / volume, &g.row(0));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::AffineCols { x, scale } => {
                    let mut gx = g;
                    for mut row in gx.axis_iter_mut(Axis(0)) {
                        row.iter_mut().zip(scale).for_each(|(t, &a)| *t *= a);
                    }
                    acc(&mut grads, *x, gx);
                }
            }
        }
        grads
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

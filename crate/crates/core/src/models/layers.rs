//! Encoder building blocks evaluated directly on arrays.
//!
//! These compose the attention module's public functions and are the
//! reference the differentiable forward passes are tested against.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::Activation;
use crate::attention::{
    patch_cell_weights, patched_cross_attention_ext, quadrature_self_attention, AttentionHeadParams,
};
use crate::error::{Error, Result};
use crate::grid::{patch_merge_rows, patch_split, Grid, PatchLayout, QuadratureWeights, SampledFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w3: Array2<f64>,
    pub w4: Array2<f64>,
    pub b1: Array1<f64>,
    pub b2: Array1<f64>,
}

/// One encoder layer. `ln1`/`ln2` set to `None` disable normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub heads: Vec<AttentionHeadParams>,
    pub w_multihead: Array2<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub ln1: Option<LayerNormParams>,
    pub ln2: Option<LayerNormParams>,
    pub ffn: FfnParams,
    pub activation: Activation,
}

/// How attention sees the rows of the latent function.
#[derive(Debug, Clone)]
pub enum AttentionContext {
    /// Rows are grid points; keys are weighted by quadrature.
    Quadrature { grid: Grid, weights: QuadratureWeights, scale: f64 },
    /// Rows are in patched order (`p * M + i`) for `layout` on `grid`.
    Patched { grid: Grid, layout: PatchLayout, extension: usize, scale: f64 },
}

impl AttentionContext {
    pub fn quadrature(grid: Grid, weights: QuadratureWeights) -> Self {
        AttentionContext::Quadrature { grid, weights, scale: 1.0 }
    }

    pub fn patched(grid: Grid, layout: PatchLayout) -> Self {
        AttentionContext::Patched { grid, layout, extension: 0, scale: 1.0 }
    }
}

/// Per-row layer normalization with biased variance.
pub fn layer_norm_apply(v: ArrayView2<f64>, p: &LayerNormParams) -> Array2<f64> {
    let c = v.ncols() as f64;
    let mut out = v.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / c;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + p.eps).sqrt();
        for ((x, g), b) in row.iter_mut().zip(&p.gamma).zip(&p.beta) {
            *x = (*x - mean) * inv * g + b;
        }
    }
    out
}

/// `W3 f(W4 v + b1) + b2` at every row.
pub fn ffn_apply(v: ArrayView2<f64>, p: &FfnParams, f: Activation) -> Array2<f64> {
    let h = (v.dot(&p.w4.t()) + &p.b1).mapv(|x| f.eval(x));
    h.dot(&p.w3.t()) + &p.b2
}

fn head_apply(v: ArrayView2<f64>, head: &AttentionHeadParams, ctx: &AttentionContext) -> Result<Array2<f64>> {
    match ctx {
        AttentionContext::Quadrature { grid, weights, scale } => {
            let u = SampledFunction::new(grid.clone(), v.to_owned())?;
            let h = head.with_temperature(*scale);
            Ok(quadrature_self_attention(&u, &h, weights)?.into_values())
        }
        AttentionContext::Patched { grid, layout, extension, scale } => {
            let u = SampledFunction::new(grid.clone(), patch_merge_rows(v, layout)?)?;
            let pu = patch_split(&u, layout)?;
            let h = head.with_temperature(*scale);
            let out = patched_cross_attention_ext(&pu, &pu, &h, &patch_cell_weights(&pu), *extension)?;
            Ok(out.rows().to_owned())
        }
    }
}

/// Concatenated head outputs mapped by `W_multihead`.
pub fn multihead_apply(v: ArrayView2<f64>, layer: &EncoderLayerParams, ctx: &AttentionContext) -> Result<Array2<f64>> {
    if layer.heads.is_empty() {
        return Err(Error::InvalidConfig("multi-head attention needs at least one head".into()));
    }
    let outs = layer.heads.iter().map(|h| head_apply(v, h, ctx)).collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    let cat = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
    if cat.ncols() != layer.w_multihead.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} concatenated head channels for a {}-column W_multihead",
            cat.ncols(),
            layer.w_multihead.ncols()
        )));
    }
    Ok(cat.dot(&layer.w_multihead.t()))
}

/// `v <- W1 v + MH(v); LN1; v <- W2 v + FFN(v); LN2`.
pub fn encoder_layer_apply(v: ArrayView2<f64>, layer: &EncoderLayerParams, ctx: &AttentionContext) -> Result<Array2<f64>> {
    let mut a = v.dot(&layer.w1.t()) + multihead_apply(v, layer, ctx)?;
    if let Some(ln) = &layer.ln1 {
        a = layer_norm_apply(a.view(), ln);
    }
    let mut b = a.dot(&layer.w2.t()) + ffn_apply(a.view(), &layer.ffn, layer.activation);
    if let Some(ln) = &layer.ln2 {
        b = layer_norm_apply(b.view(), ln);
    }
    Ok(b)
}

/// `f(W1 v + b1 + (1/|D|) sum_i w_i v_i)` at every row.
pub fn minimal_universal_layer(
    v: ArrayView2<f64>,
    w1: &Array2<f64>,
    b1: &Array1<f64>,
    f: Activation,
    weights: &QuadratureWeights,
    domain_volume: f64,
) -> Result<Array2<f64>> {
    if weights.len() != v.nrows() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} points", weights.len(), v.nrows())));
    }
    let mut mean = Array1::zeros(v.ncols());
    for (row, &w) in v.axis_iter(Axis(0)).zip(weights.as_slice()) {
        mean.scaled_add(w / domain_volume, &row);
    }
    Ok((v.dot(&w1.t()) + b1 + &mean).mapv(|x| f.eval(x)))
}

//! Transformer neural operators: configuration, parameters, the plain
//! layer functions, differentiable forward passes and cost estimates.

mod complexity;
mod forward;
mod layers;
mod params;

pub use complexity::{count_params_formula, estimate_flops, ArchRow, ComplexityConfig};
pub use forward::{
    fano_forward, predict, tno_forward, vitno_forward, ForwardGraph, ModelInput, PlanCache,
};
pub use layers::{
    encoder_layer_apply, ffn_apply, layer_norm_apply, minimal_universal_layer, multihead_apply, AttentionContext,
    EncoderLayerParams, FfnParams, LayerNormParams,
};
pub use params::{count_params, ChannelStats, ModelParameters, Normalizer, ParamLayout, Role, Slot};

use serde::{Deserialize, Serialize};
use libm::erf;

use crate::error::{Error, Result};
use crate::grid::PositionEncoding;
use crate::spectral::{nyquist_limit, SmoothingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Tno,
    Vitno,
    Fano,
    MinimalUniversal,
}

impl Variant {
    pub fn is_patched(self) -> bool {
        matches!(self, Variant::Vitno | Variant::Fano)
    }
}

/// Scalar nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_ln_eps() -> f64 {
    1e-5
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Input channels `d_u`.
    pub d_in: usize,
    /// Output channels `d_z`.
    pub d_out: usize,
    /// Spatial dimension `d`.
    pub dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub positions: PositionEncoding,
    /// Channels of an initial-condition token embedded at the first grid
    /// point by a separate lift. Zero disables it.
    #[serde(default)]
    pub ic_channels: usize,
    /// Patches per axis (patched variants only).
    #[serde(default)]
    pub patches: Option<Vec<usize>>,
    /// Per-axis mode cutoffs: the lift for ViTNO, the heads for FANO.
    #[serde(default)]
    pub kmax: Option<Vec<usize>>,
    /// Even-reflection extension, in points per side, around every FANO
    /// multiplier application.
    #[serde(default)]
    pub extension: usize,
    #[serde(default)]
    pub smoothing: Option<SmoothingParams>,
    #[serde(default = "default_true")]
    pub layer_norm: bool,
    /// Multiplies every attention logit.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

impl ModelConfig {
    /// A TNO with default options.
    pub fn tno(d_in: usize, d_out: usize, dim: usize, d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        Self {
            variant: Variant::Tno,
            d_in,
            d_out,
            dim,
            d_model,
            n_layers,
            n_heads,
            activation: Activation::default(),
            positions: PositionEncoding::default(),
            ic_channels: 0,
            patches: None,
            kmax: None,
            extension: 0,
            smoothing: None,
            layer_norm: true,
            temperature: None,
            ln_eps: default_ln_eps(),
        }
    }

    /// A patched model (`Vitno` or `Fano`).
    #[allow(clippy::too_many_arguments)]
    pub fn patched(
        variant: Variant,
        d_in: usize,
        d_out: usize,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        patches: Vec<usize>,
        kmax: Vec<usize>,
    ) -> Self {
        Self {
            variant,
            dim: patches.len(),
            patches: Some(patches),
            kmax: Some(kmax),
            ..Self::tno(d_in, d_out, 1, d_model, n_layers, n_heads)
        }
    }

    pub fn key_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Channels entering the lift: data channels plus positions.
    pub fn lift_in(&self) -> usize {
        self.d_in + self.positions.channels(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_in == 0 || self.d_out == 0 || self.dim == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("channel counts, dimension and head count must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("{} heads do not divide d_model = {}", self.n_heads, self.d_model));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("layer-norm epsilon {} must be positive", self.ln_eps));
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() {
                return bad("temperature must be finite".into());
            }
        }
        if let Some(s) = &self.smoothing {
            s.validate()?;
        }
        if self.variant.is_patched() {
            let Some(p) = &self.patches else {
                return bad("patched variants need a patch layout".into());
            };
            let Some(k) = &self.kmax else {
                return bad("patched variants need mode cutoffs".into());
            };
            if p.len() != self.dim || k.len() != self.dim {
                return bad(format!("patch counts and cutoffs need {} entries", self.dim));
            }
            if p.contains(&0) {
                return bad("patch counts must be positive".into());
            }
            if self.ic_channels > 0 {
                return bad("initial-condition tokens need a pointwise lift".into());
            }
            if self.variant == Variant::Vitno && self.extension > 0 {
                return bad("patch extension applies to FANO heads only".into());
            }
        } else {
            if self.patches.is_some() {
                return bad("patch layouts are only valid for ViTNO and FANO".into());
            }
            if self.kmax.is_some() {
                return bad("mode cutoffs are only valid for ViTNO and FANO".into());
            }
            if self.extension > 0 {
                return bad("patch extension is only valid for FANO".into());
            }
        }
        if self.variant == Variant::MinimalUniversal && self.ic_channels > 0 {
            return bad("the minimal universal variant has no initial-condition token".into());
        }
        Ok(())
    }

    /// Checks that the model can run on a uniform grid of `shape`.
    pub fn check_grid_shape(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "a {}-axis grid for a {}-dimensional model",
                shape.len(),
                self.dim
            )));
        }
        if let (Some(p), Some(k)) = (&self.patches, &self.kmax) {
            for ax in 0..self.dim {
                if shape[ax] % p[ax] != 0 {
                    return Err(Error::InvalidLayout(format!(
                        "axis {ax}: {} patches do not divide {} points",
                        p[ax], shape[ax]
                    )));
                }
                let m = shape[ax] / p[ax] + 2 * self.extension;
                if k[ax] > nyquist_limit(m) {
                    return Err(Error::ModesExceedNyquist { kmax: k[ax], limit: nyquist_limit(m), size: m });
                }
            }
        }
        Ok(())
    }
}

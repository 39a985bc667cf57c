//! Parameter layout, initialization and flattening.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{EncoderLayerParams, FfnParams, LayerNormParams};
use super::{ModelConfig, Variant};
use crate::attention::{AttentionHeadParams, LinearMap};
use crate::error::{Error, Result};
use crate::spectral::{n_modes, FourierMultiplier};

/// What a parameter block does; decides initialization and counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Bias,
    Gain,
    Shift,
    SpectralRe,
    SpectralIm,
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub role: Role,
    /// Fan-in for weights; complex entry count normalizer for spectra.
    pub fan: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Depth-first parameter tree flattened into consecutive slots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    slots: Vec<Slot>,
    len: usize,
}

impl ParamLayout {
    fn add(&mut self, name: String, rows: usize, cols: usize, role: Role, fan: usize) -> usize {
        self.slots.push(Slot { name, offset: self.len, rows, cols, role, fan });
        self.len += rows * cols;
        self.slots.len() - 1
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum MapSlots {
    Matrix(usize),
    Fourier { re: usize, im: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeadSlots {
    pub q: MapSlots,
    pub k: MapSlots,
    pub v: MapSlots,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlots {
    pub heads: Vec<HeadSlots>,
    pub w_mh: usize,
    pub w1: Option<usize>,
    pub w2: Option<usize>,
    pub ln1: Option<(usize, usize)>,
    pub ln2: Option<(usize, usize)>,
    pub w3: usize,
    pub w4: usize,
    pub b1: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LiftSlots {
    Linear { w: usize, b: usize, w0: Option<usize> },
    Fourier { re: usize, im: usize, b: usize },
    Mlp { r1: usize, br: usize, r2: usize, br2: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum OutSlots {
    Linear { w: usize, b: usize },
    Mlp { p1: usize, bp: usize, p2: usize, bp2: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ModelSlots {
    pub lift: LiftSlots,
    pub layers: Vec<LayerSlots>,
    pub out: OutSlots,
}

fn build_layout(c: &ModelConfig) -> (ParamLayout, ModelSlots) {
    let mut l = ParamLayout::default();
    let dm = c.d_model;
    let dk = c.key_dim();
    let lin = c.lift_in();
    let npos = c.positions.channels(c.dim);
    let modes = c.kmax.as_deref().map(n_modes).unwrap_or(0);
    let kmax_len = |l: &mut ParamLayout, name: &str, r_out: usize, r_in: usize| {
        let len = modes * r_out * r_in;
        let re = l.add(format!("{name}.re"), 1, len, Role::SpectralRe, r_in * modes);
        let im = l.add(format!("{name}.im"), 1, len, Role::SpectralIm, r_in * modes);
        MapSlots::Fourier { re, im }
    };

    let lift = match c.variant {
        Variant::Tno | Variant::Fano => {
            let w = l.add("lift.w_in".into(), dm, lin, Role::Weight, lin);
            let b = l.add("lift.b_in".into(), 1, dm, Role::Bias, lin);
            let w0 = (c.ic_channels > 0)
                .then(|| l.add("lift.w_in0".into(), dm, lin + c.ic_channels, Role::Weight, lin + c.ic_channels));
            LiftSlots::Linear { w, b, w0 }
        }
        Variant::Vitno => {
            let MapSlots::Fourier { re, im } = kmax_len(&mut l, "lift.w_in", dm, lin) else { unreachable!() };
            let b = l.add("lift.b_in".into(), 1, dm, Role::Bias, lin);
            LiftSlots::Fourier { re, im, b }
        }
        Variant::MinimalUniversal => {
            let r1 = l.add("lift.r1".into(), dm, lin, Role::Weight, lin);
            let br = l.add("lift.b_r".into(), 1, dm, Role::Bias, lin);
            let r2 = l.add("lift.r2".into(), dm, dm, Role::Weight, dm);
            let br2 = l.add("lift.b_r2".into(), 1, dm, Role::Bias, dm);
            LiftSlots::Mlp { r1, br, r2, br2 }
        }
    };

    let mut layers = Vec::with_capacity(c.n_layers);
    for li in 0..c.n_layers {
        let p = format!("layer{li}");
        let heads = (0..c.n_heads)
            .map(|h| {
                let mut map = |x: &str| match c.variant {
                    Variant::Fano => kmax_len(&mut l, &format!("{p}.head{h}.{x}"), dk, dm),
                    _ => MapSlots::Matrix(l.add(format!("{p}.head{h}.{x}"), dk, dm, Role::Weight, dm)),
                };
                let q = map("q");
                let k = map("k");
                let v = map("v");
                HeadSlots { q, k, v }
            })
            .collect();
        let w_mh = l.add(format!("{p}.w_multihead"), dm, dm, Role::Weight, dm);
        let learn_skip = c.variant == Variant::MinimalUniversal;
        let w1 = learn_skip.then(|| l.add(format!("{p}.w1"), dm, dm, Role::Weight, dm));
        let ln = c.layer_norm && c.variant != Variant::MinimalUniversal;
        let ln1 = ln.then(|| {
            (l.add(format!("{p}.ln1.gamma"), 1, dm, Role::Gain, dm), l.add(format!("{p}.ln1.beta"), 1, dm, Role::Shift, dm))
        });
        let w2 = learn_skip.then(|| l.add(format!("{p}.w2"), dm, dm, Role::Weight, dm));
        let w4 = l.add(format!("{p}.ffn.w4"), dm, dm, Role::Weight, dm);
        let b1 = l.add(format!("{p}.ffn.b1"), 1, dm, Role::Bias, dm);
        let w3 = l.add(format!("{p}.ffn.w3"), dm, dm, Role::Weight, dm);
        let b2 = l.add(format!("{p}.ffn.b2"), 1, dm, Role::Bias, dm);
        let ln2 = ln.then(|| {
            (l.add(format!("{p}.ln2.gamma"), 1, dm, Role::Gain, dm), l.add(format!("{p}.ln2.beta"), 1, dm, Role::Shift, dm))
        });
        layers.push(LayerSlots { heads, w_mh, w1, w2, ln1, ln2, w3, w4, b1, b2 });
    }

    let out = match c.variant {
        Variant::MinimalUniversal => {
            let p1 = l.add("out.p1".into(), dm, dm + npos, Role::Weight, dm + npos);
            let bp = l.add("out.b_p".into(), 1, dm, Role::Bias, dm + npos);
            let p2 = l.add("out.p2".into(), c.d_out, dm, Role::Weight, dm);
            let bp2 = l.add("out.b_p2".into(), 1, c.d_out, Role::Bias, dm);
            OutSlots::Mlp { p1, bp, p2, bp2 }
        }
        _ => {
            let w = l.add("out.w_out".into(), c.d_out, dm, Role::Weight, dm);
            let b = l.add("out.b_out".into(), 1, c.d_out, Role::Bias, dm);
            OutSlots::Linear { w, b }
        }
    };
    (l, ModelSlots { lift, layers, out })
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics over all rows of all samples; degenerate channels get
    /// unit spread.
    pub fn from_rows<'a>(samples: impl IntoIterator<Item = ArrayView2<'a, f64>>, channels: usize) -> Self {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut n = 0usize;
        for s in samples {
            for row in s.rows() {
                for (c, &x) in row.iter().enumerate() {
                    sum[c] += x;
                    sq[c] += x * x;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let v = (q / n - m * m).max(0.0).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for ((t, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *t = (*t - m) / s;
            }
        }
        y
    }

    pub fn normalize_slice(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((t, m), s)| (t - m) / s).collect()
    }
}

/// Data normalization carried with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input: ChannelStats,
    pub output: ChannelStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ic: Option<ChannelStats>,
}

/// A model: configuration, flat parameter vector and its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    layout: ParamLayout,
    pub(crate) slots: ModelSlots,
    values: Vec<f64>,
    normalizer: Option<Normalizer>,
}

impl ModelParameters {
    /// Random initialization: weights uniform in `+-1/sqrt(fan_in)`,
    /// spectra complex Gaussian with scale `1/(r_in * modes)`, gains one,
    /// biases and shifts zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.len()];
        for s in layout.slots() {
            let v = &mut values[s.range()];
            match s.role {
                Role::Weight => {
                    let a = 1.0 / (s.fan as f64).sqrt();
                    v.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
                }
                Role::SpectralRe | Role::SpectralIm => {
                    let n = Normal::new(0.0, 1.0 / s.fan as f64).expect("positive scale");
                    v.iter_mut().for_each(|x| *x = n.sample(&mut rng));
                }
                Role::Gain => v.fill(1.0),
                Role::Bias | Role::Shift => v.fill(0.0),
            }
        }
        Ok(Self { config, layout, slots, values, normalizer: None })
    }

    /// Rebuilds a model from a flat vector.
    pub fn from_flat(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = build_layout(&config);
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a model with {} parameters",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { config, layout, slots, values, normalizer: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    pub fn flatten_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replaces the parameter vector, keeping the layout.
    pub fn unflatten(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a model with {} parameters",
                values.len(),
                self.values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, n: Option<Normalizer>) {
        self.normalizer = n;
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.layout.slots().iter().find(|s| s.name == name)
    }

    pub(crate) fn matrix(&self, slot: usize) -> Array2<f64> {
        let s = &self.layout.slots()[slot];
        Array2::from_shape_vec((s.rows, s.cols), self.values[s.range()].to_vec()).expect("slot shape")
    }

    pub(crate) fn vector(&self, slot: usize) -> Array1<f64> {
        Array1::from(self.values[self.layout.slots()[slot].range()].to_vec())
    }

    /// Writes `m` into the named slot.
    pub fn set_slot(&mut self, name: &str, m: &Array2<f64>) -> Result<()> {
        let s = self
            .slot(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no parameter named {name}")))?
            .clone();
        if m.len() != s.len() {
            return Err(Error::DimensionMismatch(format!("{} values for slot {name} of {}", m.len(), s.len())));
        }
        self.values[s.range()].iter_mut().zip(m.iter()).for_each(|(a, &b)| *a = b);
        Ok(())
    }

    pub(crate) fn multiplier(&self, re: usize, im: usize, r_out: usize, r_in: usize) -> FourierMultiplier {
        FourierMultiplier::new(
            self.config.kmax.clone().expect("spectral slots need cutoffs"),
            r_out,
            r_in,
            self.values[self.layout.slots()[re].range()].to_vec(),
            self.values[self.layout.slots()[im].range()].to_vec(),
        )
        .expect("slot sizes follow the layout")
    }

    pub(crate) fn linear_map(&self, m: &MapSlots, r_out: usize, r_in: usize) -> LinearMap {
        match m {
            MapSlots::Matrix(s) => LinearMap::matrix(self.matrix(*s)),
            MapSlots::Fourier { re, im } => LinearMap::fourier(self.multiplier(*re, *im, r_out, r_in)),
        }
    }

    /// Plain parameters of encoder layer `l`.
    pub fn layer(&self, l: usize) -> Result<EncoderLayerParams> {
        let ls = self
            .slots
            .layers
            .get(l)
            .ok_or_else(|| Error::InvalidConfig(format!("layer {l} of {}", self.slots.layers.len())))?;
        let (dm, dk) = (self.config.d_model, self.config.key_dim());
        let heads = ls
            .heads
            .iter()
            .map(|h| {
                AttentionHeadParams::new(
                    self.linear_map(&h.q, dk, dm),
                    self.linear_map(&h.k, dk, dm),
                    self.linear_map(&h.v, dk, dm),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let ln = |p: Option<(usize, usize)>| {
            p.map(|(g, b)| LayerNormParams { gamma: self.vector(g), beta: self.vector(b), eps: self.config.ln_eps })
        };
        Ok(EncoderLayerParams {
            heads,
            w_multihead: self.matrix(ls.w_mh),
            w1: ls.w1.map_or_else(|| Array2::eye(dm), |s| self.matrix(s)),
            w2: ls.w2.map_or_else(|| Array2::eye(dm), |s| self.matrix(s)),
            ln1: ln(ls.ln1),
            ln2: ln(ls.ln2),
            ffn: FfnParams {
                w3: self.matrix(ls.w3),
                w4: self.matrix(ls.w4),
                b1: self.vector(ls.b1),
                b2: self.vector(ls.b2),
            },
            activation: self.config.activation,
        })
    }

    /// Number of trainable scalars in the model: weights, gains and one
    /// per complex spectral entry. Biases and shifts are left out.
    pub fn count_params(&self) -> usize {
        count_slots(&self.layout)
    }
}

fn count_slots(layout: &ParamLayout) -> usize {
    layout
        .slots()
        .iter()
        .filter(|s| matches!(s.role, Role::Weight | Role::Gain | Role::SpectralRe))
        .map(Slot::len)
        .sum()
}

/// Parameter count of a configuration, without biases and counting each
/// complex spectral entry once.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    Ok(count_slots(&build_layout(config).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, Variant};

    #[test]
    fn flatten_roundtrip_bit_exact() {
        let m = ModelParameters::init(ModelConfig::tno(1, 2, 1, 8, 2, 2), 4).unwrap();
        let flat = m.flatten().to_vec();
        let back = ModelParameters::from_flat(m.config().clone(), flat.clone()).unwrap();
        assert_eq!(back, m);
        assert!(back.flatten().iter().zip(&flat).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ModelParameters::from_flat(m.config().clone(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn layout_is_contiguous_and_depth_first() {
        let m = ModelParameters::init(ModelConfig::patched(Variant::Fano, 1, 1, 4, 2, 2, vec![2], vec![1]), 1).unwrap();
        let mut end = 0;
        for s in m.layout().slots() {
            assert_eq!(s.offset, end);
            end += s.len();
        }
        assert_eq!(end, m.layout().len());
        let names: Vec<&str> = m.layout().slots().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names[0], "lift.w_in");
        assert_eq!(names[2], "layer0.head0.q.re");
        assert_eq!(*names.last().unwrap(), "out.b_out");
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::tno(1, 1, 1, 8, 1, 1);
        assert_eq!(ModelParameters::init(c.clone(), 3).unwrap(), ModelParameters::init(c.clone(), 3).unwrap());
        assert_ne!(ModelParameters::init(c.clone(), 3).unwrap(), ModelParameters::init(c, 4).unwrap());
    }

    #[test]
    fn stats_and_normalization() {
        let a = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let s = ChannelStats::from_rows([a.view()], 2);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let n = s.normalize(&a);
        assert_eq!(n, ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}

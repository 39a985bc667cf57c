//! Attention between functions: matrix attention, quadrature-weighted
//! self and cross attention, the Monte-Carlo estimator and patched
//! attention with `L^2` patch inner products.
//!
//! Every variant reduces to one kernel: logits `s (q . m) k^T` where `m` is an
//! optional per-column metric, a key-weighted softmax over rows, and a
//! probability-weighted sum of values. [`attention_kernel`] and
//! [`attention_kernel_backward`] are shared with the differentiable models.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PatchedFunction, QuadratureWeights, SampledFunction};
use crate::spectral::{FourierMultiplier, SpectralPlan};

/// A linear map applied pointwise (matrix) or per patch (Fourier multiplier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearMap {
    Matrix { weights: Array2<f64> },
    Fourier { multiplier: FourierMultiplier },
}

impl LinearMap {
    pub fn matrix(weights: Array2<f64>) -> Self {
        LinearMap::Matrix { weights }
    }

    pub fn fourier(multiplier: FourierMultiplier) -> Self {
        LinearMap::Fourier { multiplier }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearMap::Matrix { weights } => weights.nrows(),
            LinearMap::Fourier { multiplier } => multiplier.r_out(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LinearMap::Matrix { weights } => weights.ncols(),
            LinearMap::Fourier { multiplier } => multiplier.r_in(),
        }
    }

    pub fn is_pointwise(&self) -> bool {
        matches!(self, LinearMap::Matrix { .. })
    }

    /// Applies a matrix map to every row of `x`.
    pub fn apply_points(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            LinearMap::Matrix { weights } => {
                check_cols(x.ncols(), weights.ncols())?;
                Ok(x.dot(&weights.t()))
            }
            LinearMap::Fourier { .. } => {
                Err(Error::InvalidConfig("a Fourier multiplier needs patch structure".into()))
            }
        }
    }

    /// Applies the map to `n_patches` consecutive blocks of rows, each a
    /// function on a uniform grid of `patch_shape`. Multipliers act on the
    /// patch after even extension by `extension` points per side.
    pub fn apply_patches(
        &self,
        x: ArrayView2<f64>,
        n_patches: usize,
        patch_shape: &[usize],
        extension: usize,
    ) -> Result<Array2<f64>> {
        match self {
            LinearMap::Matrix { .. } => self.apply_points(x),
            LinearMap::Fourier { multiplier } => {
                SpectralPlan::new(patch_shape, multiplier.kmax(), extension)?.apply(multiplier, x, n_patches)
            }
        }
    }

    /// The same map multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            LinearMap::Matrix { weights } => LinearMap::matrix(weights * s),
            LinearMap::Fourier { multiplier } => {
                let re = multiplier.re().iter().map(|x| x * s).collect();
                let im = multiplier.im().iter().map(|x| x * s).collect();
                LinearMap::fourier(
                    FourierMultiplier::new(multiplier.kmax().to_vec(), multiplier.r_out(), multiplier.r_in(), re, im)
                        .expect("same shape"),
                )
            }
        }
    }
}

fn check_cols(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("{got} input channels for a map expecting {want}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Pointwise,
    OperatorValued,
}

/// Query, key and value maps of one attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHeadParams {
    q_map: LinearMap,
    k_map: LinearMap,
    v_map: LinearMap,
}

impl AttentionHeadParams {
    pub fn new(q_map: LinearMap, k_map: LinearMap, v_map: LinearMap) -> Result<Self> {
        let pointwise = q_map.is_pointwise();
        if k_map.is_pointwise() != pointwise || v_map.is_pointwise() != pointwise {
            return Err(Error::InvalidConfig("query, key and value maps must be of one kind".into()));
        }
        if q_map.out_dim() != k_map.out_dim() {
            return Err(Error::DimensionMismatch(format!(
                "query dimension {} differs from key dimension {}",
                q_map.out_dim(),
                k_map.out_dim()
            )));
        }
        if k_map.in_dim() != v_map.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "key input {} differs from value input {}",
                k_map.in_dim(),
                v_map.in_dim()
            )));
        }
        Ok(Self { q_map, k_map, v_map })
    }

    /// Pointwise head from `Q`, `K`, `V` matrices.
    pub fn pointwise(q: Array2<f64>, k: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        Self::new(LinearMap::matrix(q), LinearMap::matrix(k), LinearMap::matrix(v))
    }

    /// Operator-valued head from three Fourier multipliers.
    pub fn operator_valued(q: FourierMultiplier, k: FourierMultiplier, v: FourierMultiplier) -> Result<Self> {
        Self::new(LinearMap::fourier(q), LinearMap::fourier(k), LinearMap::fourier(v))
    }

    pub fn kind(&self) -> HeadKind {
        if self.q_map.is_pointwise() {
            HeadKind::Pointwise
        } else {
            HeadKind::OperatorValued
        }
    }

    pub fn q_map(&self) -> &LinearMap {
        &self.q_map
    }

    pub fn k_map(&self) -> &LinearMap {
        &self.k_map
    }

    pub fn v_map(&self) -> &LinearMap {
        &self.v_map
    }

    pub fn key_dim(&self) -> usize {
        self.q_map.out_dim()
    }

    pub fn value_dim(&self) -> usize {
        self.v_map.out_dim()
    }

    /// The head with its logits multiplied by `s`.
    pub fn with_temperature(&self, s: f64) -> Self {
        Self { q_map: self.q_map.scaled(s), ..self.clone() }
    }

    fn require_pointwise(&self) -> Result<()> {
        match self.kind() {
            HeadKind::Pointwise => Ok(()),
            HeadKind::OperatorValued => {
                Err(Error::InvalidConfig("operator-valued heads need patched inputs".into()))
            }
        }
    }
}

/// Logits together with the key weights that turn them into probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub logits: Array2<f64>,
    pub key_weights: Option<QuadratureWeights>,
}

impl AttentionScores {
    pub fn probabilities(&self) -> Result<Array2<f64>> {
        softmax_rows(self.logits.view(), self.key_weights.as_ref())
    }
}

/// Row-wise softmax, `p_jk = w_k exp(l_jk - m_j) / sum_l w_l exp(l_jl - m_j)`
/// with `m_j` the row maximum. `None` means unit weights.
pub fn softmax_rows(logits: ArrayView2<f64>, key_weights: Option<&QuadratureWeights>) -> Result<Array2<f64>> {
    if let Some(w) = key_weights {
        if w.len() != logits.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} key weights for {} keys",
                w.len(),
                logits.ncols()
            )));
        }
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { stage: "attention logits".into() });
    }
    Ok(softmax_in_place(logits.to_owned(), key_weights.map(|w| w.as_slice())))
}

fn softmax_in_place(mut a: Array2<f64>, weights: Option<&[f64]>) -> Array2<f64> {
    for mut row in a.axis_iter_mut(Axis(0)) {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut total = 0.0;
        for (k, x) in row.iter_mut().enumerate() {
            let w = weights.map_or(1.0, |w| w[k]);
            *x = w * (*x - m).exp();
            total += *x;
        }
        row.mapv_inplace(|x| x / total);
    }
    a
}

/// Forward attention kernel.
///
/// `q` is `n_q x c`, `k` is `n_k x c`, `v` is `n_k x c_v`. Logits are
/// `scale * sum_c q_jc m_c k_kc`. Returns the output `n_q x c_v` and the
/// probabilities `n_q x n_k`.
pub fn attention_kernel(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    metric: Option<&[f64]>,
    key_weights: Option<&[f64]>,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    let logits = match metric {
        Some(m) => {
            let mut qm = q.to_owned();
            for mut row in qm.axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(m).for_each(|(x, &w)| *x *= w);
            }
            qm.dot(&k.t())
        }
        None => q.dot(&k.t()),
    };
    let logits = if scale == 1.0 { logits } else { logits * scale };
    let probs = softmax_in_place(logits, key_weights);
    (probs.dot(&v), probs)
}

/// Vector-Jacobian product of [`attention_kernel`]; returns gradients with
/// respect to `q`, `k` and `v`.
pub fn attention_kernel_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    metric: Option<&[f64]>,
    scale: f64,
    probs: ArrayView2<f64>,
    grad_out: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let gv = probs.t().dot(&grad_out);
    let mut gl = grad_out.dot(&v.t());
    for (mut g, p) in gl.axis_iter_mut(Axis(0)).zip(probs.axis_iter(Axis(0))) {
        let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(p).for_each(|(a, &b)| *a = b * (*a - dot));
    }
    if scale != 1.0 {
        gl *= scale;
    }
    let mut gq = gl.dot(&k);
    let gk = match metric {
        Some(m) => {
            for mut row in gq.axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(m).for_each(|(x, &w)| *x *= w);
            }
            let mut qm = q.to_owned();
            for mut row in qm.axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(m).for_each(|(x, &w)| *x *= w);
            }
            gl.t().dot(&qm)
        }
        None => gl.t().dot(&q),
    };
    (gq, gk, gv)
}

/// `softmax(u Q^T K u^T) u V^T` with unit key weights.
pub fn discrete_self_attention(u: ArrayView2<f64>, params: &AttentionHeadParams) -> Result<Array2<f64>> {
    params.require_pointwise()?;
    let q = params.q_map.apply_points(u)?;
    let k = params.k_map.apply_points(u)?;
    let v = params.v_map.apply_points(u)?;
    Ok(attention_kernel(q.view(), k.view(), v.view(), None, None, 1.0).0)
}

fn check_weights(w: &QuadratureWeights, n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!("{} quadrature weights for {n} points", w.len())));
    }
    Ok(())
}

/// Self attention whose softmax carries the quadrature weights of the grid.
pub fn quadrature_self_attention(
    u: &SampledFunction,
    params: &AttentionHeadParams,
    w: &QuadratureWeights,
) -> Result<SampledFunction> {
    quadrature_cross_attention(u, u, params, w)
}

/// Cross attention: queries from `u` on `D`, keys and values from `v` on
/// `E` weighted by `w_e`. The output lives on the grid of `u`.
pub fn quadrature_cross_attention(
    u: &SampledFunction,
    v: &SampledFunction,
    params: &AttentionHeadParams,
    w_e: &QuadratureWeights,
) -> Result<SampledFunction> {
    params.require_pointwise()?;
    check_weights(w_e, v.len())?;
    let q = params.q_map.apply_points(u.values().view())?;
    let k = params.k_map.apply_points(v.values().view())?;
    let val = params.v_map.apply_points(v.values().view())?;
    let (out, _) = attention_kernel(q.view(), k.view(), val.view(), None, Some(w_e.as_slice()), 1.0);
    SampledFunction::new(u.grid().clone(), out)
}

/// Monte-Carlo estimate of continuum attention at the query values, using
/// key and value samples drawn uniformly from the domain.
pub fn mc_attention_estimate(
    u_at_queries: ArrayView2<f64>,
    u_at_samples: ArrayView2<f64>,
    params: &AttentionHeadParams,
) -> Result<Array2<f64>> {
    params.require_pointwise()?;
    if u_at_samples.nrows() == 0 {
        return Err(Error::Empty("Monte-Carlo estimate needs at least one sample".into()));
    }
    let q = params.q_map.apply_points(u_at_queries)?;
    let k = params.k_map.apply_points(u_at_samples)?;
    let v = params.v_map.apply_points(u_at_samples)?;
    Ok(attention_kernel(q.view(), k.view(), v.view(), None, None, 1.0).0)
}

/// Per-point weights of the discrete `L^2(D')` product: every cell of the
/// patch grid gets `|D'| / M`.
pub fn patch_cell_weights(p: &PatchedFunction) -> QuadratureWeights {
    let m = p.layout().patch_len();
    QuadratureWeights::uniform(m, p.domain_patch().volume()).expect("patch volume is positive")
}

/// Metric on flattened patches: point weight `i` repeated for each of `c`
/// channels.
pub fn patch_metric(weights: &[f64], channels: usize) -> Vec<f64> {
    weights.iter().flat_map(|&w| std::iter::repeat_n(w, channels)).collect()
}

/// Attention over patch indices with `L^2(D')` logits.
pub fn patched_self_attention(
    u: &PatchedFunction,
    params: &AttentionHeadParams,
    patch_weights: &QuadratureWeights,
) -> Result<PatchedFunction> {
    patched_cross_attention(u, u, params, patch_weights)
}

/// Patched cross attention: queries from `u` over `P` patches, keys and
/// values from `v` over `O` patches on a congruent patch domain.
pub fn patched_cross_attention(
    u: &PatchedFunction,
    v: &PatchedFunction,
    params: &AttentionHeadParams,
    patch_weights: &QuadratureWeights,
) -> Result<PatchedFunction> {
    patched_cross_attention_ext(u, v, params, patch_weights, 0)
}

/// [`patched_cross_attention`] with multipliers applied to patches evenly
/// extended by `extension` points per side.
pub fn patched_cross_attention_ext(
    u: &PatchedFunction,
    v: &PatchedFunction,
    params: &AttentionHeadParams,
    patch_weights: &QuadratureWeights,
    extension: usize,
) -> Result<PatchedFunction> {
    let shape = u.layout().patch_shape();
    if v.layout().patch_shape() != shape {
        return Err(Error::InvalidLayout(format!(
            "patch shapes {:?} and {:?} differ",
            shape,
            v.layout().patch_shape()
        )));
    }
    let (vu, vv) = (u.domain_patch().volume(), v.domain_patch().volume());
    if (vu - vv).abs() > 1e-12 * vu.max(vv) {
        return Err(Error::InvalidLayout(format!("patch domains of volume {vu} and {vv} are not congruent")));
    }
    let m = u.layout().patch_len();
    check_weights(patch_weights, m)?;
    let (p, o) = (u.layout().n_patches(), v.layout().n_patches());

    let q = params.q_map.apply_patches(u.rows(), p, shape, extension)?;
    let k = params.k_map.apply_patches(v.rows(), o, shape, extension)?;
    let val = params.v_map.apply_patches(v.rows(), o, shape, extension)?;
    let (dk, dv) = (params.key_dim(), params.value_dim());
    let qf = q.into_shape_with_order((p, m * dk)).expect("contiguous");
    let kf = k.into_shape_with_order((o, m * dk)).expect("contiguous");
    let vf = val.into_shape_with_order((o, m * dv)).expect("contiguous");
    let metric = patch_metric(patch_weights.as_slice(), dk);
    let (out, _) = attention_kernel(qf.view(), kf.view(), vf.view(), Some(&metric), None, 1.0);
    let out = out.into_shape_with_order((p, m, dv)).expect("contiguous");
    u.with_values(Array3::from(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{patch_split, trapezoid_weights, Domain, Grid, GridSpec, PatchLayout};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Triple-loop attention with explicit key weights.
    fn oracle(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, w: &[f64]) -> Array2<f64> {
        let (nq, nk) = (q.nrows(), k.nrows());
        let mut out = Array2::zeros((nq, v.ncols()));
        for j in 0..nq {
            let mut logits = vec![0.0; nk];
            for kk in 0..nk {
                for c in 0..q.ncols() {
                    logits[kk] += q[[j, c]] * k[[kk, c]];
                }
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..nk).map(|kk| w[kk] * (logits[kk] - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for kk in 0..nk {
                for c in 0..v.ncols() {
                    out[[j, c]] += e[kk] / z * v[[kk, c]];
                }
            }
        }
        out
    }

    fn line(n: usize) -> Grid {
        Grid::unit_closed(vec![n]).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(Array2::zeros((1, 4)).view(), None).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let w = QuadratureWeights::new(vec![0.25, 0.5, 0.25]).unwrap();
        let p = softmax_rows(Array2::zeros((2, 3)).view(), Some(&w)).unwrap();
        assert_eq!(p.row(1).to_vec(), vec![0.25, 0.5, 0.25]);
        let p = softmax_rows(array![[1.0, -1.0]].view(), None).unwrap();
        let e = std::f64::consts::E;
        assert!((p[[0, 0]] - e / (e + 1.0 / e)).abs() < 1e-15);
        assert!((p[[0, 0]] - 0.88080).abs() < 1e-5);
        assert!((p[[0, 1]] - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax_rows(array![[1000.0, 999.0, -1000.0]].view(), None).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(softmax_rows(array![[f64::NAN, 0.0]].view(), None).is_err());
    }

    #[test]
    fn discrete_tanh_example() {
        let one = array![[1.0]];
        let h = AttentionHeadParams::pointwise(one.clone(), one.clone(), one).unwrap();
        let out = discrete_self_attention(array![[1.0], [-1.0]].view(), &h).unwrap();
        assert!((out[[0, 0]] - 1f64.tanh()).abs() < 1e-15);
        assert!((out[[1, 0]] + 1f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn discrete_zero_qk_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = rand_mat(&mut rng, 7, 3);
        let h = AttentionHeadParams::pointwise(Array2::zeros((2, 3)), Array2::zeros((2, 3)), Array2::eye(3)).unwrap();
        let out = discrete_self_attention(u.view(), &h).unwrap();
        let mean = u.mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn discrete_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(1..=32);
            let (du, dk, dv) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let u = rand_mat(&mut rng, n, du);
            let (q, k, v) = (rand_mat(&mut rng, dk, du), rand_mat(&mut rng, dk, du), rand_mat(&mut rng, dv, du));
            let h = AttentionHeadParams::pointwise(q.clone(), k.clone(), v.clone()).unwrap();
            let out = discrete_self_attention(u.view(), &h).unwrap();
            let expect = oracle(&u.dot(&q.t()), &u.dot(&k.t()), &u.dot(&v.t()), &vec![1.0; n]);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn head_validation() {
        let m = Array2::<f64>::zeros((2, 3));
        assert!(AttentionHeadParams::pointwise(m.clone(), Array2::zeros((3, 3)), m.clone()).is_err());
        assert!(AttentionHeadParams::pointwise(m.clone(), m.clone(), Array2::zeros((2, 4))).is_err());
        let f = FourierMultiplier::zeros(vec![1], 2, 3);
        assert!(AttentionHeadParams::new(LinearMap::matrix(m.clone()), LinearMap::fourier(f), LinearMap::matrix(m)).is_err());
        let h = AttentionHeadParams::pointwise(Array2::eye(3), Array2::eye(3), Array2::eye(3)).unwrap();
        assert!(discrete_self_attention(Array2::zeros((2, 2)).view(), &h).is_err());
    }

    #[test]
    fn quadrature_mean_example() {
        let g = line(3);
        let u = SampledFunction::new(g.clone(), array![[2.0], [4.0], [6.0]]).unwrap();
        let w = trapezoid_weights(&g).unwrap();
        let h = AttentionHeadParams::pointwise(array![[0.0]], array![[0.0]], array![[1.0]]).unwrap();
        let out = quadrature_self_attention(&u, &h, &w).unwrap();
        assert!(out.values().iter().all(|&x| (x - 4.0).abs() < 1e-14));
    }

    #[test]
    fn quadrature_constant_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = line(9);
        let c = array![0.3, -1.2];
        let u = SampledFunction::from_fn(g.clone(), 2, |_| c.to_vec()).unwrap();
        let (q, k, v) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 3, 2));
        let h = AttentionHeadParams::pointwise(q, k, v.clone()).unwrap();
        let out = quadrature_self_attention(&u, &h, &trapezoid_weights(&g).unwrap()).unwrap();
        let vc = v.dot(&c);
        for row in out.values().rows() {
            for (a, b) in row.iter().zip(&vc) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    fn smooth_u(x: &[f64]) -> Vec<f64> {
        vec![(2.0 * std::f64::consts::PI * x[0]).sin() + x[0] * x[0]]
    }

    /// Attention at a single query point against an N-point trapezoid rule
    /// or an N-point uniform rule.
    fn single_query(n: usize, trapezoid: bool) -> f64 {
        let g = line(n);
        let u = SampledFunction::from_fn(g.clone(), 1, smooth_u).unwrap();
        let w = if trapezoid {
            trapezoid_weights(&g).unwrap()
        } else {
            QuadratureWeights::uniform(n, 1.0).unwrap()
        };
        let x0 = Grid::new(Domain::unit(1), GridSpec::irregular(vec![0.3, 0.6])).unwrap();
        let q = SampledFunction::from_fn(x0, 1, smooth_u).unwrap();
        let h = AttentionHeadParams::pointwise(array![[1.3]], array![[0.7]], array![[1.0]]).unwrap();
        quadrature_cross_attention(&q, &u, &h, &w).unwrap().values()[[0, 0]]
    }

    #[test]
    fn uniform_and_trapezoid_converge_together() {
        let reference = single_query(8192, true);
        let (t16, u16) = (single_query(16, true), single_query(16, false));
        assert!((t16 - u16).abs() > 1e-4);
        let (t1k, u1k) = (single_query(1024, true), single_query(1024, false));
        assert!((t1k - reference).abs() < (t16 - reference).abs());
        assert!((u1k - reference).abs() < (u16 - reference).abs());
        assert!((t1k - reference).abs() < 1e-5);
        assert!((u1k - reference).abs() < 1e-2);
    }

    #[test]
    fn cross_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gd = line(2);
        let ge = Grid::new(Domain::interval(0.0, 2.0).unwrap(), GridSpec::irregular(vec![0.0, 0.5, 2.0])).unwrap();
        let u = SampledFunction::new(gd.clone(), rand_mat(&mut rng, 2, 2)).unwrap();
        let v = SampledFunction::new(ge.clone(), rand_mat(&mut rng, 3, 3)).unwrap();
        let (q, k, vm) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 3), rand_mat(&mut rng, 4, 3));
        let h = AttentionHeadParams::new(LinearMap::matrix(q.clone()), LinearMap::matrix(k.clone()), LinearMap::matrix(vm.clone())).unwrap();
        let w = trapezoid_weights(&ge).unwrap();
        let out = quadrature_cross_attention(&u, &v, &h, &w).unwrap();
        assert_eq!(out.grid(), &gd);
        let expect = oracle(&u.values().dot(&q.t()), &v.values().dot(&k.t()), &v.values().dot(&vm.t()), w.as_slice());
        for (a, b) in out.values().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12);
        }

        let c = SampledFunction::from_fn(ge.clone(), 3, |_| vec![1.0, -2.0, 0.5]).unwrap();
        let out = quadrature_cross_attention(&u, &c, &h, &w).unwrap();
        let vc = vm.dot(&array![1.0, -2.0, 0.5]);
        for row in out.values().rows() {
            for (a, b) in row.iter().zip(&vc) {
                assert!((a - b).abs() < 1e-14);
            }
        }

        let hs = AttentionHeadParams::pointwise(rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2)).unwrap();
        let wd = trapezoid_weights(&gd).unwrap();
        assert_eq!(
            quadrature_cross_attention(&u, &u, &hs, &wd).unwrap(),
            quadrature_self_attention(&u, &hs, &wd).unwrap()
        );
    }

    #[test]
    fn mc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let queries = rand_mat(&mut rng, 5, 2);
        let h = AttentionHeadParams::pointwise(rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 2, 2)).unwrap();
        let one = rand_mat(&mut rng, 1, 2);
        let out = mc_attention_estimate(queries.view(), one.view(), &h).unwrap();
        let vu = h.v_map().apply_points(one.view()).unwrap();
        for row in out.rows() {
            assert!((&row - &vu.row(0)).iter().all(|x| x.abs() < 1e-15));
        }
        let h0 = AttentionHeadParams::pointwise(Array2::zeros((3, 2)), Array2::zeros((3, 2)), Array2::eye(2)).unwrap();
        let samples = rand_mat(&mut rng, 11, 2);
        let out = mc_attention_estimate(queries.view(), samples.view(), &h0).unwrap();
        let mean = samples.mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            assert!((&row - &mean).iter().all(|x| x.abs() < 1e-14));
        }
        assert!(mc_attention_estimate(queries.view(), Array2::zeros((0, 2)).view(), &h).is_err());
    }

    fn grid2(n: usize) -> Grid {
        Grid::new(Domain::unit(2), GridSpec::periodic(vec![n, n])).unwrap()
    }

    #[test]
    fn patched_single_patch_is_value_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid2(4);
        let u = SampledFunction::new(g, rand_mat(&mut rng, 16, 2)).unwrap();
        let pu = patch_split(&u, &PatchLayout::new(&[4, 4], &[1, 1]).unwrap()).unwrap();
        let h = AttentionHeadParams::pointwise(rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 3, 2)).unwrap();
        let out = patched_self_attention(&pu, &h, &patch_cell_weights(&pu)).unwrap();
        let expect = h.v_map().apply_points(pu.rows()).unwrap();
        for (a, b) in out.rows().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn patched_constant_patches_scale_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = grid2(6);
        let layout = PatchLayout::new(&[6, 6], &[3, 2]).unwrap();
        let consts = rand_mat(&mut rng, 6, 2);
        let perm = layout.permutation();
        let mut vals = Array2::zeros((36, 2));
        for (r, &src) in perm.iter().enumerate() {
            vals.row_mut(src).assign(&consts.row(r / layout.patch_len()));
        }
        let u = SampledFunction::new(g, vals).unwrap();
        let pu = patch_split(&u, &layout).unwrap();
        let (q, k, v) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2));
        let h = AttentionHeadParams::pointwise(q.clone(), k.clone(), v.clone()).unwrap();
        let out = patched_self_attention(&pu, &h, &patch_cell_weights(&pu)).unwrap();
        let vol = pu.domain_patch().volume();
        let expect = oracle(&(consts.dot(&q.t()) * vol), &consts.dot(&k.t()), &consts.dot(&v.t()), &[1.0; 6]);
        for p in 0..6 {
            for i in 0..layout.patch_len() {
                for c in 0..2 {
                    assert!((out.values()[[p, i, c]] - expect[[p, c]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn patched_zero_qk_is_patch_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = grid2(8);
        let u = SampledFunction::new(g, rand_mat(&mut rng, 64, 1)).unwrap();
        let pu = patch_split(&u, &PatchLayout::new(&[8, 8], &[2, 2]).unwrap()).unwrap();
        let z = FourierMultiplier::zeros(vec![1, 1], 1, 1);
        let h = AttentionHeadParams::operator_valued(z.clone(), z, FourierMultiplier::identity(vec![1, 1], 1)).unwrap();
        let out = patched_self_attention(&pu, &h, &patch_cell_weights(&pu)).unwrap();
        let vu = h.v_map().apply_patches(pu.rows(), 4, &[4, 4], 0).unwrap();
        let vu = vu.into_shape_with_order((4, 16)).unwrap();
        let mean = vu.mean_axis(Axis(0)).unwrap();
        for p in 0..4 {
            for i in 0..16 {
                assert!((out.values()[[p, i, 0]] - mean[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn patched_cross_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gu = Grid::new(Domain::interval(0.0, 2.0).unwrap(), GridSpec::periodic(vec![8])).unwrap();
        let gv = Grid::new(Domain::interval(0.0, 3.0).unwrap(), GridSpec::periodic(vec![12])).unwrap();
        let u = SampledFunction::new(gu, rand_mat(&mut rng, 8, 2)).unwrap();
        let v = SampledFunction::new(gv.clone(), rand_mat(&mut rng, 12, 2)).unwrap();
        let pu = patch_split(&u, &PatchLayout::new(&[8], &[2]).unwrap()).unwrap();
        let pv = patch_split(&v, &PatchLayout::new(&[12], &[3]).unwrap()).unwrap();
        let (q, k, vm) = (rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 2, 2));
        let h = AttentionHeadParams::pointwise(q.clone(), k.clone(), vm.clone()).unwrap();
        let w = patch_cell_weights(&pv);
        let out = patched_cross_attention(&pu, &pv, &h, &w).unwrap();

        // Brute force: logits are weighted sums over patch points.
        let qv = pu.rows().dot(&q.t());
        let kv = pv.rows().dot(&k.t());
        let vv = pv.rows().dot(&vm.t());
        for j in 0..2 {
            let logits: Vec<f64> = (0..3)
                .map(|kk| {
                    let mut s = 0.0;
                    for i in 0..4 {
                        for c in 0..3 {
                            s += w.as_slice()[i] * qv[[j * 4 + i, c]] * kv[[kk * 4 + i, c]];
                        }
                    }
                    s
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for i in 0..4 {
                for c in 0..2 {
                    let expect: f64 = (0..3).map(|kk| e[kk] / z * vv[[kk * 4 + i, c]]).sum();
                    assert!((out.values()[[j, i, c]] - expect).abs() <= 1e-12);
                }
            }
        }

        let single = SampledFunction::new(
            Grid::new(Domain::interval(0.0, 1.0).unwrap(), GridSpec::periodic(vec![4])).unwrap(),
            rand_mat(&mut rng, 4, 2),
        )
        .unwrap();
        let ps = patch_split(&single, &PatchLayout::new(&[4], &[1]).unwrap()).unwrap();
        let out = patched_cross_attention(&pu, &ps, &h, &w).unwrap();
        let vs = ps.rows().dot(&vm.t());
        for j in 0..2 {
            for i in 0..4 {
                for c in 0..2 {
                    assert!((out.values()[[j, i, c]] - vs[[i, c]]).abs() < 1e-14);
                }
            }
        }

        let bad = patch_split(&v, &PatchLayout::new(&[12], &[2]).unwrap()).unwrap();
        assert!(patched_cross_attention(&pu, &bad, &h, &patch_cell_weights(&bad)).is_err());
        let wide = SampledFunction::new(
            Grid::new(Domain::interval(0.0, 6.0).unwrap(), GridSpec::periodic(vec![12])).unwrap(),
            rand_mat(&mut rng, 12, 2),
        )
        .unwrap();
        let pw = patch_split(&wide, &PatchLayout::new(&[12], &[3]).unwrap()).unwrap();
        assert!(patched_cross_attention(&pu, &pw, &h, &w).is_err());

        let hs = AttentionHeadParams::pointwise(rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2)).unwrap();
        let wu = patch_cell_weights(&pu);
        assert_eq!(
            patched_cross_attention(&pu, &pu, &hs, &wu).unwrap(),
            patched_self_attention(&pu, &hs, &wu).unwrap()
        );
    }

    #[test]
    fn patched_rejects_modes_over_patch_nyquist() {
        let g = grid2(8);
        let u = SampledFunction::new(g, Array2::zeros((64, 1))).unwrap();
        let pu = patch_split(&u, &PatchLayout::new(&[8, 8], &[2, 2]).unwrap()).unwrap();
        let f = FourierMultiplier::zeros(vec![2, 2], 1, 1);
        let h = AttentionHeadParams::operator_valued(f.clone(), f.clone(), f).unwrap();
        assert!(matches!(
            patched_self_attention(&pu, &h, &patch_cell_weights(&pu)),
            Err(Error::ModesExceedNyquist { .. })
        ));
    }

    #[test]
    fn kernel_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (q, k, v) = (rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 5, 3), rand_mat(&mut rng, 5, 2));
        let g = rand_mat(&mut rng, 4, 2);
        let metric = vec![0.5, 1.5, 0.25];
        let kw = vec![0.1, 0.3, 0.2, 0.25, 0.15];
        let loss = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| {
            (attention_kernel(q.view(), k.view(), v.view(), Some(&metric), Some(&kw), 0.7).0 * &g).sum()
        };
        let (_, probs) = attention_kernel(q.view(), k.view(), v.view(), Some(&metric), Some(&kw), 0.7);
        let (gq, gk, gv) = attention_kernel_backward(q.view(), k.view(), v.view(), Some(&metric), 0.7, probs.view(), g.view());
        let h = 1e-6;
        for (which, grad) in [(0, &gq), (1, &gk), (2, &gv)] {
            for idx in 0..grad.len() {
                let mut ms = [q.clone(), k.clone(), v.clone()];
                let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
                ms[which][[r, c]] += h;
                let lp = loss(&ms[0], &ms[1], &ms[2]);
                ms[which][[r, c]] -= 2.0 * h;
                let lm = loss(&ms[0], &ms[1], &ms[2]);
                assert!(((lp - lm) / (2.0 * h) - grad[[r, c]]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_outputs_are_convex(
            seed in any::<u64>(),
            n in 1usize..20,
            weighted in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = rand_mat(&mut rng, n, 2) * 3.0;
            let (q, k, v) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2));
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let kw = if weighted { Some(w.as_slice()) } else { None };
            let vu = u.dot(&v.t());
            let (out, probs) = attention_kernel(u.dot(&q.t()).view(), u.dot(&k.t()).view(), vu.view(), None, kw, 1.0);
            for row in probs.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
            for c in 0..2 {
                let lo = vu.column(c).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vu.column(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for &x in out.column(c) {
                    prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn quadrature_attention_is_permutation_invariant(seed in any::<u64>(), n in 2usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = rand_mat(&mut rng, n, 2);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let (q, k, v) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 2));
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let up = u.select(Axis(0), &perm);
            let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let run = |u: &Array2<f64>, w: &[f64]| {
                attention_kernel(u.dot(&q.t()).view(), u.dot(&k.t()).view(), u.dot(&v.t()).view(), None, Some(w), 1.0).0
            };
            let a = run(&u, &w);
            let b = run(&up, &wp);
            for (j, &pj) in perm.iter().enumerate() {
                for c in 0..2 {
                    prop_assert!((b[[j, c]] - a[[pj, c]]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn attention_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = rand_mat(&mut rng, 12, 3);
            let h = AttentionHeadParams::pointwise(rand_mat(&mut rng, 2, 3), rand_mat(&mut rng, 2, 3), rand_mat(&mut rng, 2, 3)).unwrap();
            let a = discrete_self_attention(u.view(), &h).unwrap();
            let b = discrete_self_attention(u.view(), &h).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

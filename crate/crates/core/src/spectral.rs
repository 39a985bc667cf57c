//! Discrete Fourier transforms on uniform grids, truncated Fourier
//! multipliers, the `(I - eps Lap)^-alpha` smoothing layer and even-reflection
//! patch extension.
//!
//! Forward transforms are unnormalized, `sum_n u_n exp(-2 pi i k.n / n_axis)`;
//! inverse transforms carry the `1/N` factor. Retained modes of a
//! [`FourierMultiplier`] are stored in signed order `-kmax..=kmax` per axis,
//! row-major, and map to DFT bins modulo the axis length.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{unravel, Grid, SampledFunction};

/// Multi-dimensional complex FFT over a fixed row-major shape.
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// In-place inverse transform including the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "buffer does not match FFT shape");
        let d = self.shape.len();
        for ax in 0..d {
            let n = self.shape[ax];
            let stride: usize = self.shape[ax + 1..].iter().product();
            let outer: usize = self.shape[..ax].iter().product();
            if stride == 1 {
                plans[ax].process(data);
                continue;
            }
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for o in 0..outer {
                let base = o * n * stride;
                for inner in 0..stride {
                    for (i, z) in line.iter_mut().enumerate() {
                        *z = data[base + i * stride + inner];
                    }
                    plans[ax].process(&mut line);
                    for (i, z) in line.iter().enumerate() {
                        data[base + i * stride + inner] = *z;
                    }
                }
            }
        }
    }
}

fn uniform_shape(grid: &Grid) -> Result<&[usize]> {
    grid.shape().ok_or_else(|| Error::InvalidGrid("Fourier transforms need a uniform grid".into()))
}

/// Unnormalized DFT of every channel; rows are DFT bins in row-major order.
pub fn dft_forward(u: &SampledFunction) -> Result<Array2<Complex64>> {
    let shape = uniform_shape(u.grid())?;
    let fft = FftNd::new(shape);
    let (n, c) = u.values().dim();
    let mut out = Array2::zeros((n, c));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for ch in 0..c {
        for (z, &x) in buf.iter_mut().zip(u.values().column(ch)) {
            *z = Complex64::new(x, 0.0);
        }
        fft.forward(&mut buf);
        out.column_mut(ch).iter_mut().zip(&buf).for_each(|(o, z)| *o = *z);
    }
    Ok(out)
}

/// Inverse DFT (with `1/N`) of every channel, keeping the real part.
pub fn dft_inverse(modes: &Array2<Complex64>, grid: &Grid) -> Result<SampledFunction> {
    let shape = uniform_shape(grid)?;
    let (n, c) = modes.dim();
    if n != grid.len() {
        return Err(Error::DimensionMismatch(format!("{n} modes for a {}-point grid", grid.len())));
    }
    let fft = FftNd::new(shape);
    let mut out = Array2::zeros((n, c));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for ch in 0..c {
        buf.iter_mut().zip(modes.column(ch)).for_each(|(b, z)| *b = *z);
        fft.inverse(&mut buf);
        out.column_mut(ch).iter_mut().zip(&buf).for_each(|(o, z)| *o = z.re);
    }
    SampledFunction::new(grid.clone(), out)
}

/// Largest admissible mode cutoff on an `n`-point axis: `(n - 1) / 2`.
pub fn nyquist_limit(n: usize) -> usize {
    (n.saturating_sub(1)) / 2
}

/// Signed wavenumber of DFT bin `b` on an `n`-point axis.
pub fn signed_wavenumber(b: usize, n: usize) -> i64 {
    if b <= n / 2 {
        b as i64
    } else {
        b as i64 - n as i64
    }
}

/// A truncated complex mode tensor `R` of shape `(modes, r_out, r_in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMultiplier {
    kmax: Vec<usize>,
    r_out: usize,
    r_in: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl FourierMultiplier {
    pub fn new(kmax: Vec<usize>, r_out: usize, r_in: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let len = n_modes(&kmax) * r_out * r_in;
        if kmax.is_empty() || r_out == 0 || r_in == 0 {
            return Err(Error::InvalidConfig("multiplier needs at least one axis and channel".into()));
        }
        if re.len() != len || im.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "multiplier needs {len} entries, got {} real and {} imaginary",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { kmax, r_out, r_in, re, im })
    }

    pub fn zeros(kmax: Vec<usize>, r_out: usize, r_in: usize) -> Self {
        let len = n_modes(&kmax) * r_out * r_in;
        Self { kmax, r_out, r_in, re: vec![0.0; len], im: vec![0.0; len] }
    }

    /// Identity on channels at every retained mode (`r_out = r_in = r`).
    pub fn identity(kmax: Vec<usize>, r: usize) -> Self {
        let mut m = Self::zeros(kmax, r, r);
        for k in 0..m.n_modes() {
            for c in 0..r {
                m.set(k, c, c, Complex64::new(1.0, 0.0));
            }
        }
        m
    }

    pub fn kmax(&self) -> &[usize] {
        &self.kmax
    }

    pub fn r_out(&self) -> usize {
        self.r_out
    }

    pub fn r_in(&self) -> usize {
        self.r_in
    }

    pub fn n_modes(&self) -> usize {
        n_modes(&self.kmax)
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// Index of the signed mode vector `k` in the retained-mode ordering.
    pub fn mode_index(&self, k: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for (ax, (&kk, &km)) in k.iter().zip(&self.kmax).enumerate() {
            let _ = ax;
            if kk.unsigned_abs() as usize > km {
                return None;
            }
            idx = idx * (2 * km + 1) + (kk + km as i64) as usize;
        }
        Some(idx)
    }

    pub fn get(&self, mode: usize, o: usize, i: usize) -> Complex64 {
        let at = (mode * self.r_out + o) * self.r_in + i;
        Complex64::new(self.re[at], self.im[at])
    }

    pub fn set(&mut self, mode: usize, o: usize, i: usize, z: Complex64) {
        let at = (mode * self.r_out + o) * self.r_in + i;
        self.re[at] = z.re;
        self.im[at] = z.im;
    }
}

/// `prod_i (2 kmax_i + 1)`.
pub fn n_modes(kmax: &[usize]) -> usize {
    kmax.iter().map(|k| 2 * k + 1).product()
}

/// Signed mode vectors in storage order.
pub fn retained_modes(kmax: &[usize]) -> Vec<Vec<i64>> {
    let widths: Vec<usize> = kmax.iter().map(|k| 2 * k + 1).collect();
    (0..n_modes(kmax))
        .map(|m| {
            unravel(m, &widths)
                .into_iter()
                .zip(kmax)
                .map(|(i, &k)| i as i64 - k as i64)
                .collect()
        })
        .collect()
}

/// Even-reflection source index of extended position `e` on an `m`-point axis.
fn reflect(e: usize, pad: usize, m: usize) -> usize {
    let j = e as i64 - pad as i64;
    let r = if j < 0 {
        -j
    } else if j >= m as i64 {
        2 * (m as i64 - 1) - j
    } else {
        j
    };
    r as usize
}

/// Precomputed partial DFT matrices applying a multiplier on one patch grid.
///
/// The full operator is `x -> Re(B . contract(R, A x))` where `A` takes
/// the retained forward modes (after optional even extension by `pad`
/// points per side) and `B` inverts them and crops back to the patch.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    shape: Vec<usize>,
    kmax: Vec<usize>,
    pad: usize,
    fwd_re: Array2<f64>,
    fwd_im: Array2<f64>,
    inv_re: Array2<f64>,
    inv_im: Array2<f64>,
}

impl SpectralPlan {
    pub fn new(shape: &[usize], kmax: &[usize], pad: usize) -> Result<Self> {
        if shape.len() != kmax.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} mode cutoffs for a {}-axis grid",
                kmax.len(),
                shape.len()
            )));
        }
        for &m in shape {
            if pad >= m {
                return Err(Error::InvalidConfig(format!(
                    "extension of {pad} points needs patches longer than {m}"
                )));
            }
        }
        let ext: Vec<usize> = shape.iter().map(|m| m + 2 * pad).collect();
        for (&k, &n) in kmax.iter().zip(&ext) {
            if k > nyquist_limit(n) {
                return Err(Error::ModesExceedNyquist { kmax: k, limit: nyquist_limit(n), size: n });
            }
        }
        let modes = retained_modes(kmax);
        let m_len: usize = shape.iter().product();
        let e_len: usize = ext.iter().product();
        let nm = modes.len();
        let phase = |k: &[i64], e: &[usize]| -> f64 {
            k.iter()
                .zip(e)
                .zip(&ext)
                .map(|((&kk, &ee), &n)| 2.0 * PI * kk as f64 * ee as f64 / n as f64)
                .sum()
        };

        let mut fwd_re = Array2::zeros((nm, m_len));
        let mut fwd_im = Array2::zeros((nm, m_len));
        let mut inv_re = Array2::zeros((m_len, nm));
        let mut inv_im = Array2::zeros((m_len, nm));
        let mut src = vec![0; shape.len()];
        for e in 0..e_len {
            let eidx = unravel(e, &ext);
            for ax in 0..shape.len() {
                src[ax] = reflect(eidx[ax], pad, shape[ax]);
            }
            let n = crate::grid::ravel(&src, shape);
            let interior = eidx.iter().zip(shape).all(|(&ei, &m)| ei >= pad && ei < pad + m);
            for (mi, k) in modes.iter().enumerate() {
                let th = phase(k, &eidx);
                let (sn, cs) = th.sin_cos();
                fwd_re[[mi, n]] += cs;
                fwd_im[[mi, n]] -= sn;
                if interior {
                    inv_re[[n, mi]] = cs / e_len as f64;
                    inv_im[[n, mi]] = sn / e_len as f64;
                }
            }
        }
        Ok(Self { shape: shape.to_vec(), kmax: kmax.to_vec(), pad, fwd_re, fwd_im, inv_re, inv_im })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kmax(&self) -> &[usize] {
        &self.kmax
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn patch_len(&self) -> usize {
        self.fwd_re.ncols()
    }

    pub fn n_modes(&self) -> usize {
        self.fwd_re.nrows()
    }

    fn check(&self, mult: &FourierMultiplier, x_rows: usize, x_cols: usize, batch: usize) -> Result<()> {
        if mult.kmax() != self.kmax.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "multiplier cutoffs {:?} differ from plan cutoffs {:?}",
                mult.kmax(),
                self.kmax
            )));
        }
        if x_rows != batch * self.patch_len() {
            return Err(Error::DimensionMismatch(format!(
                "{x_rows} rows for {batch} patches of {} points",
                self.patch_len()
            )));
        }
        if x_cols != mult.r_in() {
            return Err(Error::DimensionMismatch(format!(
                "{x_cols} input channels for a multiplier expecting {}",
                mult.r_in()
            )));
        }
        Ok(())
    }

    /// Retained forward coefficients of each patch, `(modes, batch * r_in)`
    /// with column `b * r_in + i`.
    pub fn analyze(&self, x: ArrayView2<f64>, batch: usize) -> (Array2<f64>, Array2<f64>) {
        let m = self.patch_len();
        let r = x.ncols();
        let stacked = stack_patches(x, batch, m, r);
        (self.fwd_re.dot(&stacked), self.fwd_im.dot(&stacked))
    }

    /// Applies `mult` to each of `batch` patches stored as consecutive
    /// `M`-row blocks of `x`.
    pub fn apply(&self, mult: &FourierMultiplier, x: ArrayView2<f64>, batch: usize) -> Result<Array2<f64>> {
        self.check(mult, x.nrows(), x.ncols(), batch)?;
        let (fr, fi) = self.analyze(x, batch);
        Ok(self.synthesize_from(mult, &fr, &fi, batch))
    }

    /// Inverse half of [`apply`](Self::apply) from cached coefficients.
    pub fn synthesize_from(&self, mult: &FourierMultiplier, fr: &Array2<f64>, fi: &Array2<f64>, batch: usize) -> Array2<f64> {
        let (ro, ri) = (mult.r_out(), mult.r_in());
        let nm = self.n_modes();
        let mut yr = Array2::zeros((nm, batch * ro));
        let mut yi = Array2::zeros((nm, batch * ro));
        for k in 0..nm {
            let base = k * ro * ri;
            for b in 0..batch {
                for o in 0..ro {
                    let (mut sr, mut si) = (0.0, 0.0);
                    for i in 0..ri {
                        let (rr, rim) = (mult.re[base + o * ri + i], mult.im[base + o * ri + i]);
                        let (xr, xi) = (fr[[k, b * ri + i]], fi[[k, b * ri + i]]);
                        sr += rr * xr - rim * xi;
                        si += rr * xi + rim * xr;
                    }
                    yr[[k, b * ro + o]] = sr;
                    yi[[k, b * ro + o]] = si;
                }
            }
        }
        let out = self.inv_re.dot(&yr) - self.inv_im.dot(&yi);
        unstack_patches(out.view(), batch, self.patch_len(), ro)
    }

    /// Vector-Jacobian product of [`apply`](Self::apply).
    ///
    /// Given the upstream gradient `g` (same layout as the output) and the
    /// cached forward coefficients, returns `(grad_x, grad_re, grad_im)`.
    pub fn backward(
        &self,
        mult: &FourierMultiplier,
        fr: &Array2<f64>,
        fi: &Array2<f64>,
        g: ArrayView2<f64>,
        batch: usize,
    ) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
        let (ro, ri) = (mult.r_out(), mult.r_in());
        let m = self.patch_len();
        let nm = self.n_modes();
        let gs = stack_patches(g, batch, m, ro);
        // H = B^H g
        let hr = self.inv_re.t().dot(&gs);
        let hi = -self.inv_im.t().dot(&gs);
        let mut grad_re = vec![0.0; mult.re.len()];
        let mut grad_im = vec![0.0; mult.im.len()];
        let mut jr = Array2::zeros((nm, batch * ri));
        let mut ji = Array2::zeros((nm, batch * ri));
        for k in 0..nm {
            let base = k * ro * ri;
            for b in 0..batch {
                for o in 0..ro {
                    let (h_r, h_i) = (hr[[k, b * ro + o]], hi[[k, b * ro + o]]);
                    for i in 0..ri {
                        let at = base + o * ri + i;
                        let (x_r, x_i) = (fr[[k, b * ri + i]], fi[[k, b * ri + i]]);
                        grad_re[at] += h_r * x_r + h_i * x_i;
                        grad_im[at] += h_i * x_r - h_r * x_i;
                        let (rr, rim) = (mult.re[at], mult.im[at]);
                        jr[[k, b * ri + i]] += rr * h_r + rim * h_i;
                        ji[[k, b * ri + i]] += rr * h_i - rim * h_r;
                    }
                }
            }
        }
        let gx = self.fwd_re.t().dot(&jr) + self.fwd_im.t().dot(&ji);
        (unstack_patches(gx.view(), batch, m, ri), grad_re, grad_im)
    }
}

/// `(batch * m, r)` rows to `(m, batch * r)` with column `b * r + c`.
fn stack_patches(x: ArrayView2<f64>, batch: usize, m: usize, r: usize) -> Array2<f64> {
    let mut out = Array2::zeros((m, batch * r));
    for b in 0..batch {
        out.slice_mut(s![.., b * r..(b + 1) * r]).assign(&x.slice(s![b * m..(b + 1) * m, ..]));
    }
    out
}

fn unstack_patches(x: ArrayView2<f64>, batch: usize, m: usize, r: usize) -> Array2<f64> {
    let mut out = Array2::zeros((batch * m, r));
    for b in 0..batch {
        out.slice_mut(s![b * m..(b + 1) * m, ..]).assign(&x.slice(s![.., b * r..(b + 1) * r]));
    }
    out
}

/// Applies a Fourier integral operator to a function on a uniform grid.
pub fn fourier_integral_apply(mult: &FourierMultiplier, u: &SampledFunction) -> Result<SampledFunction> {
    let shape = uniform_shape(u.grid())?;
    let plan = SpectralPlan::new(shape, mult.kmax(), 0)?;
    let out = plan.apply(mult, u.values().view(), 1)?;
    SampledFunction::new(u.grid().clone(), out)
}

/// Parameters of the `(I - eps Lap)^-alpha` smoothing multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub epsilon: f64,
    pub alpha: f64,
    /// Period per axis. Defaults to the periodic extension length of the
    /// sampled data (`n * h`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Vec<f64>>,
}

impl SmoothingParams {
    pub fn new(epsilon: f64, alpha: f64) -> Result<Self> {
        let p = Self { epsilon, alpha, period: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("smoothing epsilon {} must be positive", self.epsilon)));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::InvalidConfig(format!("smoothing alpha {} must exceed 1", self.alpha)));
        }
        Ok(())
    }

    /// Multiplier value at each DFT bin of `grid`, row-major.
    pub fn multiplier(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.validate()?;
        let shape = uniform_shape(grid)?;
        let periods: Vec<f64> = match &self.period {
            Some(p) if p.len() == shape.len() => p.clone(),
            Some(p) => {
                return Err(Error::DimensionMismatch(format!(
                    "{} periods for a {}-axis grid",
                    p.len(),
                    shape.len()
                )))
            }
            None => (0..shape.len())
                .map(|ax| {
                    let c = grid.axis_coords(ax);
                    (c[1] - c[0]) * shape[ax] as f64
                })
                .collect(),
        };
        let n: usize = shape.iter().product();
        Ok((0..n)
            .map(|b| {
                let idx = unravel(b, shape);
                let k2: f64 = idx
                    .iter()
                    .zip(shape)
                    .zip(&periods)
                    .map(|((&i, &n), &l)| {
                        let w = 2.0 * PI * signed_wavenumber(i, n) as f64 / l;
                        w * w
                    })
                    .sum();
                (1.0 + self.epsilon * k2).powf(-self.alpha)
            })
            .collect())
    }
}

/// Applies a real, even multiplier (one value per DFT bin) channel-wise.
/// The operator is symmetric, so this is also its own adjoint.
pub fn apply_real_multiplier(shape: &[usize], multiplier: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
    let fft = FftNd::new(shape);
    let (n, c) = x.dim();
    let mut out = Array2::zeros((n, c));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for ch in 0..c {
        for (z, &v) in buf.iter_mut().zip(x.column(ch)) {
            *z = Complex64::new(v, 0.0);
        }
        fft.forward(&mut buf);
        buf.iter_mut().zip(multiplier).for_each(|(z, &m)| *z *= m);
        fft.inverse(&mut buf);
        out.column_mut(ch).iter_mut().zip(&buf).for_each(|(o, z)| *o = z.re);
    }
    out
}

/// Smooths `z` with `(I - eps Lap)^-alpha` under a periodic interpretation.
pub fn smoothing_apply(z: &SampledFunction, params: &SmoothingParams) -> Result<SampledFunction> {
    let mult = params.multiplier(z.grid())?;
    let shape = uniform_shape(z.grid())?;
    let out = apply_real_multiplier(shape, &mult, z.values().view());
    SampledFunction::new(z.grid().clone(), out)
}

/// Even-reflection extension of a patch (`M x c` rows, row-major over
/// `shape`) by `pad` points on each side of every axis.
pub fn periodic_patch_extend(values: ArrayView2<f64>, shape: &[usize], pad: usize) -> Result<Array2<f64>> {
    let m: usize = shape.iter().product();
    if values.nrows() != m {
        return Err(Error::DimensionMismatch(format!("{} rows for a patch of {m} points", values.nrows())));
    }
    if let Some(&n) = shape.iter().find(|&&n| pad >= n) {
        return Err(Error::InvalidConfig(format!("pad {pad} must be smaller than the patch size {n}")));
    }
    let ext: Vec<usize> = shape.iter().map(|n| n + 2 * pad).collect();
    let e_len: usize = ext.iter().product();
    let mut out = Array2::zeros((e_len, values.ncols()));
    let mut src = vec![0; shape.len()];
    for e in 0..e_len {
        let eidx = unravel(e, &ext);
        for ax in 0..shape.len() {
            src[ax] = reflect(eidx[ax], pad, shape[ax]);
        }
        out.row_mut(e).assign(&values.row(crate::grid::ravel(&src, shape)));
    }
    Ok(out)
}

/// Crops the centre of an extended patch back to `shape`.
pub fn periodic_patch_restrict(values: ArrayView2<f64>, shape: &[usize], pad: usize) -> Result<Array2<f64>> {
    let ext: Vec<usize> = shape.iter().map(|n| n + 2 * pad).collect();
    let e_len: usize = ext.iter().product();
    if values.nrows() != e_len {
        return Err(Error::DimensionMismatch(format!(
            "{} rows for an extended patch of {e_len} points",
            values.nrows()
        )));
    }
    let m: usize = shape.iter().product();
    let mut out = Array2::zeros((m, values.ncols()));
    for i in 0..m {
        let idx: Vec<usize> = unravel(i, shape).into_iter().map(|j| j + pad).collect();
        out.row_mut(i).assign(&values.row(crate::grid::ravel(&idx, &ext)));
    }
    Ok(out)
}

/// Sum of squared magnitudes of `k`-weighted modes: a discrete `H^1`
/// seminorm squared (periodic interpretation).
pub fn h1_seminorm_sq(u: &SampledFunction) -> Result<f64> {
    let shape = uniform_shape(u.grid())?.to_vec();
    let modes = dft_forward(u)?;
    let n = modes.nrows();
    let mut total = 0.0;
    for (b, row) in modes.axis_iter(Axis(0)).enumerate() {
        let idx = unravel(b, &shape);
        let k2: f64 = idx
            .iter()
            .zip(&shape)
            .map(|(&i, &n)| (signed_wavenumber(i, n) as f64).powi(2))
            .sum();
        total += k2 * row.iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    Ok(total / n as f64)
}

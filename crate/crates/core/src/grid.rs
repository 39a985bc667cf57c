//! Domains, sampling grids, quadrature weights, positional channels and
//! patch decomposition.
//!
//! All point sets are stored in row-major order: the last axis varies
//! fastest. Patch indices and intra-patch indices follow the same rule, so
//! `patch_split` and `patch_merge` are pure permutations of rows.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box `[a_1, b_1] x ... x [a_d, b_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidDomain("dimension must be positive".into()));
        }
        for (i, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidDomain(format!(
                    "axis {i}: bounds [{a}, {b}] are not an increasing finite interval"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// The unit cube `[0, 1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self { bounds: vec![(0.0, 1.0); dim.max(1)] }
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![(a, b)])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.bounds.iter().map(|(a, b)| b - a).collect()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| b - a).product()
    }
}

/// How a domain is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// Tensor-product grid. A closed grid places `n` points on `[a, b]`
    /// including both endpoints; a periodic grid places them at
    /// `a + i (b - a) / n`, omitting the right endpoint.
    Uniform { shape: Vec<usize>, periodic: bool },
    /// Strictly increasing sample locations on a 1D domain.
    Irregular1D { coords: Vec<f64> },
}

impl GridSpec {
    pub fn closed(shape: Vec<usize>) -> Self {
        GridSpec::Uniform { shape, periodic: false }
    }

    pub fn periodic(shape: Vec<usize>) -> Self {
        GridSpec::Uniform { shape, periodic: true }
    }

    pub fn irregular(coords: Vec<f64>) -> Self {
        GridSpec::Irregular1D { coords }
    }
}

/// A validated pairing of a domain with a sampling of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    domain: Domain,
    spec: GridSpec,
}

impl Grid {
    pub fn new(domain: Domain, spec: GridSpec) -> Result<Self> {
        match &spec {
            GridSpec::Uniform { shape, .. } => {
                if shape.len() != domain.dim() {
                    return Err(Error::InvalidGrid(format!(
                        "grid has {} axes but the domain has dimension {}",
                        shape.len(),
                        domain.dim()
                    )));
                }
                if let Some(n) = shape.iter().find(|&&n| n < 2) {
                    return Err(Error::InvalidGrid(format!(
                        "every axis needs at least 2 points, got {n}"
                    )));
                }
            }
            GridSpec::Irregular1D { coords } => {
                if domain.dim() != 1 {
                    return Err(Error::InvalidGrid(
                        "irregular grids are only supported in one dimension".into(),
                    ));
                }
                if coords.len() < 2 {
                    return Err(Error::InvalidGrid(format!(
                        "need at least 2 points, got {}",
                        coords.len()
                    )));
                }
                if coords.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidGrid("coordinates must be strictly increasing".into()));
                }
                let (a, b) = domain.bounds()[0];
                if coords[0] < a || coords[coords.len() - 1] > b {
                    return Err(Error::InvalidGrid(format!(
                        "coordinates leave the domain [{a}, {b}]"
                    )));
                }
            }
        }
        Ok(Self { domain, spec })
    }

    /// Closed uniform grid on the unit cube.
    pub fn unit_closed(shape: Vec<usize>) -> Result<Self> {
        let d = shape.len();
        Self::new(Domain::unit(d), GridSpec::closed(shape))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Per-axis point counts for uniform grids.
    pub fn shape(&self) -> Option<&[usize]> {
        match &self.spec {
            GridSpec::Uniform { shape, .. } => Some(shape),
            GridSpec::Irregular1D { .. } => None,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.spec, GridSpec::Uniform { periodic: true, .. })
    }

    pub fn len(&self) -> usize {
        match &self.spec {
            GridSpec::Uniform { shape, .. } => shape.iter().product(),
            GridSpec::Irregular1D { coords } => coords.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates along one axis of a uniform grid, or the sample
    /// locations of an irregular grid.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        match &self.spec {
            GridSpec::Uniform { shape, periodic } => {
                let (a, b) = self.domain.bounds()[axis];
                let n = shape[axis];
                let denom = if *periodic { n } else { n - 1 } as f64;
                (0..n).map(|i| a + (b - a) * i as f64 / denom).collect()
            }
            GridSpec::Irregular1D { coords } => coords.clone(),
        }
    }

    /// All grid points as an `N x d` array in row-major order.
    pub fn coords(&self) -> Array2<f64> {
        let d = self.dim();
        let n = self.len();
        let axes: Vec<Vec<f64>> = (0..d).map(|i| self.axis_coords(i)).collect();
        let mut out = Array2::zeros((n, d));
        match &self.spec {
            GridSpec::Irregular1D { coords } => {
                for (i, &x) in coords.iter().enumerate() {
                    out[[i, 0]] = x;
                }
            }
            GridSpec::Uniform { shape, .. } => {
                for flat in 0..n {
                    let idx = unravel(flat, shape);
                    for (ax, &k) in idx.iter().enumerate() {
                        out[[flat, ax]] = axes[ax][k];
                    }
                }
            }
        }
        out
    }
}

/// Row-major multi-index of a flat index.
pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for ax in (0..shape.len()).rev() {
        idx[ax] = flat % shape[ax];
        flat /= shape[ax];
    }
    idx
}

/// Row-major flat index of a multi-index.
pub fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Values of a vector-valued function on a grid, one row per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: Grid,
    values: Array2<f64>,
}

impl SampledFunction {
    pub fn new(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} value rows for a grid of {} points",
                values.nrows(),
                grid.len()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::DimensionMismatch("a function needs at least one channel".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "sampled function values".into() });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, channels: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let coords = grid.coords();
        let mut values = Array2::zeros((grid.len(), channels));
        for (i, x) in coords.outer_iter().enumerate() {
            let v = f(x.as_slice().expect("coords are contiguous"));
            if v.len() != channels {
                return Err(Error::DimensionMismatch(format!(
                    "closure returned {} channels, expected {channels}",
                    v.len()
                )));
            }
            for (c, val) in v.into_iter().enumerate() {
                values[[i, c]] = val;
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Positive per-point quadrature weights (units of domain volume).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights(Vec<f64>);

impl QuadratureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {w} is not positive and finite")));
        }
        Ok(Self(weights))
    }

    /// `n` equal weights summing to `total`.
    pub fn uniform(n: usize, total: f64) -> Result<Self> {
        Self::new(vec![total / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Composite trapezoid weights over the sampled hull of a 1D grid.
pub fn trapezoid_weights(grid: &Grid) -> Result<QuadratureWeights> {
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid(format!(
            "trapezoid weights need a 1D grid, got dimension {}",
            grid.dim()
        )));
    }
    if grid.is_periodic() {
        // The periodic trapezoid rule reduces to equal cells.
        return uniform_cell_weights(grid);
    }
    let x = grid.axis_coords(0);
    let n = x.len();
    let mut w = vec![0.0; n];
    w[0] = (x[1] - x[0]) / 2.0;
    w[n - 1] = (x[n - 1] - x[n - 2]) / 2.0;
    for i in 1..n - 1 {
        w[i] = (x[i + 1] - x[i - 1]) / 2.0;
    }
    QuadratureWeights::new(w)
}

/// Equal cell volumes `|D| / N` on a uniform grid of any dimension.
pub fn uniform_cell_weights(grid: &Grid) -> Result<QuadratureWeights> {
    if grid.shape().is_none() {
        return Err(Error::InvalidGrid("cell weights need a uniform grid".into()));
    }
    QuadratureWeights::uniform(grid.len(), grid.domain().volume())
}

/// Trapezoid weights in 1D, equal cell weights otherwise.
pub fn default_weights(grid: &Grid) -> Result<QuadratureWeights> {
    if grid.dim() == 1 {
        trapezoid_weights(grid)
    } else {
        uniform_cell_weights(grid)
    }
}

/// Positional channels appended to a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionEncoding {
    /// Coordinates mapped affinely onto `[0, 1]` per axis.
    #[default]
    Normalized,
    /// Raw coordinates.
    Raw,
    /// No positional channels.
    None,
}

impl PositionEncoding {
    pub fn channels(&self, dim: usize) -> usize {
        match self {
            PositionEncoding::None => 0,
            _ => dim,
        }
    }
}

/// Grid positions under the given encoding, `N x d` (or `N x 0`).
pub fn position_channels(grid: &Grid, encoding: PositionEncoding) -> Array2<f64> {
    let mut coords = grid.coords();
    match encoding {
        PositionEncoding::Raw => coords,
        PositionEncoding::None => Array2::zeros((grid.len(), 0)),
        PositionEncoding::Normalized => {
            for (ax, &(a, b)) in grid.domain().bounds().iter().enumerate() {
                coords.column_mut(ax).mapv_inplace(|x| (x - a) / (b - a));
            }
            coords
        }
    }
}

/// Appends normalized grid coordinates to the channels of `u`.
pub fn concat_positions(u: &SampledFunction) -> SampledFunction {
    concat_positions_with(u, PositionEncoding::Normalized)
}

pub fn concat_positions_with(u: &SampledFunction, encoding: PositionEncoding) -> SampledFunction {
    let pos = position_channels(u.grid(), encoding);
    let values = ndarray::concatenate(Axis(1), &[u.values().view(), pos.view()])
        .expect("row counts agree by construction");
    SampledFunction { grid: u.grid().clone(), values }
}

/// A uniform partition of a tensor grid into congruent patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    patches_per_axis: Vec<usize>,
    patch_shape: Vec<usize>,
}

impl PatchLayout {
    /// Splits `grid_shape` into `patches_per_axis[i]` patches along axis `i`.
    pub fn new(grid_shape: &[usize], patches_per_axis: &[usize]) -> Result<Self> {
        if grid_shape.len() != patches_per_axis.len() {
            return Err(Error::InvalidLayout(format!(
                "{} patch counts for a {}-axis grid",
                patches_per_axis.len(),
                grid_shape.len()
            )));
        }
        let mut patch_shape = Vec::with_capacity(grid_shape.len());
        for (ax, (&n, &q)) in grid_shape.iter().zip(patches_per_axis).enumerate() {
            if q == 0 || n % q != 0 {
                return Err(Error::InvalidLayout(format!(
                    "axis {ax}: {q} patches do not divide {n} points"
                )));
            }
            patch_shape.push(n / q);
        }
        Ok(Self { patches_per_axis: patches_per_axis.to_vec(), patch_shape })
    }

    pub fn patches_per_axis(&self) -> &[usize] {
        &self.patches_per_axis
    }

    pub fn patch_shape(&self) -> &[usize] {
        &self.patch_shape
    }

    /// Number of patches `P`.
    pub fn n_patches(&self) -> usize {
        self.patches_per_axis.iter().product()
    }

    /// Points per patch `M`.
    pub fn patch_len(&self) -> usize {
        self.patch_shape.iter().product()
    }

    pub fn grid_shape(&self) -> Vec<usize> {
        self.patches_per_axis.iter().zip(&self.patch_shape).map(|(q, m)| q * m).collect()
    }

    /// For each row of the patched ordering `(p, i)` flattened as
    /// `p * M + i`, the source row in the grid ordering.
    pub fn permutation(&self) -> Vec<usize> {
        let d = self.patch_shape.len();
        let grid_shape = self.grid_shape();
        let mut perm = Vec::with_capacity(self.n_patches() * self.patch_len());
        let mut idx = vec![0; d];
        for p in 0..self.n_patches() {
            let pidx = unravel(p, &self.patches_per_axis);
            for i in 0..self.patch_len() {
                let local = unravel(i, &self.patch_shape);
                for ax in 0..d {
                    idx[ax] = pidx[ax] * self.patch_shape[ax] + local[ax];
                }
                perm.push(ravel(&idx, &grid_shape));
            }
        }
        perm
    }

    /// The sub-box `D'` occupied by the first patch.
    pub fn patch_domain(&self, domain: &Domain) -> Domain {
        let bounds = domain
            .bounds()
            .iter()
            .zip(&self.patches_per_axis)
            .map(|(&(a, b), &q)| (a, a + (b - a) / q as f64))
            .collect();
        Domain { bounds }
    }
}

/// A sampled function re-indexed as `P` congruent patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchedFunction {
    layout: PatchLayout,
    domain_patch: Domain,
    source: Grid,
    values: Array3<f64>,
}

impl PatchedFunction {
    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn domain_patch(&self) -> &Domain {
        &self.domain_patch
    }

    pub fn source_grid(&self) -> &Grid {
        &self.source
    }

    /// Values of shape `(P, M, c)`.
    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    /// Same layout and patch domain with new per-patch values.
    pub fn with_values(&self, values: Array3<f64>) -> Result<Self> {
        let s = values.shape();
        if s[0] != self.layout.n_patches() || s[1] != self.layout.patch_len() {
            return Err(Error::DimensionMismatch(format!(
                "values of shape {:?} do not match {} patches of {} points",
                s,
                self.layout.n_patches(),
                self.layout.patch_len()
            )));
        }
        Ok(Self { values, ..self.clone() })
    }

    /// Patch values flattened to `(P * M, c)`.
    pub fn rows(&self) -> ArrayView2<'_, f64> {
        let (p, m, c) = self.values.dim();
        self.values.view().into_shape_with_order((p * m, c)).expect("standard layout")
    }
}

/// Re-indexes `u` as patches of the given layout.
pub fn patch_split(u: &SampledFunction, layout: &PatchLayout) -> Result<PatchedFunction> {
    let shape = u
        .grid()
        .shape()
        .ok_or_else(|| Error::InvalidGrid("patching needs a uniform grid".into()))?;
    if shape != layout.grid_shape().as_slice() {
        return Err(Error::InvalidLayout(format!(
            "layout covers {:?} but the grid is {:?}",
            layout.grid_shape(),
            shape
        )));
    }
    let perm = layout.permutation();
    let c = u.channels();
    let rows = u.values().select(Axis(0), &perm);
    let values = rows
        .into_shape_with_order((layout.n_patches(), layout.patch_len(), c))
        .expect("row count is P * M");
    Ok(PatchedFunction {
        layout: layout.clone(),
        domain_patch: layout.patch_domain(u.grid().domain()),
        source: u.grid().clone(),
        values,
    })
}

/// Inverse of [`patch_split`].
pub fn patch_merge(p: &PatchedFunction) -> Result<SampledFunction> {
    let n = p.layout.n_patches() * p.layout.patch_len();
    if n != p.source.len() {
        return Err(Error::InvalidLayout(format!(
            "{n} patched points for a source grid of {} points",
            p.source.len()
        )));
    }
    let perm = p.layout.permutation();
    let rows = p.rows();
    let mut values = Array2::zeros((n, p.channels()));
    for (r, &dst) in perm.iter().enumerate() {
        values.row_mut(dst).assign(&rows.row(r));
    }
    Ok(SampledFunction { grid: p.source.clone(), values })
}

/// Rows in patched order `p * M + i` back to grid order.
pub fn patch_merge_rows(rows: ArrayView2<f64>, layout: &PatchLayout) -> Result<Array2<f64>> {
    let perm = layout.permutation();
    if rows.nrows() != perm.len() {
        return Err(Error::InvalidLayout(format!("{} rows for a layout of {} points", rows.nrows(), perm.len())));
    }
    let mut values = Array2::zeros((perm.len(), rows.ncols()));
    for (r, &dst) in perm.iter().enumerate() {
        values.row_mut(dst).assign(&rows.row(r));
    }
    Ok(values)
}

/// Root-mean-square jump across patch interfaces: differences between
/// neighbouring points that sit in different patches, over all channels.
/// On periodic grids the wrap-around interface counts as well.
pub fn patch_jump_norm(u: &SampledFunction, layout: &PatchLayout) -> Result<f64> {
    let shape = layout.grid_shape();
    if u.grid().shape() != Some(&shape[..]) {
        return Err(Error::InvalidLayout("layout does not match the grid".into()));
    }
    let periodic = u.grid().is_periodic();
    let v = u.values();
    let (mut sum, mut count) = (0.0, 0usize);
    for ax in 0..shape.len() {
        let (q, m, n) = (layout.patches_per_axis()[ax], layout.patch_shape()[ax], shape[ax]);
        if q == 1 {
            continue;
        }
        for flat in 0..u.len() {
            let mut idx = unravel(flat, &shape);
            let i = idx[ax];
            if i % m != m - 1 || (i == n - 1 && !periodic) {
                continue;
            }
            idx[ax] = (i + 1) % n;
            let other = ravel(&idx, &shape);
            for c in 0..v.ncols() {
                sum += (v[[flat, c]] - v[[other, c]]).powi(2);
            }
            count += v.ncols();
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn line(coords: Vec<f64>) -> Grid {
        Grid::new(Domain::unit(1), GridSpec::irregular(coords)).unwrap()
    }

    #[test]
    fn trapezoid_three_points() {
        let w = trapezoid_weights(&line(vec![0.0, 0.5, 1.0])).unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn trapezoid_irregular() {
        let w = trapezoid_weights(&line(vec![0.0, 0.25, 0.5, 1.0])).unwrap();
        assert_eq!(w.as_slice(), &[0.125, 0.25, 0.375, 0.25]);
    }

    #[test]
    fn trapezoid_uniform_sums_to_volume() {
        for n in [2, 3, 17, 64, 1001] {
            let g = Grid::unit_closed(vec![n]).unwrap();
            let w = trapezoid_weights(&g).unwrap();
            assert!((w.total() - 1.0).abs() <= 1e-12, "n={n}");
            assert!(w.as_slice().iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn trapezoid_hull_only() {
        let w = trapezoid_weights(&line(vec![0.2, 0.4, 0.9])).unwrap();
        assert!((w.total() - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn trapezoid_rejects_bad_grids() {
        assert!(Grid::new(Domain::unit(1), GridSpec::irregular(vec![0.5])).is_err());
        assert!(Grid::new(Domain::unit(1), GridSpec::irregular(vec![0.0, 0.5, 0.4])).is_err());
        assert!(Grid::new(Domain::unit(1), GridSpec::irregular(vec![0.0, 0.5, 0.5])).is_err());
        assert!(Grid::new(Domain::unit(2), GridSpec::irregular(vec![0.0, 0.5])).is_err());
        let g2 = Grid::unit_closed(vec![3, 3]).unwrap();
        assert!(trapezoid_weights(&g2).is_err());
    }

    #[test]
    fn cell_weights() {
        let g = Grid::unit_closed(vec![4, 4]).unwrap();
        let w = uniform_cell_weights(&g).unwrap();
        assert!(w.as_slice().iter().all(|&x| x == 1.0 / 16.0));

        let g = Grid::new(Domain::new(vec![(0.0, 2.0), (0.0, 1.0)]).unwrap(), GridSpec::closed(vec![2, 8]))
            .unwrap();
        let w = uniform_cell_weights(&g).unwrap();
        assert!(w.as_slice().iter().all(|&x| x == 2.0 / 16.0));
        assert_eq!(w.total(), 2.0);
    }

    #[test]
    fn positions_unit_interval() {
        let g = Grid::unit_closed(vec![3]).unwrap();
        let u = SampledFunction::new(g, array![[7.0], [8.0], [9.0]]).unwrap();
        let v = concat_positions(&u);
        assert_eq!(v.values(), &array![[7.0, 0.0], [8.0, 0.5], [9.0, 1.0]]);
    }

    #[test]
    fn positions_are_normalized() {
        let g = Grid::new(Domain::interval(0.0, 2.0).unwrap(), GridSpec::closed(vec![3])).unwrap();
        let u = SampledFunction::new(g, array![[1.0], [1.0], [1.0]]).unwrap();
        let v = concat_positions(&u);
        assert_eq!(v.values().column(1).to_vec(), vec![0.0, 0.5, 1.0]);
        let raw = concat_positions_with(&u, PositionEncoding::Raw);
        assert_eq!(raw.values().column(1).to_vec(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn positions_2d_shape() {
        let g = Grid::unit_closed(vec![4, 5]).unwrap();
        let u = SampledFunction::from_fn(g, 1, |x| vec![x[0] + x[1]]).unwrap();
        let v = concat_positions(&u);
        assert_eq!(v.channels(), 3);
        assert_eq!(v.values().column(0), u.values().column(0));
        assert!(v.values().iter().skip(1).all(|x| (0.0..=f64::MAX).contains(x)));
    }

    #[test]
    fn periodic_grid_omits_endpoint() {
        let g = Grid::new(Domain::unit(1), GridSpec::periodic(vec![4])).unwrap();
        assert_eq!(g.axis_coords(0), vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn patch_shapes() {
        let g = Grid::unit_closed(vec![4, 4]).unwrap();
        let u = SampledFunction::from_fn(g, 1, |x| vec![x[0]]).unwrap();
        let layout = PatchLayout::new(&[4, 4], &[2, 2]).unwrap();
        let p = patch_split(&u, &layout).unwrap();
        assert_eq!(p.values().dim(), (4, 4, 1));
        assert_eq!(patch_merge(&p).unwrap(), u);
    }

    #[test]
    fn patch_order_1d() {
        let g = Grid::unit_closed(vec![6]).unwrap();
        let vals = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        let u = SampledFunction::new(g, vals).unwrap();
        let layout = PatchLayout::new(&[6], &[3]).unwrap();
        let p = patch_split(&u, &layout).unwrap();
        assert_eq!(p.values().dim(), (3, 2, 1));
        assert_eq!(p.values()[[1, 0, 0]], 2.0);
        assert_eq!(p.values()[[1, 1, 0]], 3.0);
    }

    #[test]
    fn patch_order_2d_row_major() {
        let layout = PatchLayout::new(&[4, 4], &[2, 2]).unwrap();
        let perm = layout.permutation();
        // patch (0,1) covers rows 0..2, cols 2..4
        assert_eq!(&perm[4..8], &[2, 3, 6, 7]);
    }

    #[test]
    fn patch_errors() {
        assert!(PatchLayout::new(&[6], &[4]).is_err());
        assert!(PatchLayout::new(&[6, 6], &[3]).is_err());
        let g = Grid::unit_closed(vec![6]).unwrap();
        let u = SampledFunction::new(g, Array2::zeros((6, 1))).unwrap();
        assert!(patch_split(&u, &PatchLayout::new(&[8], &[2]).unwrap()).is_err());
        let irr = line(vec![0.0, 0.3, 0.5, 1.0]);
        let ui = SampledFunction::new(irr, Array2::zeros((4, 1))).unwrap();
        assert!(patch_split(&ui, &PatchLayout::new(&[4], &[2]).unwrap()).is_err());
    }

    #[test]
    fn jump_norm_counts_interfaces_only() {
        // A step inside patch 0 is not an interface jump; a step between patches is.
        let g = Grid::unit_closed(vec![8]).unwrap();
        let layout = PatchLayout::new(&[8], &[2]).unwrap();
        let inner = SampledFunction::from_fn(g.clone(), 1, |x| vec![if x[0] < 0.2 { 1.0 } else { 0.0 }]).unwrap();
        assert_eq!(patch_jump_norm(&inner, &layout).unwrap(), 0.0);
        let step = SampledFunction::from_fn(g, 1, |x| vec![if x[0] < 0.5 { 1.0 } else { 0.0 }]).unwrap();
        assert_eq!(patch_jump_norm(&step, &layout).unwrap(), 1.0);
        // On a periodic grid the wrap-around interface adds a second unit jump.
        let pg = Grid::new(Domain::unit(1), GridSpec::periodic(vec![8])).unwrap();
        let pstep = SampledFunction::from_fn(pg, 1, |x| vec![if x[0] < 0.5 { 1.0 } else { 0.0 }]).unwrap();
        assert_eq!(patch_jump_norm(&pstep, &layout).unwrap(), 1.0);
        let shifted = SampledFunction::new(pstep.grid().clone(), pstep.values().mapv(|v| 2.0 * v)).unwrap();
        assert_eq!(patch_jump_norm(&shifted, &layout).unwrap(), 2.0);
        assert!(patch_jump_norm(&step, &PatchLayout::new(&[4], &[2]).unwrap()).is_err());
    }

    #[test]
    fn patch_domain_volume() {
        let layout = PatchLayout::new(&[8, 8], &[2, 4]).unwrap();
        let dp = layout.patch_domain(&Domain::unit(2));
        assert!((dp.volume() - 1.0 / 8.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn split_merge_roundtrip(
            q in proptest::collection::vec(1usize..4, 1..3),
            m in proptest::collection::vec(1usize..4, 1..3),
            c in 1usize..3,
            seed in 0u64..1000,
        ) {
            let d = q.len().min(m.len());
            let shape: Vec<usize> = (0..d).map(|i| (q[i] * m[i]).max(2) ).collect();
            let q: Vec<usize> = (0..d).map(|i| if shape[i] % q[i] == 0 { q[i] } else { 1 }).collect();
            let g = Grid::unit_closed(shape.clone()).unwrap();
            let n = g.len();
            let vals = Array2::from_shape_fn((n, c), |(i, j)| ((i * 31 + j * 7) as f64 + seed as f64).sin());
            let u = SampledFunction::new(g, vals).unwrap();
            let layout = PatchLayout::new(&shape, &q).unwrap();
            let p = patch_split(&u, &layout).unwrap();
            prop_assert_eq!(patch_merge(&p).unwrap(), u);
        }
    }
}

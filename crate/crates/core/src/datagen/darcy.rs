//! Steady Darcy flow `-div(a grad u) = 1` on the unit square with zero
//! Dirichlet data, discretised by the 5-point scheme.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{grf_sample, sample_seed, GrfSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, SampledFunction};
use crate::training::{Dataset, Sample};

/// How the coefficient is averaged onto cell faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => 2.0 * a * b / (a + b),
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iters() -> usize {
    20_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcySolver {
    /// Relative residual target for conjugate gradients.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub face_average: FaceAverage,
}

impl Default for DarcySolver {
    fn default() -> Self {
        Self { tol: default_tol(), max_iters: default_max_iters(), face_average: FaceAverage::Arithmetic }
    }
}

/// The discrete operator on the interior unknowns of an `n1 x n2` grid.
struct Operator {
    n1: usize,
    n2: usize,
    // Face coefficients scaled by 1/h^2: east/west along axis 0, north/south along axis 1.
    ax: Array2<f64>,
    ay: Array2<f64>,
    diag: Array2<f64>,
}

impl Operator {
    fn new(a: &SampledFunction, face: FaceAverage) -> Result<Self> {
        let grid = a.grid();
        let shape = match grid.spec() {
            GridSpec::Uniform { shape, periodic: false } if shape.len() == 2 => shape.clone(),
            _ => return Err(Error::InvalidGrid("Darcy flow needs a closed uniform 2D grid".into())),
        };
        if a.channels() != 1 {
            return Err(Error::DimensionMismatch(format!("coefficient has {} channels", a.channels())));
        }
        let (n1, n2) = (shape[0], shape[1]);
        if n1 < 3 || n2 < 3 {
            return Err(Error::InvalidGrid("Darcy flow needs an interior point".into()));
        }
        let v = a.values();
        if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig(format!("coefficient must be positive and finite, got {bad}")));
        }
        let len = grid.domain().lengths();
        let (hx2, hy2) = ((len[0] / (n1 - 1) as f64).powi(2), (len[1] / (n2 - 1) as f64).powi(2));
        let at = |i: usize, j: usize| v[[i * n2 + j, 0]];
        // ax[[i, j]] couples node (i, j) with (i + 1, j).
        let ax = Array2::from_shape_fn((n1 - 1, n2), |(i, j)| face.apply(at(i, j), at(i + 1, j)) / hx2);
        let ay = Array2::from_shape_fn((n1, n2 - 1), |(i, j)| face.apply(at(i, j), at(i, j + 1)) / hy2);
        let diag = Array2::from_shape_fn((n1, n2), |(i, j)| {
            if i == 0 || j == 0 || i == n1 - 1 || j == n2 - 1 {
                1.0
            } else {
                ax[[i - 1, j]] + ax[[i, j]] + ay[[i, j - 1]] + ay[[i, j]]
            }
        });
        Ok(Self { n1, n2, ax, ay, diag })
    }

    fn interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i < self.n1 - 1 && j < self.n2 - 1
    }

    /// `A u` at interior nodes, zero on the boundary. Boundary values of `u`
    /// enter as given, so this also measures residuals of full solutions.
    fn apply(&self, u: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((self.n1, self.n2), |(i, j)| {
            if !self.interior(i, j) {
                return 0.0;
            }
            self.diag[[i, j]] * u[[i, j]]
                - self.ax[[i - 1, j]] * u[[i - 1, j]]
                - self.ax[[i, j]] * u[[i + 1, j]]
                - self.ay[[i, j - 1]] * u[[i, j - 1]]
                - self.ay[[i, j]] * u[[i, j + 1]]
        })
    }

    fn rhs(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n1, self.n2), |(i, j)| if self.interior(i, j) { 1.0 } else { 0.0 })
    }
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves for the pressure `u` given the coefficient `a` on a closed
/// uniform 2D grid. Boundary values are zero.
pub fn darcy_solve(a: &SampledFunction, solver: &DarcySolver) -> Result<SampledFunction> {
    if !(solver.tol > 0.0) {
        return Err(Error::InvalidConfig("CG tolerance must be positive".into()));
    }
    let op = Operator::new(a, solver.face_average)?;
    let b = op.rhs();
    let bnorm = dot(&b, &b).sqrt();
    let mut u = Array2::zeros((op.n1, op.n2));
    let mut r = b.clone();
    let mut z = &r / &op.diag;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iters = 0;
    loop {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= solver.tol * bnorm {
            // Guard against drift of the recursive residual.
            let true_r = &b - &op.apply(&u);
            if dot(&true_r, &true_r).sqrt() <= solver.tol * bnorm {
                break;
            }
            r = true_r;
            z = &r / &op.diag;
            p = z.clone();
            rz = dot(&r, &z);
        }
        if iters == solver.max_iters {
            return Err(Error::NoConvergence(format!(
                "CG reached {iters} iterations at relative residual {:.3e}",
                rnorm / bnorm
            )));
        }
        let ap = op.apply(&p);
        let alpha = rz / dot(&p, &ap);
        u.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        z = &r / &op.diag;
        let rz_new = dot(&r, &z);
        p = &z + &(&p * (rz_new / rz));
        rz = rz_new;
        iters += 1;
    }
    let values = u.into_shape_with_order((op.n1 * op.n2, 1)).expect("contiguous");
    SampledFunction::new(a.grid().clone(), values)
}

/// Relative residual `|f - A u| / |f|` over interior nodes.
pub fn darcy_residual(a: &SampledFunction, u: &SampledFunction, face: FaceAverage) -> Result<f64> {
    let op = Operator::new(a, face)?;
    if u.grid() != a.grid() || u.channels() != 1 {
        return Err(Error::DimensionMismatch("solution must share the coefficient's grid".into()));
    }
    let uu = Array2::from_shape_fn((op.n1, op.n2), |(i, j)| u.values()[[i * op.n2 + j, 0]]);
    let b = op.rhs();
    let r = &b - &op.apply(&uu);
    Ok((dot(&r, &r) / dot(&b, &b)).sqrt())
}

fn default_n() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcySpec {
    pub n_samples: usize,
    /// Points per axis, boundary included.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grf: GrfSpec,
    #[serde(default)]
    pub solver: DarcySolver,
}

impl DarcySpec {
    pub fn new(n_samples: usize, n: usize, seed: u64) -> Self {
        Self { n_samples, n, seed, grf: GrfSpec::default(), solver: DarcySolver::default() }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::unit_closed(vec![self.n, self.n])
    }
}

/// Coefficient fields and their pressures.
pub fn darcy_dataset(spec: &DarcySpec) -> Result<Dataset> {
    let grid = spec.grid()?;
    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let a = grf_sample(&spec.grf, &grid, sample_seed(spec.seed, i as u64))?;
            let u = darcy_solve(&a, &spec.solver)?;
            Sample::new(a, u, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGridKind {
    /// `{n dt}` for `n = 0..=N`.
    Train,
    /// `{n dt}` for `n = 0..=N/2` joined with `{2n dt}` for
    /// `n = N/2+1..=3N/4`. The second part starts beyond `N dt`.
    Test,
    /// `{n dt}` for `n = 0..=N/2` joined with `{(2n - N/2) dt}` for
    /// `n = N/2+1..=3N/4`: the second half of `[0, N dt]` at twice the
    /// spacing.
    TestWithinHorizon,
}

/// Sample times of a training or testing trajectory.
pub fn irregular_time_grid(n: usize, dt: f64, kind: TimeGridKind) -> Result<GridSpec> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidGrid(format!("time grids need an even positive N, got {n}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidGrid(format!("time step {dt} must be positive")));
    }
    let coords: Vec<f64> = match kind {
        TimeGridKind::Train => (0..=n).map(|i| i as f64 * dt).collect(),
        TimeGridKind::Test | TimeGridKind::TestWithinHorizon => {
            let shift = if kind == TimeGridKind::Test { 0 } else { n / 2 };
            (0..=n / 2)
                .map(|i| i as f64 * dt)
                .chain((n / 2 + 1..=3 * n / 4).map(|i| (2 * i - shift) as f64 * dt))
                .collect()
        }
    };
    Ok(GridSpec::irregular(coords))
}

/// The time grid as a [`Grid`] on `[0, last time]`.
pub fn time_grid(spec: GridSpec) -> Result<Grid> {
    let GridSpec::Irregular1D { coords } = &spec else {
        return Err(Error::InvalidGrid("expected an irregular time grid".into()));
    };
    let last = *coords.last().ok_or_else(|| Error::InvalidGrid("empty time grid".into()))?;
    Grid::new(Domain::interval(0.0, last)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(s: GridSpec) -> Vec<f64> {
        match s {
            GridSpec::Irregular1D { coords } => coords,
            _ => unreachable!(),
        }
    }

    #[test]
    fn train_and_test_grids() {
        let tr = coords(irregular_time_grid(8, 0.25, TimeGridKind::Train).unwrap());
        assert_eq!(tr.len(), 9);
        assert_eq!((tr[0], tr[8]), (0.0, 2.0));
        let te = coords(irregular_time_grid(8, 0.25, TimeGridKind::Test).unwrap());
        assert_eq!(te, vec![0.0, 0.25, 0.5, 0.75, 1.0, 2.5, 3.0]);
        assert!(te.windows(2).all(|w| w[1] > w[0]));
        let th = coords(irregular_time_grid(8, 0.25, TimeGridKind::TestWithinHorizon).unwrap());
        assert_eq!(th, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]);
        assert!(irregular_time_grid(7, 0.25, TimeGridKind::Train).is_err());
        let g = time_grid(irregular_time_grid(200, 0.01, TimeGridKind::TestWithinHorizon).unwrap()).unwrap();
        assert_eq!(g.len(), 151);
        assert!((g.domain().bounds()[0].1 - 2.0).abs() < 1e-12);
    }
}

//! Moving signals between the measured q grid and a geometric grid.
//!
//! On a geometric grid with ratio `r = exp(delta)` a multiplicative shift of
//! the pattern by `r` is exactly a one-row offset, which is what lets the
//! factorization represent peak shifting with integer row shifts.

use ndarray::{Array2, ArrayView1, Axis};
use thiserror::Error;

use crate::model::{GridKind, ModelError, QGrid};

/// Relative slack when deciding whether a point lies inside the source range.
const RANGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("oversample must be positive and finite, got {0}")]
    Oversample(f64),
    #[error("signal has length {found}, grid has {expected} points")]
    LengthMismatch { found: usize, expected: usize },
    #[error(transparent)]
    Grid(#[from] ModelError),
}

/// Geometric grid spanning `src` with about `oversample` times its density.
///
/// The point count is `ceil(oversample * (N - 1)) + 1`, so a source that is
/// already geometric comes back unchanged at `oversample = 1`.
pub fn build_log_grid(src: &QGrid, oversample: f64) -> Result<QGrid, ResampleError> {
    if !(oversample > 0.0 && oversample.is_finite()) {
        return Err(ResampleError::Oversample(oversample));
    }
    let intervals = oversample * (src.len() - 1) as f64;
    // shave rounding noise so that e.g. 3 * 99 does not ceil to 298
    let intervals = ((intervals - 1e-9).ceil() as usize).max(1);
    let n_log = intervals + 1;
    if src.kind() == GridKind::Geometric && n_log == src.len() {
        return Ok(src.clone());
    }
    Ok(QGrid::geometric(src.first(), src.last(), n_log)?)
}

/// Multiplicative shift for an offset of `offset` rows on a grid with
/// log-spacing `delta`.
pub fn shift_to_lambda(offset: f64, delta: f64) -> f64 {
    (offset * delta).exp()
}

/// Log-spacing that makes `m` shift copies reach a maximum shift of
/// `lambda_max`, i.e. `(m - 1) * delta = ln(lambda_max)`.
pub fn delta_for_shift_range(lambda_max: f64, m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    lambda_max.ln() / (m - 1) as f64
}

/// Piecewise-linear interpolation of `(src_q, values)` at each `dst_q`.
/// Points outside `[src_q[0], src_q[last]]` evaluate to zero.
pub fn interpolate(src_q: &[f64], values: &[f64], dst_q: &[f64]) -> Vec<f64> {
    debug_assert_eq!(src_q.len(), values.len());
    let n = src_q.len();
    let lo = src_q[0];
    let hi = src_q[n - 1];
    let mut out = Vec::with_capacity(dst_q.len());
    for &x in dst_q {
        let x = if x < lo && lo - x <= RANGE_TOLERANCE * lo {
            lo
        } else if x > hi && x - hi <= RANGE_TOLERANCE * hi {
            hi
        } else {
            x
        };
        if x < lo || x > hi {
            out.push(0.0);
            continue;
        }
        // src_q[seg] <= x <= src_q[seg + 1]
        let seg = src_q.partition_point(|&q| q < x).saturating_sub(1).min(n - 2);
        let (x0, x1) = (src_q[seg], src_q[seg + 1]);
        let (y0, y1) = (values[seg], values[seg + 1]);
        let y = if x == x1 {
            y1
        } else if x == x0 {
            y0
        } else {
            let t = (x - x0) / (x1 - x0);
            y0 + t * (y1 - y0)
        };
        out.push(y.max(0.0));
    }
    out
}

/// Source and destination grids of a log resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    src: QGrid,
    dst: QGrid,
    oversample: f64,
}

impl ResamplePlan {
    pub fn new(src: &QGrid, oversample: f64) -> Result<Self, ResampleError> {
        let dst = build_log_grid(src, oversample)?;
        Ok(ResamplePlan {
            src: src.clone(),
            dst,
            oversample,
        })
    }

    /// Plan between a measured grid and an existing geometric grid, e.g. the
    /// one stored with a solution.
    pub fn between(src: &QGrid, dst: &QGrid) -> Self {
        let oversample = (dst.len() - 1) as f64 / (src.len() - 1) as f64;
        ResamplePlan {
            src: src.clone(),
            dst: dst.clone(),
            oversample,
        }
    }

    pub fn src(&self) -> &QGrid {
        &self.src
    }

    pub fn dst(&self) -> &QGrid {
        &self.dst
    }

    pub fn oversample(&self) -> f64 {
        self.oversample
    }

    pub fn delta(&self) -> f64 {
        self.dst.delta().unwrap_or(0.0)
    }

    pub fn to_log(&self, signal: &[f64]) -> Result<Vec<f64>, ResampleError> {
        check_len(signal.len(), self.src.len())?;
        Ok(interpolate(self.src.values(), signal, self.dst.values()))
    }

    pub fn from_log(&self, signal: &[f64]) -> Result<Vec<f64>, ResampleError> {
        check_len(signal.len(), self.dst.len())?;
        Ok(interpolate(self.dst.values(), signal, self.src.values()))
    }

    /// Resamples every column of an `N x J` matrix onto the log grid.
    pub fn to_log_columns(&self, a: &Array2<f64>) -> Result<Array2<f64>, ResampleError> {
        check_len(a.nrows(), self.src.len())?;
        Ok(map_columns(a, self.dst.len(), |col| {
            interpolate(self.src.values(), &col.to_vec(), self.dst.values())
        }))
    }

    /// Resamples every column of an `N_log x J` matrix back to the source grid.
    pub fn from_log_columns(&self, a: &Array2<f64>) -> Result<Array2<f64>, ResampleError> {
        check_len(a.nrows(), self.dst.len())?;
        Ok(map_columns(a, self.src.len(), |col| {
            interpolate(self.dst.values(), &col.to_vec(), self.src.values())
        }))
    }

    /// Largest multiplicative shift representable with `m` shift copies.
    pub fn max_lambda(&self, m: usize) -> f64 {
        shift_to_lambda(m.saturating_sub(1) as f64, self.delta())
    }
}

fn check_len(found: usize, expected: usize) -> Result<(), ResampleError> {
    if found != expected {
        return Err(ResampleError::LengthMismatch { found, expected });
    }
    Ok(())
}

fn map_columns<F>(a: &Array2<f64>, rows: usize, f: F) -> Array2<f64>
where
    F: Fn(ArrayView1<f64>) -> Vec<f64>,
{
    let mut out = Array2::zeros((rows, a.ncols()));
    for (j, col) in a.axis_iter(Axis(1)).enumerate() {
        let mapped = f(col);
        for (i, v) in mapped.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

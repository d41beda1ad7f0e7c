//! Grid-based KL and modified symmetric KL (MSKL) divergence between two
//! fitted mixtures.
//!
//! Both densities are evaluated on one shared axis-aligned grid. MSKL is
//!
//! ```text
//! ½ [ Σ √p(x_i) log(√p(x_i)/√q(x_i)) + Σ √q(x_i) log(√q(x_i)/√p(x_i)) ]
//! ```
//!
//! with every term multiplied by the cell volume unless the raw sum is
//! requested. `√p` is used as is, without renormalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{GmmDensity, GmmParams};
use crate::scalar::{compensated_sum, Real};

pub const DEFAULT_GRID_POINTS: usize = 200;
pub const DEFAULT_PAD: f64 = 6.0;

/// Density floor applied inside logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Terms whose leading density is below this fraction of its maximum are skipped.
pub const RELATIVE_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }
}

/// Uniform evaluation grid in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub axes: Vec<GridAxis>,
}

impl EvalGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::UnsupportedDimension(axes.len()));
        }
        for a in &axes {
            if !a.lower.is_finite() || !a.upper.is_finite() || !(a.lower < a.upper) || a.points < 2 {
                return Err(Error::InvalidParams(format!("bad grid axis {a:?}")));
            }
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::spacing).product()
    }

    /// Coordinates of grid point `index`; the last axis varies fastest.
    pub fn point<T: Real>(&self, index: usize) -> Vec<T> {
        let mut rem = index;
        let mut out = vec![T::zero(); self.dim()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            out[d] = T::of(axis.coordinate(rem % axis.points));
            rem /= axis.points;
        }
        out
    }
}

/// Axis-aligned grid covering `mean ± pad · σ` of every component of both
/// mixtures, `σ` being the component's marginal standard deviation per axis.
pub fn make_grid<T: Real>(p: &GmmParams<T>, q: &GmmParams<T>, points_per_axis: usize, pad: f64) -> Result<EvalGrid> {
    if p.dim() != q.dim() {
        return Err(Error::dim(p.dim(), q.dim()));
    }
    let m = p.dim();
    if m > 2 {
        return Err(Error::UnsupportedDimension(m));
    }
    if points_per_axis < 2 {
        return Err(Error::InvalidParams("need at least 2 grid points per axis".into()));
    }
    if !(pad > 0.0) || !pad.is_finite() {
        return Err(Error::InvalidParams(format!("pad must be positive, got {pad}")));
    }
    let axes = (0..m)
        .map(|axis| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for g in [p, q] {
                for (mu, cov) in g.means().iter().zip(g.covariances()) {
                    let c = mu[axis].as_f64();
                    let s = cov.variance(axis).as_f64().sqrt();
                    lo = lo.min(c - pad * s);
                    hi = hi.max(c + pad * s);
                }
            }
            GridAxis {
                lower: lo,
                upper: hi,
                points: points_per_axis,
            }
        })
        .collect();
    EvalGrid::new(axes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub mskl: f64,
    pub kl_pq: f64,
    pub kl_qp: f64,
    pub grid: EvalGrid,
    /// Whether terms were multiplied by the cell volume.
    pub weighted: bool,
}

/// Log-densities of a mixture at every grid point, in grid order.
fn log_density_on_grid<T: Real>(d: &GmmDensity<T>, grid: &EvalGrid) -> Vec<T> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| d.log_pdf(&grid.point::<T>(i)))
        .collect()
}

fn check_grid<T: Real>(p: &GmmParams<T>, q: &GmmParams<T>, grid: &EvalGrid) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::dim(p.dim(), q.dim()));
    }
    if grid.dim() != p.dim() {
        return Err(Error::dim(p.dim(), grid.dim()));
    }
    Ok(())
}

fn cutoff<T: Real>(log_vals: &[T]) -> T {
    let max = log_vals.iter().copied().fold(T::neg_infinity(), T::max);
    max + T::of(RELATIVE_CUTOFF.ln())
}

/// `Σ a log(a/b)` over grid values given as logarithms.
fn kl_sum<T: Real>(log_a: &[T], log_b: &[T]) -> T {
    let floor = T::of(DENSITY_FLOOR.ln());
    let cut = cutoff(log_a);
    compensated_sum(
        log_a
            .iter()
            .zip(log_b)
            .filter(|(&a, _)| a >= cut)
            .map(|(&a, &b)| a.exp() * (a - b.max(floor))),
    )
}

/// `Σ √a log(√a/√b)` over grid values given as logarithms.
fn sqrt_kl_sum<T: Real>(log_a: &[T], log_b: &[T]) -> T {
    let half = T::of(0.5);
    let floor = T::of(DENSITY_FLOOR.ln());
    let cut = cutoff(log_a);
    compensated_sum(
        log_a
            .iter()
            .zip(log_b)
            .filter(|(&a, _)| a >= cut)
            .map(|(&a, &b)| (half * a).exp() * half * (a - b.max(floor))),
    )
}

/// Volume-weighted grid estimate of `KL(p ‖ q) = ∫ p log(p/q)`.
pub fn kl_grid<T: Real>(p: &GmmParams<T>, q: &GmmParams<T>, grid: &EvalGrid) -> Result<f64> {
    check_grid(p, q, grid)?;
    let lp = log_density_on_grid(&p.density(), grid);
    let lq = log_density_on_grid(&q.density(), grid);
    Ok(kl_sum(&lp, &lq).as_f64() * grid.cell_volume())
}

/// MSKL on `grid`, plus both KL directions.
///
/// `weighted = false` returns the plain sums without the cell volume.
pub fn mskl<T: Real>(p: &GmmParams<T>, q: &GmmParams<T>, grid: &EvalGrid, weighted: bool) -> Result<DivergenceResult> {
    check_grid(p, q, grid)?;
    let lp = log_density_on_grid(&p.density(), grid);
    let lq = log_density_on_grid(&q.density(), grid);
    let scale = if weighted { grid.cell_volume() } else { 1.0 };
    let forward = sqrt_kl_sum(&lp, &lq).as_f64();
    let backward = sqrt_kl_sum(&lq, &lp).as_f64();
    Ok(DivergenceResult {
        mskl: 0.5 * (forward + backward) * scale,
        kl_pq: kl_sum(&lp, &lq).as_f64() * scale,
        kl_qp: kl_sum(&lq, &lp).as_f64() * scale,
        grid: grid.clone(),
        weighted,
    })
}

/// [`make_grid`] followed by [`mskl`].
pub fn mskl_auto<T: Real>(
    p: &GmmParams<T>,
    q: &GmmParams<T>,
    points_per_axis: usize,
    pad: f64,
    weighted: bool,
) -> Result<DivergenceResult> {
    let grid = make_grid(p, q, points_per_axis, pad)?;
    mskl(p, q, &grid, weighted)
}

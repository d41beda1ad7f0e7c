//! Classical point-cloud distances: Hausdorff, Chamfer, earth mover's, and
//! the permutation bound `d_J` on pairwise-distance discrepancy.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::solve_assignment;
use crate::cloud::{distance, squared_distance, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

/// Largest cloud accepted by exact `d_J`.
pub const DJ_EXACT_MAX: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Hausdorff,
    Chamfer,
    Emd,
    Dj,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Hausdorff => "hausdorff",
            MetricName::Chamfer => "chamfer",
            MetricName::Emd => "emd",
            MetricName::Dj => "dj",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hausdorff" => Ok(Self::Hausdorff),
            "chamfer" => Ok(Self::Chamfer),
            "emd" => Ok(Self::Emd),
            "dj" => Ok(Self::Dj),
            other => Err(Error::InvalidParams(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue<T> {
    pub name: MetricName,
    pub value: T,
    /// False when the value is an approximation (greedy `d_J`).
    pub exact: bool,
}

fn same_dim<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::dim(p.dim(), q.dim()));
    }
    Ok(())
}

fn same_size<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// Distance from every point of `from` to its nearest neighbor in `to`.
pub fn nearest_distances<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>) -> Vec<T> {
    (0..from.len())
        .into_par_iter()
        .map(|i| {
            let p = from.point(i);
            to.points()
                .map(|q| squared_distance(p, q))
                .fold(T::infinity(), T::min)
                .sqrt()
        })
        .collect()
}

/// `sup_{p∈from} inf_{q∈to} ‖p − q‖`.
pub fn directed_hausdorff<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>) -> Result<T> {
    same_dim(from, to)?;
    Ok(nearest_distances(from, to).into_iter().fold(T::zero(), T::max))
}

pub fn hausdorff<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<MetricValue<T>> {
    let value = directed_hausdorff(p, q)?.max(directed_hausdorff(q, p)?);
    Ok(MetricValue {
        name: MetricName::Hausdorff,
        value,
        exact: true,
    })
}

/// Mean nearest-neighbor distance from `from` into `to`, optionally squared.
pub fn directed_chamfer<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>, squared: bool) -> Result<T> {
    same_dim(from, to)?;
    let nn = nearest_distances(from, to);
    let total = compensated_sum(nn.into_iter().map(|d| if squared { d * d } else { d }));
    Ok(total / T::of(from.len() as f64))
}

/// Sum of the two directed mean nearest-neighbor distances (unsquared).
pub fn chamfer<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<MetricValue<T>> {
    chamfer_with(p, q, false)
}

/// Chamfer distance; `squared` averages squared nearest-neighbor distances instead.
pub fn chamfer_with<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>, squared: bool) -> Result<MetricValue<T>> {
    let value = directed_chamfer(p, q, squared)? + directed_chamfer(q, p, squared)?;
    Ok(MetricValue {
        name: MetricName::Chamfer,
        value,
        exact: true,
    })
}

/// Minimum total Euclidean transport cost over bijections between equal-size clouds.
pub fn emd<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<MetricValue<T>> {
    same_dim(p, q)?;
    same_size(p, q)?;
    let n = p.len();
    let mut cost = Vec::with_capacity(n * n);
    for a in p.points() {
        for b in q.points() {
            cost.push(distance(a, b));
        }
    }
    let assignment = solve_assignment(n, &cost);
    let value = compensated_sum(assignment.iter().enumerate().map(|(r, &c)| cost[r * n + c]));
    Ok(MetricValue {
        name: MetricName::Emd,
        value,
        exact: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DjMode {
    Exact,
    Greedy,
}

fn distance_matrix<T: Real>(c: &PointCloud<T>) -> Vec<T> {
    let n = c.len();
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(c.point(i), c.point(j));
            m[i * n + j] = d;
            m[j * n + i] = d;
        }
    }
    m
}

/// `max_{i,j} ½|dx(i, j) − dy(π i, π j)|` for one permutation.
pub fn dj_objective<T: Real>(dx: &[T], dy: &[T], n: usize, perm: &[usize]) -> T {
    let half = T::of(0.5);
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = half * (dx[i * n + j] - dy[perm[i] * n + perm[j]]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Permutation-minimized maximum pairwise-distance discrepancy.
///
/// `Exact` searches all permutations (branch and bound) and is limited to
/// [`DJ_EXACT_MAX`] points. `Greedy` runs a first-improvement transposition
/// search from the identity and returns an upper bound.
pub fn dj<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>, mode: DjMode) -> Result<MetricValue<T>> {
    same_dim(p, q)?;
    same_size(p, q)?;
    let n = p.len();
    let dx = distance_matrix(p);
    let dy = distance_matrix(q);
    let (value, exact) = match mode {
        DjMode::Exact => {
            if n > DJ_EXACT_MAX {
                return Err(Error::TooLargeForExact { n, max: DJ_EXACT_MAX });
            }
            (dj_exact(&dx, &dy, n), true)
        }
        DjMode::Greedy => (dj_greedy(&dx, &dy, n), false),
    };
    Ok(MetricValue {
        name: MetricName::Dj,
        value,
        exact,
    })
}

fn dj_exact<T: Real>(dx: &[T], dy: &[T], n: usize) -> T {
    struct Search<'a, T> {
        dx: &'a [T],
        dy: &'a [T],
        n: usize,
        perm: Vec<usize>,
        used: Vec<bool>,
        best: T,
    }

    impl<T: Real> Search<'_, T> {
        fn descend(&mut self, depth: usize, worst: T) {
            if depth == self.n {
                if worst < self.best {
                    self.best = worst;
                }
                return;
            }
            let half = T::of(0.5);
            for cand in 0..self.n {
                if self.used[cand] {
                    continue;
                }
                let mut w = worst;
                for i in 0..depth {
                    let d = half * (self.dx[i * self.n + depth] - self.dy[self.perm[i] * self.n + cand]).abs();
                    if d > w {
                        w = d;
                    }
                }
                if w >= self.best {
                    continue;
                }
                self.used[cand] = true;
                self.perm.push(cand);
                self.descend(depth + 1, w);
                self.perm.pop();
                self.used[cand] = false;
            }
        }
    }

    let identity: Vec<usize> = (0..n).collect();
    let mut s = Search {
        dx,
        dy,
        n,
        perm: Vec::with_capacity(n),
        used: vec![false; n],
        best: dj_objective(dx, dy, n, &identity),
    };
    if s.best > T::zero() {
        s.descend(0, T::zero());
    }
    s.best
}

fn dj_greedy<T: Real>(dx: &[T], dy: &[T], n: usize) -> T {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut current = dj_objective(dx, dy, n, &perm);
    let mut improved = true;
    while improved && current > T::zero() {
        improved = false;
        for i in 0..n {
            for j in (i + 1)..n {
                perm.swap(i, j);
                let v = dj_objective(dx, dy, n, &perm);
                if v < current {
                    current = v;
                    improved = true;
                } else {
                    perm.swap(i, j);
                }
            }
        }
    }
    current
}

/// Evaluates the requested metrics in order.
pub fn evaluate<T: Real>(
    p: &PointCloud<T>,
    q: &PointCloud<T>,
    metrics: &[MetricName],
    squared_chamfer: bool,
    dj_mode: DjMode,
) -> Result<Vec<MetricValue<T>>> {
    metrics
        .iter()
        .map(|m| match m {
            MetricName::Hausdorff => hausdorff(p, q),
            MetricName::Chamfer => chamfer_with(p, q, squared_chamfer),
            MetricName::Emd => emd(p, q),
            MetricName::Dj => dj(p, q, dj_mode),
        })
        .collect()
}

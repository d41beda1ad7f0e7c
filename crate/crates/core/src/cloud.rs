//! Point-cloud data model and Euclidean distance primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// An ordered, non-empty set of points of a common dimension `m`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T> {
    dim: usize,
    coords: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl<T: Real> PointCloud<T> {
    /// Builds a cloud from a flat row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::dim(1, 0));
        }
        if coords.is_empty() {
            return Err(Error::EmptyRequest("point cloud needs at least one point"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::dim(dim, coords.len() % dim));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index: pos / dim });
        }
        Ok(Self {
            dim,
            coords,
            label: None,
        })
    }

    pub fn from_points<P: AsRef<[T]>>(points: &[P]) -> Result<Self> {
        let first = points
            .first()
            .ok_or(Error::EmptyRequest("point cloud needs at least one point"))?;
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::dim(dim, p.len()));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    /// Like [`PointCloud::from_points`] but also rejects exact duplicate points.
    pub fn from_points_strict<P: AsRef<[T]>>(points: &[P]) -> Result<Self> {
        let cloud = Self::from_points(points)?;
        cloud.check_distinct()?;
        Ok(cloud)
    }

    pub fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(self.point(a), self.point(b)));
        for w in order.windows(2) {
            if self.point(w[0]) == self.point(w[1]) {
                return Err(Error::DuplicatePoint { index: w[0].max(w[1]) });
            }
        }
        Ok(())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn set_label(&mut self, label: Option<String>) {
        self.label = label;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false: clouds hold at least one point.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<T> {
        self.coords
    }

    /// New cloud made of the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        let mut out = Self::from_flat(self.dim, coords)?;
        out.label = self.label.clone();
        Ok(out)
    }

    /// Concatenation in argument order. All clouds must share one dimension.
    pub fn concat(clouds: &[PointCloud<T>]) -> Result<Self> {
        let first = clouds
            .first()
            .ok_or(Error::EmptyRequest("nothing to concatenate"))?;
        let mut coords = Vec::new();
        for c in clouds {
            if c.dim != first.dim {
                return Err(Error::dim(first.dim, c.dim));
            }
            coords.extend_from_slice(&c.coords);
        }
        Self::from_flat(first.dim, coords)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            dim: self.dim,
            coords: self.coords.iter().map(|&c| U::of(c.as_f64())).collect(),
            label: self.label.clone(),
        }
    }

    /// Per-axis `(min, max)`.
    pub fn bounds(&self) -> Vec<(T, T)> {
        let mut b = vec![(T::infinity(), T::neg_infinity()); self.dim];
        for p in self.points() {
            for (slot, &c) in b.iter_mut().zip(p) {
                slot.0 = slot.0.min(c);
                slot.1 = slot.1.max(c);
            }
        }
        b
    }

    /// Min-max scales every axis to `[0, 1]`. Constant axes map to 0.
    pub fn normalize_axes(&self) -> Self {
        let bounds = self.bounds();
        let coords = self
            .points()
            .flat_map(|p| {
                p.iter().zip(&bounds).map(|(&c, &(lo, hi))| {
                    let range = hi - lo;
                    if range > T::zero() {
                        (c - lo) / range
                    } else {
                        T::zero()
                    }
                })
            })
            .collect();
        Self {
            dim: self.dim,
            coords,
            label: self.label.clone(),
        }
    }
}

fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Euclidean distance between two points of equal dimension.
pub fn pairwise_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    Ok(distance(a, b))
}

#[inline]
pub(crate) fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

#[inline]
pub(crate) fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    squared_distance(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_examples() {
        assert_eq!(pairwise_distance(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            pairwise_distance(&[0.0, 0.0], &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn distance_matches_sum_of_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mut ss = 0.0;
            for i in 0..3 {
                ss += (a[i] - b[i]).powi(2);
            }
            assert!((pairwise_distance(&a, &b).unwrap() - ss.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn construction_checks() {
        assert!(PointCloud::<f64>::from_flat(3, vec![]).is_err());
        assert!(PointCloud::<f64>::from_flat(3, vec![1.0, 2.0]).is_err());
        assert!(matches!(
            PointCloud::from_flat(2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 0 })
        ));
        let dup = [[0.0, 1.0], [2.0, 3.0], [0.0, 1.0]];
        assert!(PointCloud::from_points(&dup).is_ok());
        assert!(matches!(
            PointCloud::from_points_strict(&dup),
            Err(Error::DuplicatePoint { index: 2 })
        ));
    }

    #[test]
    fn normalize_axes_maps_to_unit_box() {
        let c = PointCloud::from_points(&[[0.0, 5.0, 1.0], [10.0, 7.0, 1.0], [5.0, 6.0, 1.0]]).unwrap();
        let n = c.normalize_axes();
        assert_eq!(n.point(0), &[0.0, 0.0, 0.0]);
        assert_eq!(n.point(1), &[1.0, 1.0, 0.0]);
        assert_eq!(n.point(2), &[0.5, 0.5, 0.0]);
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in prop::array::uniform3(-100.0f64..100.0),
                               b in prop::array::uniform3(-100.0f64..100.0),
                               c in prop::array::uniform3(-100.0f64..100.0)) {
            let ab = pairwise_distance(&a, &b).unwrap();
            let bc = pairwise_distance(&b, &c).unwrap();
            let ac = pairwise_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, pairwise_distance(&b, &a).unwrap());
        }
    }
}

//! Synthetic test shapes: solid unit cube, cone surface, unit sphere.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scalar::Real;

/// Default point count for shape clouds.
pub const DEFAULT_SHAPE_POINTS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Cube,
    Cone,
    Sphere,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Sphere, ShapeKind::Cone, ShapeKind::Cube];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Cube => "cube",
            ShapeKind::Cone => "cone",
            ShapeKind::Sphere => "sphere",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cube" => Ok(ShapeKind::Cube),
            "cone" => Ok(ShapeKind::Cone),
            "sphere" => Ok(ShapeKind::Sphere),
            other => Err(Error::InvalidParams(format!("unknown shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    #[serde(default = "default_points")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_points() -> usize {
    DEFAULT_SHAPE_POINTS
}

impl ShapeSpec {
    pub fn generate<T: Real>(&self) -> Result<PointCloud<T>> {
        let cloud = match self.kind {
            ShapeKind::Cube => generate_cube(self.n, self.seed)?,
            ShapeKind::Cone => generate_cone(self.n, self.seed)?,
            ShapeKind::Sphere => generate_sphere(self.n, self.seed)?,
        };
        Ok(cloud.with_label(self.kind.name()))
    }
}

fn build<T: Real>(n: usize, seed: u64, mut point: impl FnMut(&mut crate::rng::StreamRng) -> [f64; 3]) -> Result<PointCloud<T>> {
    if n == 0 {
        return Err(Error::EmptyRequest("shape point count must be at least 1"));
    }
    let mut r = rng(seed);
    let mut coords = Vec::with_capacity(3 * n);
    for _ in 0..n {
        coords.extend(point(&mut r).into_iter().map(T::of));
    }
    PointCloud::from_flat(3, coords)
}

/// Solid cube `[-0.5, 0.5]^3`, coordinates drawn independently and uniformly.
pub fn generate_cube<T: Real>(n: usize, seed: u64) -> Result<PointCloud<T>> {
    build(n, seed, |r| {
        [
            r.random_range(-0.5..=0.5),
            r.random_range(-0.5..=0.5),
            r.random_range(-0.5..=0.5),
        ]
    })
}

/// Lateral surface of the cone with base radius 1 at `z = 0` and apex at `(0, 0, 2)`.
///
/// Height `h` and angle `θ` are uniform; the radius is `1 - h/2`.
pub fn generate_cone<T: Real>(n: usize, seed: u64) -> Result<PointCloud<T>> {
    build(n, seed, |r| {
        let theta = r.random_range(0.0..=2.0 * PI);
        let h: f64 = r.random_range(0.0..=2.0);
        cone_point(theta, h)
    })
}

pub(crate) fn cone_point(theta: f64, h: f64) -> [f64; 3] {
    let radius = 1.0 - h / 2.0;
    [radius * theta.cos(), radius * theta.sin(), h]
}

/// Unit sphere with `θ ~ U[0, 2π]` and `φ ~ U[0, π]`.
///
/// Uniform in the angles, so not area-uniform: points crowd toward the poles.
pub fn generate_sphere<T: Real>(n: usize, seed: u64) -> Result<PointCloud<T>> {
    build(n, seed, |r| {
        let theta = r.random_range(0.0..=2.0 * PI);
        let phi: f64 = r.random_range(0.0..=PI);
        [phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_stats(c: &PointCloud<f64>, axis: usize) -> (f64, f64) {
        let n = c.len() as f64;
        let mean = c.points().map(|p| p[axis]).sum::<f64>() / n;
        let var = c.points().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn zero_points_rejected() {
        assert!(matches!(generate_cube::<f64>(0, 1), Err(Error::EmptyRequest(_))));
        assert!(matches!(generate_cone::<f64>(0, 1), Err(Error::EmptyRequest(_))));
        assert!(matches!(generate_sphere::<f64>(0, 1), Err(Error::EmptyRequest(_))));
    }

    #[test]
    fn cube_in_box_with_uniform_moments() {
        let c = generate_cube::<f64>(100_000, 3).unwrap();
        assert!(c.as_flat().iter().all(|v| v.abs() <= 0.5));
        for axis in 0..3 {
            let (mean, var) = axis_stats(&c, axis);
            assert!(mean.abs() < 0.01, "mean {mean}");
            assert!((var - 1.0 / 12.0).abs() < 0.005, "var {var}");
        }
    }

    #[test]
    fn cone_on_surface() {
        let c = generate_cone::<f64>(100_000, 5).unwrap();
        for p in c.points() {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - (1.0 - p[2] / 2.0)).abs() < 1e-9);
            assert!((0.0..=2.0).contains(&p[2]));
        }
        let (mean_z, _) = axis_stats(&c, 2);
        assert!((mean_z - 1.0).abs() < 0.02);
    }

    #[test]
    fn cone_apex() {
        let p = cone_point(1.234, 2.0);
        assert!(p[0].abs() < 1e-15 && p[1].abs() < 1e-15);
        assert_eq!(p[2], 2.0);
    }

    #[test]
    fn sphere_unit_norm_and_symmetric_z() {
        let c = generate_sphere::<f64>(100_000, 9).unwrap();
        for p in c.points() {
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        let (mean_z, _) = axis_stats(&c, 2);
        assert!(mean_z.abs() < 0.02);
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in ShapeKind::ALL {
            let spec = ShapeSpec { kind, n: 500, seed: 42 };
            let a: PointCloud<f64> = spec.generate().unwrap();
            let b: PointCloud<f64> = spec.generate().unwrap();
            assert_eq!(a, b);
            let other: PointCloud<f64> = ShapeSpec { seed: 43, ..spec }.generate().unwrap();
            assert_ne!(a, other);
        }
    }

    #[test]
    fn f32_generation_rounds_f64_stream() {
        let a = generate_sphere::<f64>(50, 1).unwrap();
        let b = generate_sphere::<f32>(50, 1).unwrap();
        assert_eq!(a.cast::<f32>(), b);
    }
}

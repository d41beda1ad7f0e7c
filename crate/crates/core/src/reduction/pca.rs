use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{flatten, LatentSet};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Principal directions of flattened samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Points per sample.
    pub points: usize,
    pub mean: Vec<f64>,
    /// Orthonormal directions, strongest first; each of length `3 · points`.
    pub basis: Vec<Vec<f64>>,
    /// Variance of the training data along each direction.
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn target_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn transform(&self, sample: &PointCloud<f64>) -> Result<Vec<f64>> {
        let x = flatten(sample, self.points)?;
        Ok(self
            .basis
            .iter()
            .map(|b| b.iter().zip(x).zip(&self.mean).map(|((bi, xi), mi)| bi * (xi - mi)).sum())
            .collect())
    }

    /// Back-projection of a latent vector to flattened coordinates.
    pub fn reconstruct(&self, latent: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (b, &z) in self.basis.iter().zip(latent) {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += z * bi;
            }
        }
        out
    }
}

/// Top `target_dim` principal directions of the flattened, mean-centered samples.
pub fn pca_fit(samples: &[PointCloud<f64>], target_dim: usize) -> Result<PcaModel> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let points = samples[0].len();
    let d = 3 * points;
    if target_dim == 0 || target_dim > d {
        return Err(Error::InvalidParams(format!("target dimension {target_dim} not in 1..={d}")));
    }
    let n = samples.len();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, s) in samples.iter().enumerate() {
        for (j, &v) in flatten(s, points)?.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    for j in 0..d {
        let m = mean[j];
        x.column_mut(j).add_scalar_mut(-m);
    }

    // Eigen-decompose whichever of X Xᵀ (n×n) or XᵀX (d×d) is smaller.
    let use_gram = n <= d;
    let sym = if use_gram { &x * x.transpose() } else { x.transpose() * &x };
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = top * 1e-12 * d as f64;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(target_dim);
    let mut variances = Vec::with_capacity(target_dim);
    for &idx in order.iter().take(target_dim) {
        let lambda = eig.eigenvalues[idx].max(0.0);
        let vec = eig.eigenvectors.column(idx);
        let dir: Option<Vec<f64>> = if lambda > rank_tol {
            Some(if use_gram {
                let v = x.transpose() * vec;
                let norm = v.norm();
                v.iter().map(|c| c / norm).collect()
            } else {
                vec.iter().copied().collect()
            })
        } else {
            None
        };
        let dir = match dir {
            Some(v) => orthonormalize(v, &basis),
            None => None,
        }
        .unwrap_or_else(|| complement_direction(&basis, d));
        basis.push(fix_sign(dir));
        variances.push(if lambda > rank_tol { lambda / n as f64 } else { 0.0 });
    }
    Ok(PcaModel {
        points,
        mean,
        basis,
        variances,
    })
}

fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= dot * bi;
        }
    }
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    (norm > 1e-8).then(|| v.into_iter().map(|c| c / norm).collect())
}

/// A unit vector orthogonal to `basis`, for directions with no variance.
fn complement_direction(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .find_map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            orthonormalize(e, basis)
        })
        .expect("basis smaller than ambient dimension")
}

/// Makes the largest-magnitude coordinate positive.
fn fix_sign(v: Vec<f64>) -> Vec<f64> {
    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, &c)| if c.abs() > best.1.abs() { (i, c) } else { best })
        .1;
    if pivot < 0.0 {
        v.into_iter().map(|c| -c).collect()
    } else {
        v
    }
}

/// Fits PCA on `samples` and returns their latent coordinates with the model.
pub fn pca_fit_transform(samples: &[PointCloud<f64>], target_dim: usize) -> Result<(LatentSet, PcaModel)> {
    let model = pca_fit(samples, target_dim)?;
    let latent = super::embed(samples, &super::ReductionModel::Pca(model.clone()))?;
    Ok((latent, model))
}

//! Maps fixed-size 3D samples to a low-dimensional latent space.
//!
//! Two reducers are available: PCA on the flattened coordinates (the
//! deterministic default) and a fully connected autoencoder trained on
//! Chamfer reconstruction loss. Labels never enter either reducer.

mod autoencoder;
mod pca;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub use autoencoder::{
    ae_forward, ae_train, chamfer_loss, chamfer_loss_with_grad, kink_margin, sample_gradient, AeArchitecture, Activation, AutoencoderParams, Dense,
    Gradients, TrainConfig, TrainHistory,
};
pub use pca::{pca_fit, pca_fit_transform, PcaModel};

/// One latent vector per sample, with the sample labels aligned by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSet {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Option<String>>,
}

impl LatentSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows carrying `label`, as a point cloud.
    pub fn cloud_for(&self, label: &str) -> Result<PointCloud<f64>> {
        let rows: Vec<&Vec<f64>> = self
            .rows
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| l.as_deref() == Some(label))
            .map(|(r, _)| r)
            .collect();
        PointCloud::from_points(&rows)
    }

    pub fn to_cloud(&self) -> Result<PointCloud<f64>> {
        PointCloud::from_points(&self.rows)
    }

    /// CSV with a header `x,y[,…],label`; floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<latent csv>", e);
        let names = ["x", "y", "z", "w"];
        let mut header: Vec<String> = (0..self.dim)
            .map(|i| names.get(i).map_or_else(|| format!("c{i}"), |s| s.to_string()))
            .collect();
        header.push("label".into());
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            fields.push(label.clone().unwrap_or_default());
            writeln!(out, "{}", fields.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty latent CSV".into() })?;
        let header = header.map_err(|e| Error::io("<latent csv>", e))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let has_label = cols.last() == Some(&"label");
        let dim = cols.len() - usize::from(has_label);
        if dim == 0 {
            return Err(Error::Parse { line: 1, message: "no coordinate columns".into() });
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<latent csv>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let row = fields[..dim]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("`{f}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
            labels.push(if has_label && !fields[dim].is_empty() {
                Some(fields[dim].to_string())
            } else {
                None
            });
        }
        Ok(Self { dim, rows, labels })
    }
}

/// A fitted reducer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ReductionModel {
    Pca(PcaModel),
    #[serde(rename = "ae")]
    Autoencoder(AutoencoderParams),
}

impl ReductionModel {
    pub fn latent_dim(&self) -> usize {
        match self {
            ReductionModel::Pca(m) => m.target_dim(),
            ReductionModel::Autoencoder(p) => p.architecture.latent,
        }
    }

    pub fn encode(&self, sample: &PointCloud<f64>) -> Result<Vec<f64>> {
        match self {
            ReductionModel::Pca(m) => m.transform(sample),
            ReductionModel::Autoencoder(p) => ae_forward(p, sample).map(|(z, _)| z),
        }
    }
}

/// Latent vector of every sample, order preserved.
pub fn embed(samples: &[PointCloud<f64>], model: &ReductionModel) -> Result<LatentSet> {
    let rows = samples.iter().map(|s| model.encode(s)).collect::<Result<Vec<_>>>()?;
    Ok(LatentSet {
        dim: model.latent_dim(),
        rows,
        labels: samples.iter().map(|s| s.label().map(str::to_string)).collect(),
    })
}

/// Row-major flattening `[x0, y0, z0, x1, …]` used as the reducer input.
pub(crate) fn flatten(sample: &PointCloud<f64>, points: usize) -> Result<&[f64]> {
    if sample.dim() != 3 {
        return Err(Error::dim(3, sample.dim()));
    }
    if sample.len() != points {
        return Err(Error::dim(3 * points, 3 * sample.len()));
    }
    Ok(sample.as_flat())
}

//! Point-cloud comparison through Gaussian mixture densities fitted in a
//! learned latent space, scored by modified symmetric KL divergence, next to
//! Hausdorff, Chamfer, EMD and permutation (`d_J`) baselines.

pub mod assignment;
pub mod audio;
pub mod cloud;
pub mod divergence;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod reduction;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod shapes;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PointCloud = cloud::PointCloud<f64>;
pub type PointCloudF32 = cloud::PointCloud<f32>;
pub type GmmParams = gmm::GmmParams<f64>;
pub type GmmParamsF32 = gmm::GmmParams<f32>;
pub type SampleSet = sampling::SampleSet<f64>;
pub type DataSplit = sampling::DataSplit<f64>;
pub type MetricValue = metrics::MetricValue<f64>;

pub use divergence::DivergenceResult;
pub use pipeline::{run_pipeline, ComparisonReport, PipelineConfig};
pub use reduction::{AutoencoderParams, LatentSet, TrainConfig};

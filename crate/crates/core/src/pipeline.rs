//! End-to-end comparison of two point clouds: sampling, splitting,
//! reduction, per-label mixture fits and MSKL, with classical baselines
//! computed on the raw clouds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::{audio_to_cloud, load_wav, DEFAULT_HOP, DEFAULT_NFFT};
use crate::cloud::PointCloud;
use crate::divergence::{mskl_auto, DivergenceResult, DEFAULT_GRID_POINTS, DEFAULT_PAD};
use crate::error::{Error, Result, StageExt};
use crate::gmm::{fit_em, CovarianceMode, FitConfig, FitReport, GmmDocument, GmmParams, InitMethod};
use crate::metrics::{chamfer_with, dj, emd, hausdorff, DjMode, MetricName, DJ_EXACT_MAX};
use crate::ply::{load_ply, write_ply, PlyFormat};
use crate::reduction::{
    ae_train, embed, pca_fit, AeArchitecture, LatentSet, ReductionModel, TrainConfig, TrainHistory,
};
use crate::rng::mix;
use crate::sampling::{extract_samples, fps, split_dataset, DataSplit, SampleSet, SplitRatios};
use crate::shapes::{ShapeKind, ShapeSpec, DEFAULT_SHAPE_POINTS};

pub const LABEL_A: &str = "First";
pub const LABEL_B: &str = "Second";
pub const TOOL_NAME: &str = "geocloud";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-stage seeds derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub shape: u64,
    pub sample: u64,
    pub split: u64,
    pub reduce: u64,
    pub fit: u64,
    pub baseline: u64,
}

impl StageSeeds {
    pub fn derive(master: u64) -> Self {
        Self {
            shape: mix(master, 1),
            sample: mix(master, 2),
            split: mix(master, 3),
            reduce: mix(master, 4),
            fit: mix(master, 5),
            baseline: mix(master, 6),
        }
    }
}

/// Where a cloud comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InputSource {
    Ply {
        path: PathBuf,
        /// Min-max scale each axis to [0, 1] after loading.
        #[serde(default)]
        normalize: bool,
    },
    Shape {
        kind: ShapeKind,
        #[serde(default = "default_shape_points")]
        n: usize,
        /// Generation seed; derived from the master seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Wav {
        path: PathBuf,
        #[serde(default = "default_nfft")]
        n_fft: usize,
        #[serde(default = "default_hop")]
        hop: usize,
    },
}

fn default_shape_points() -> usize {
    DEFAULT_SHAPE_POINTS
}

fn default_nfft() -> usize {
    DEFAULT_NFFT
}

fn default_hop() -> usize {
    DEFAULT_HOP
}

impl InputSource {
    pub fn shape(kind: ShapeKind, n: usize, seed: Option<u64>) -> Self {
        InputSource::Shape { kind, n, seed }
    }

    /// `kind`, `kind:seed` or a `.ply`/`.wav` path.
    pub fn parse(text: &str) -> Result<Self> {
        let lower = text.to_ascii_lowercase();
        if lower.ends_with(".ply") {
            return Ok(InputSource::Ply {
                path: text.into(),
                normalize: false,
            });
        }
        if lower.ends_with(".wav") {
            return Ok(InputSource::Wav {
                path: text.into(),
                n_fft: DEFAULT_NFFT,
                hop: DEFAULT_HOP,
            });
        }
        let (kind, seed) = match text.split_once(':') {
            Some((k, s)) => (
                k,
                Some(s.parse().map_err(|_| Error::InvalidParams(format!("bad shape seed `{s}`")))?),
            ),
            None => (text, None),
        };
        Ok(InputSource::Shape {
            kind: ShapeKind::from_str(kind)?,
            n: DEFAULT_SHAPE_POINTS,
            seed,
        })
    }

    /// Display name used in reports and tables.
    pub fn default_name(&self) -> String {
        match self {
            InputSource::Ply { path, .. } | InputSource::Wav { path, .. } => path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
            InputSource::Shape { kind, .. } => kind.name().to_string(),
        }
    }

    /// Loads or generates the cloud. Audio clouds are min-max normalized per axis.
    pub fn load(&self, shape_seed: u64) -> Result<PointCloud<f64>> {
        match self {
            InputSource::Ply { path, normalize } => {
                let cloud = load_ply(path)?;
                Ok(if *normalize { cloud.normalize_axes() } else { cloud })
            }
            InputSource::Shape { kind, n, seed } => ShapeSpec {
                kind: *kind,
                n: *n,
                seed: seed.unwrap_or(shape_seed),
            }
            .generate(),
            InputSource::Wav { path, n_fft, hop } => {
                let signal = load_wav(path)?;
                Ok(audio_to_cloud(&signal, *n_fft, *hop)?.normalize_axes())
            }
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            InputSource::Ply { path, .. } | InputSource::Wav { path, .. } if !path.is_file() => Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            )),
            InputSource::Shape { n: 0, .. } => Err(Error::EmptyRequest("shape point count must be at least 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub source: InputSource,
}

impl Input {
    pub fn new(source: InputSource) -> Self {
        Self { name: None, source }
    }

    pub fn named(name: impl Into<String>, source: InputSource) -> Self {
        Self {
            name: Some(name.into()),
            source,
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.source.default_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    pub size: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { count: 960, size: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMethod {
    #[default]
    Pca,
    Ae,
}

impl FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Self::Pca),
            "ae" | "autoencoder" => Ok(Self::Ae),
            other => Err(Error::InvalidParams(format!("unknown reduction method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub method: ReductionMethod,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        let arch = AeArchitecture::standard(1);
        let train = TrainConfig::default();
        Self {
            method: ReductionMethod::Pca,
            latent_dim: arch.latent,
            encoder_hidden: arch.encoder_hidden,
            decoder_hidden: arch.decoder_hidden,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
        }
    }
}

impl ReductionConfig {
    pub fn architecture(&self, points: usize) -> AeArchitecture {
        AeArchitecture {
            points,
            encoder_hidden: self.encoder_hidden.clone(),
            latent: self.latent_dim,
            decoder_hidden: self.decoder_hidden.clone(),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub k: usize,
    pub mode: CovarianceMode,
    pub init: InitMethod,
    pub max_iter: usize,
    pub tol: f64,
    pub reg: f64,
    pub kmeans_iter: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            k: 5,
            mode: fit.mode,
            init: fit.init,
            max_iter: fit.max_iter,
            tol: fit.tol,
            reg: fit.reg,
            kmeans_iter: fit.kmeans_iter,
        }
    }
}

impl GmmConfig {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            reg: self.reg,
            seed,
            mode: self.mode,
            init: self.init,
            kmeans_iter: self.kmeans_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceConfig {
    pub grid_points: usize,
    pub pad: f64,
    /// Unweighted sums instead of the volume-weighted integral estimate.
    pub raw_sum: bool,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            grid_points: DEFAULT_GRID_POINTS,
            pad: DEFAULT_PAD,
            raw_sum: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub metrics: Vec<MetricName>,
    pub squared_chamfer: bool,
    /// Both clouds are FPS-downsampled to at most this many points for EMD.
    pub emd_points: usize,
    /// Both clouds are FPS-downsampled to at most this many points for `d_J`.
    pub dj_points: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            metrics: vec![MetricName::Chamfer, MetricName::Hausdorff, MetricName::Emd, MetricName::Dj],
            squared_chamfer: false,
            emd_points: 256,
            dj_points: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub a: Input,
    pub b: Input,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub gmm: GmmConfig,
    #[serde(default)]
    pub divergence: DivergenceConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(a: Input, b: Input, seed: u64) -> Self {
        Self {
            a,
            b,
            seed,
            sampling: SamplingConfig::default(),
            split: SplitRatios::default(),
            reduction: ReductionConfig::default(),
            gmm: GmmConfig::default(),
            divergence: DivergenceConfig::default(),
            baselines: BaselineConfig::default(),
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.a.source.check()?;
        self.b.source.check()?;
        if self.sampling.count == 0 || self.sampling.size == 0 {
            return Err(Error::EmptyRequest("sample count and size must be at least 1"));
        }
        self.split.validate()?;
        if !(1..=2).contains(&self.reduction.latent_dim) {
            return Err(Error::UnsupportedDimension(self.reduction.latent_dim));
        }
        if self.reduction.method == ReductionMethod::Ae {
            self.reduction.train_config(0).validate()?;
        }
        if self.gmm.k == 0 {
            return Err(Error::InvalidParams("K must be at least 1".into()));
        }
        let per_label_test = self.split.sizes(self.sampling.count).2;
        if per_label_test < self.gmm.k {
            return Err(Error::InsufficientData {
                needed: self.gmm.k,
                got: per_label_test,
            });
        }
        if self.divergence.grid_points < 2 || !(self.divergence.pad > 0.0) {
            return Err(Error::InvalidParams("grid needs ≥ 2 points per axis and a positive pad".into()));
        }
        if self.baselines.emd_points == 0 || self.baselines.dj_points == 0 {
            return Err(Error::InvalidParams("baseline subsample sizes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamfer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hausdorff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dj: Option<f64>,
    pub mskl: f64,
}

impl ReportMetrics {
    pub fn get(&self, name: MetricName) -> Option<f64> {
        match name {
            MetricName::Chamfer => self.chamfer,
            MetricName::Hausdorff => self.hausdorff,
            MetricName::Emd => self.emd,
            MetricName::Dj => self.dj,
        }
    }

    fn set(&mut self, name: MetricName, value: f64) {
        let slot = match name {
            MetricName::Chamfer => &mut self.chamfer,
            MetricName::Hausdorff => &mut self.hausdorff,
            MetricName::Emd => &mut self.emd,
            MetricName::Dj => &mut self.dj,
        };
        *slot = Some(value);
    }

    /// Baselines present, in table order.
    pub fn baseline_names(&self) -> Vec<MetricName> {
        [MetricName::Chamfer, MetricName::Hausdorff, MetricName::Emd, MetricName::Dj]
            .into_iter()
            .filter(|&m| self.get(m).is_some())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub points: usize,
}

impl FitSummary {
    fn new(report: &FitReport, points: usize) -> Self {
        Self {
            iterations: report.iterations,
            converged: report.converged,
            log_likelihood: report.log_likelihood,
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSummary {
    pub method: ReductionMethod,
    pub latent_dim: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples_per_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonReport {
    pub tool: String,
    pub version: String,
    pub label_a: String,
    pub label_b: String,
    pub metrics: ReportMetrics,
    pub divergence: DivergenceResult,
    pub gmm_a: GmmDocument<f64>,
    pub gmm_b: GmmDocument<f64>,
    pub fit_a: FitSummary,
    pub fit_b: FitSummary,
    pub reduction: ReductionSummary,
    pub config: PipelineConfig,
    pub timings: Vec<StageTiming>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    /// JSON with timings removed; identical runs give identical bytes.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timings.clear();
        copy.to_json()
    }

    /// Parses and validates a report document.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Schema(m.to_string()));
        if self.tool != TOOL_NAME {
            return fail("unexpected tool name");
        }
        if self.version.is_empty() || self.label_a.is_empty() || self.label_b.is_empty() {
            return fail("version and labels must be non-empty");
        }
        let m = &self.metrics;
        let baselines = m.baseline_names();
        if baselines.iter().any(|&n| !(m.get(n).unwrap() >= 0.0) || !m.get(n).unwrap().is_finite()) {
            return fail("baseline values must be finite and non-negative");
        }
        if !m.mskl.is_finite() || m.mskl < -1e-10 {
            return fail("mskl must be finite and non-negative");
        }
        if m.mskl != self.divergence.mskl {
            return fail("mskl disagrees with the divergence record");
        }
        for doc in [&self.gmm_a, &self.gmm_b] {
            GmmParams::<f64>::try_from(doc.clone())?;
        }
        if self.timings.iter().any(|t| !(t.seconds >= 0.0)) {
            return fail("negative stage timing");
        }
        Ok(())
    }
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage);
        self.0.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("{stage}: {:.3}s", start.elapsed().as_secs_f64());
        out
    }
}

/// Baselines on the raw clouds; EMD and `d_J` use equal-size FPS subsamples.
pub fn compute_baselines(
    a: &PointCloud<f64>,
    b: &PointCloud<f64>,
    config: &BaselineConfig,
    seed: u64,
) -> Result<BTreeMap<MetricName, f64>> {
    let subsample = |limit: usize| -> Result<(PointCloud<f64>, PointCloud<f64>)> {
        let s = limit.min(a.len()).min(b.len());
        Ok((fps(a, s, seed)?, fps(b, s, seed)?))
    };
    let mut out = BTreeMap::new();
    for &metric in &config.metrics {
        let value = match metric {
            MetricName::Chamfer => chamfer_with(a, b, config.squared_chamfer)?.value,
            MetricName::Hausdorff => hausdorff(a, b)?.value,
            MetricName::Emd => {
                let (sa, sb) = subsample(config.emd_points)?;
                emd(&sa, &sb)?.value
            }
            MetricName::Dj => {
                let (sa, sb) = subsample(config.dj_points)?;
                let mode = if sa.len() <= DJ_EXACT_MAX { DjMode::Exact } else { DjMode::Greedy };
                dj(&sa, &sb, mode)?.value
            }
        };
        out.insert(metric, value);
    }
    Ok(out)
}

/// Fitted reducer plus its training history (autoencoder only).
pub fn fit_reduction(
    split: &DataSplit<f64>,
    config: &ReductionConfig,
    seed: u64,
) -> Result<(ReductionModel, Option<TrainHistory>)> {
    let train: Vec<PointCloud<f64>> = split.train.iter().map(|s| s.cloud.clone()).collect();
    let points = train.first().map(|c| c.len()).ok_or(Error::EmptyRequest("training split is empty"))?;
    match config.method {
        ReductionMethod::Pca => Ok((ReductionModel::Pca(pca_fit(&train, config.latent_dim)?), None)),
        ReductionMethod::Ae => {
            let val: Vec<PointCloud<f64>> = split.validation.iter().map(|s| s.cloud.clone()).collect();
            let (params, history) = ae_train(config.architecture(points), &train, &val, &config.train_config(seed))?;
            Ok((ReductionModel::Autoencoder(params), Some(history)))
        }
    }
}

/// Latent rows of the test split: label A's samples by source index, then label B's.
pub fn embed_test(split: &DataSplit<f64>, model: &ReductionModel, labels: [&str; 2]) -> Result<LatentSet> {
    let samples: Vec<PointCloud<f64>> = labels
        .iter()
        .flat_map(|l| DataSplit::by_label(&split.test, l))
        .map(|s| s.cloud.clone())
        .collect();
    embed(&samples, model)
}

/// EM fit of one label's latent rows.
pub fn fit_label(latent: &LatentSet, label: &str, config: &GmmConfig, seed: u64) -> Result<(GmmParams<f64>, FitReport)> {
    let data = latent.cloud_for(label)?;
    fit_em(&data, config.k, &config.fit_config(seed))
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let seeds = StageSeeds::derive(config.seed);
    let mut timer = Timer(Vec::new());

    let cloud_a = timer.run("load", || config.a.source.load(seeds.shape))?;
    let cloud_b = timer.run("load", || config.b.source.load(seeds.shape))?;

    let baselines = timer.run("baseline", || compute_baselines(&cloud_a, &cloud_b, &config.baselines, seeds.baseline))?;

    let (set_a, set_b) = timer.run("sample", || {
        let s = config.sampling;
        Ok((
            extract_samples(&cloud_a, s.count, s.size, LABEL_A, seeds.sample)?,
            extract_samples(&cloud_b, s.count, s.size, LABEL_B, seeds.sample)?,
        ))
    })?;
    let split = timer.run("split", || split_dataset(&set_a, &set_b, config.split, seeds.split))?;
    let (model, history) = timer.run("reduce", || fit_reduction(&split, &config.reduction, seeds.reduce))?;
    let latent = timer.run("embed", || embed_test(&split, &model, [LABEL_A, LABEL_B]))?;
    let ((gmm_a, fit_a), (gmm_b, fit_b)) = timer.run("fit", || {
        Ok((
            fit_label(&latent, LABEL_A, &config.gmm, seeds.fit)?,
            fit_label(&latent, LABEL_B, &config.gmm, seeds.fit)?,
        ))
    })?;
    let divergence = timer.run("divergence", || {
        let d = &config.divergence;
        mskl_auto(&gmm_a, &gmm_b, d.grid_points, d.pad, !d.raw_sum)
    })?;

    let mut metrics = ReportMetrics {
        mskl: divergence.mskl,
        ..ReportMetrics::default()
    };
    for (&name, &value) in &baselines {
        metrics.set(name, value);
    }
    let per_label = |label: &str| DataSplit::by_label(&split.test, label).len();
    let report = ComparisonReport {
        tool: TOOL_NAME.to_string(),
        version: VERSION.to_string(),
        label_a: config.a.display_name(),
        label_b: config.b.display_name(),
        metrics,
        divergence,
        gmm_a: GmmDocument::from(&gmm_a),
        gmm_b: GmmDocument::from(&gmm_b),
        fit_a: FitSummary::new(&fit_a, per_label(LABEL_A)),
        fit_b: FitSummary::new(&fit_b, per_label(LABEL_B)),
        reduction: ReductionSummary {
            method: config.reduction.method,
            latent_dim: model.latent_dim(),
            train_samples: split.train.len(),
            validation_samples: split.validation.len(),
            test_samples_per_label: per_label(LABEL_A),
            final_train_loss: history.as_ref().and_then(|h| h.train.last().copied()),
            final_validation_loss: history.as_ref().and_then(|h| h.validation.last().copied()),
        },
        config: config.clone(),
        timings: timer.0,
    };
    if let Some(path) = &config.output {
        let text = report.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

/// Runs every unordered pair of `inputs` (including each input against itself
/// when `diagonal` is set) with the settings of `template`.
pub fn run_study(template: &PipelineConfig, inputs: &[Input], diagonal: bool) -> Result<Vec<ComparisonReport>> {
    use rayon::prelude::*;
    let mut pairs = Vec::new();
    for i in 0..inputs.len() {
        for j in 0..=i {
            if i != j || diagonal {
                pairs.push((i, j));
            }
        }
    }
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut cfg = template.clone();
            cfg.a = inputs[i].clone();
            cfg.b = inputs[j].clone();
            cfg.output = None;
            run_pipeline(&cfg)
        })
        .collect()
}

const SAMPLE_MANIFEST: &str = "samples.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub label: String,
    pub count: usize,
    pub size: usize,
    pub files: Vec<String>,
}

/// Writes each sample as a binary PLY plus a manifest naming the label.
pub fn write_sample_set(set: &SampleSet<f64>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = set.len().to_string().len().max(4);
    let mut files = Vec::with_capacity(set.len());
    for (i, sample) in set.samples.iter().enumerate() {
        let name = format!("sample_{i:0width$}.ply");
        write_ply(sample, dir.join(&name), PlyFormat::BinaryLittleEndian)?;
        files.push(name);
    }
    let manifest = SampleManifest {
        label: set.source_label.clone(),
        count: set.len(),
        size: set.sample_size().unwrap_or(0),
        files,
    };
    let path = dir.join(SAMPLE_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_sample_set(dir: impl AsRef<Path>) -> Result<SampleSet<f64>> {
    let dir = dir.as_ref();
    let path = dir.join(SAMPLE_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SampleManifest = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    if manifest.files.len() != manifest.count {
        return Err(Error::Schema(format!(
            "manifest lists {} files but count is {}",
            manifest.files.len(),
            manifest.count
        )));
    }
    let samples = manifest
        .files
        .iter()
        .map(|f| {
            let cloud: PointCloud<f64> = load_ply(dir.join(f))?;
            if cloud.len() != manifest.size {
                return Err(Error::Schema(format!("{f} has {} points, expected {}", cloud.len(), manifest.size)));
            }
            Ok(cloud.with_label(manifest.label.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        samples,
        source_label: manifest.label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::InvalidParams(format!("unknown table format `{other}`"))),
        }
    }
}

fn short_name(metric: Option<MetricName>) -> &'static str {
    match metric {
        Some(MetricName::Chamfer) => "Ch",
        Some(MetricName::Hausdorff) => "H",
        Some(MetricName::Emd) => "EMD",
        Some(MetricName::Dj) => "dJ",
        None => "IGM",
    }
}

fn metric_key(metric: Option<MetricName>) -> &'static str {
    metric.map_or("mskl", MetricName::as_str)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub row: String,
    pub column: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    pub labels: Vec<String>,
    pub metrics: Vec<String>,
    /// Lower triangle including the diagonal, row-major.
    pub cells: Vec<TableCell>,
}

/// Pairwise table of stored reports, lower-triangular with the diagonal.
///
/// Diagonal cells without a report are zero; off-diagonal pairs without a
/// report are left out.
pub fn build_table(reports: &[ComparisonReport]) -> Result<TableDocument> {
    let first = reports.first().ok_or(Error::EmptyRequest("no reports to tabulate"))?;
    let baselines = first.metrics.baseline_names();
    for r in reports {
        if r.metrics.baseline_names() != baselines {
            return Err(Error::Schema(format!(
                "report {} vs {} has a different metric set",
                r.label_a, r.label_b
            )));
        }
    }
    let columns: Vec<Option<MetricName>> = baselines.iter().copied().map(Some).chain([None]).collect();
    let mut labels: Vec<String> = Vec::new();
    for r in reports {
        for l in [&r.label_a, &r.label_b] {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    let mut cells = Vec::new();
    for (i, row) in labels.iter().enumerate() {
        for column in &labels[..=i] {
            let found = reports.iter().find(|r| {
                (&r.label_a == row && &r.label_b == column) || (&r.label_a == column && &r.label_b == row)
            });
            let values: Option<BTreeMap<String, f64>> = match found {
                Some(r) => Some(
                    columns
                        .iter()
                        .map(|&m| (metric_key(m).to_string(), m.map_or(r.metrics.mskl, |n| r.metrics.get(n).unwrap())))
                        .collect(),
                ),
                None if row == column => Some(columns.iter().map(|&m| (metric_key(m).to_string(), 0.0)).collect()),
                None => None,
            };
            if let Some(values) = values {
                cells.push(TableCell {
                    row: row.clone(),
                    column: column.clone(),
                    values,
                });
            }
        }
    }
    Ok(TableDocument {
        labels,
        metrics: columns.iter().map(|&m| metric_key(m).to_string()).collect(),
        cells,
    })
}

pub fn emit_table(reports: &[ComparisonReport], format: TableFormat) -> Result<String> {
    let table = build_table(reports)?;
    let columns: Vec<Option<MetricName>> = table
        .metrics
        .iter()
        .map(|m| if m == "mskl" { None } else { MetricName::from_str(m).ok() })
        .collect();
    match format {
        TableFormat::Json => serde_json::to_string_pretty(&table).map_err(|e| Error::Schema(e.to_string())),
        TableFormat::Csv => {
            let mut out = String::from("row,column,metric,value\n");
            for r in reports {
                for &m in &columns {
                    let v = m.map_or(r.metrics.mskl, |n| r.metrics.get(n).unwrap());
                    let _ = writeln!(out, "{},{},{},{v:?}", csv_field(&r.label_a), csv_field(&r.label_b), metric_key(m));
                }
            }
            Ok(out)
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| |{}|", table.labels.join("|"));
            let _ = writeln!(out, "|---|{}|", vec!["---"; table.labels.len()].join("|"));
            for (i, row) in table.labels.iter().enumerate() {
                let mut line = format!("|{row}|");
                for (j, column) in table.labels.iter().enumerate() {
                    if j <= i {
                        if let Some(cell) = table.cells.iter().find(|c| &c.row == row && &c.column == column) {
                            let parts: Vec<String> = columns
                                .iter()
                                .map(|&m| format!("{} = {:.4}", short_name(m), cell.values[metric_key(m)]))
                                .collect();
                            line.push_str(&parts.join("<br>"));
                        }
                    }
                    line.push('|');
                }
                let _ = writeln!(out, "{line}");
            }
            Ok(out)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(a: InputSource, b: InputSource, seed: u64) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(Input::new(a), Input::new(b), seed);
        cfg.sampling = SamplingConfig { count: 60, size: 32 };
        cfg.gmm.k = 3;
        cfg.divergence.grid_points = 60;
        cfg.baselines.emd_points = 64;
        cfg.baselines.dj_points = 12;
        cfg
    }

    fn shape(kind: ShapeKind, seed: u64) -> InputSource {
        InputSource::shape(kind, 512, Some(seed))
    }

    #[test]
    fn identical_inputs_give_zero() {
        let cfg = small(shape(ShapeKind::Cone, 3), shape(ShapeKind::Cone, 3), 11);
        let r = run_pipeline(&cfg).unwrap();
        assert!(r.metrics.mskl.abs() < 1e-9);
        for m in r.metrics.baseline_names() {
            assert_eq!(r.metrics.get(m), Some(0.0));
        }
    }

    #[test]
    fn deterministic_and_schema_valid() {
        let cfg = small(shape(ShapeKind::Sphere, 1), shape(ShapeKind::Cube, 2), 5);
        let r1 = run_pipeline(&cfg).unwrap();
        let r2 = run_pipeline(&cfg).unwrap();
        assert_eq!(r1.to_canonical_json().unwrap(), r2.to_canonical_json().unwrap());
        assert!(r1.metrics.mskl > 0.0);
        let text = r1.to_json().unwrap();
        let back = ComparisonReport::from_json(&text).unwrap();
        assert_eq!(back, r1);
        let tampered = text.replacen("\"tool\": \"geocloud\"", "\"tool\": \"other\"", 1);
        assert!(matches!(ComparisonReport::from_json(&tampered), Err(Error::Schema(_))));
        let extra = text.replacen("{", "{\n  \"surprise\": 1,", 1);
        assert!(matches!(ComparisonReport::from_json(&extra), Err(Error::Schema(_))));
    }

    #[test]
    fn stage_errors_are_named() {
        let mut cfg = small(shape(ShapeKind::Sphere, 1), shape(ShapeKind::Cube, 2), 5);
        cfg.sampling.size = 600;
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "sample", .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(shape(ShapeKind::Sphere, 1), shape(ShapeKind::Cube, 2), 5);
        cfg.gmm.k = 20;
        assert!(matches!(cfg.validate(), Err(Error::InsufficientData { .. })));
        let missing = small(
            InputSource::Ply {
                path: "/nonexistent/x.ply".into(),
                normalize: false,
            },
            shape(ShapeKind::Cube, 2),
            5,
        );
        assert!(matches!(missing.validate(), Err(Error::Io { .. })));
        cfg.gmm.k = 3;
        cfg.reduction.latent_dim = 3;
        assert!(matches!(cfg.validate(), Err(Error::UnsupportedDimension(3))));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = small(shape(ShapeKind::Sphere, 1), InputSource::parse("data/x.wav").unwrap(), 5);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: PipelineConfig =
            serde_json::from_str(r#"{"a": {"type": "shape", "kind": "cube"}, "b": {"type": "ply", "path": "b.ply"}}"#)
                .unwrap();
        assert_eq!(minimal.sampling.count, 960);
        assert_eq!(minimal.gmm.k, 5);
        assert_eq!(InputSource::parse("sphere:4").unwrap(), InputSource::shape(ShapeKind::Sphere, 2048, Some(4)));
    }

    #[test]
    fn sample_sets_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = ShapeSpec {
            kind: ShapeKind::Cube,
            n: 200,
            seed: 1,
        }
        .generate::<f64>()
        .unwrap();
        let set = extract_samples(&cloud, 5, 16, LABEL_A, 3).unwrap();
        write_sample_set(&set, dir.path()).unwrap();
        assert_eq!(read_sample_set(dir.path()).unwrap(), set);
    }

    fn fake_report(a: &str, b: &str, mskl: f64, with_emd: bool) -> ComparisonReport {
        let mut r = run_pipeline(&small(shape(ShapeKind::Sphere, 1), shape(ShapeKind::Sphere, 1), 1)).unwrap();
        r.label_a = a.into();
        r.label_b = b.into();
        r.metrics.mskl = mskl;
        r.divergence.mskl = mskl;
        if !with_emd {
            r.metrics.emd = None;
        }
        r
    }

    #[test]
    fn table_shapes() {
        let reports = vec![
            fake_report("S", "C", 6.0, true),
            fake_report("S", "U", 5.7, true),
            fake_report("C", "U", 6.7, true),
        ];
        let table = build_table(&reports).unwrap();
        assert_eq!(table.labels, vec!["S", "C", "U"]);
        assert_eq!(table.cells.len(), 6);
        assert_eq!(table.cells.iter().filter(|c| c.row == c.column).count(), 3);
        assert!(table.cells.iter().filter(|c| c.row == c.column).all(|c| c.values.values().all(|&v| v == 0.0)));

        let csv = emit_table(&reports, TableFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 5);

        let md = emit_table(&reports, TableFormat::Markdown).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[3].contains("IGM = 6.0000"));
        assert_eq!(lines[2].matches("IGM").count(), 1);
        assert_eq!(lines[4].matches("IGM").count(), 3);

        let mixed = vec![fake_report("S", "C", 6.0, true), fake_report("S", "U", 5.7, false)];
        assert!(matches!(build_table(&mixed), Err(Error::Schema(_))));
        assert!(matches!(build_table(&[]), Err(Error::EmptyRequest(_))));
    }
}

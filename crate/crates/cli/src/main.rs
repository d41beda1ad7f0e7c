use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use geocloud_core::audio::{load_wav, segment_clouds, spectrogram_to_cloud, stft, DEFAULT_HOP, DEFAULT_NFFT};
use geocloud_core::cloud::PointCloud;
use geocloud_core::divergence::mskl_auto;
use geocloud_core::gmm::{CovarianceMode, GmmParams, InitMethod};
use geocloud_core::metrics::MetricName;
use geocloud_core::pipeline::{
    compute_baselines, embed_test, emit_table, fit_label, fit_reduction, read_sample_set, run_pipeline,
    write_sample_set, BaselineConfig, ComparisonReport, DivergenceConfig, GmmConfig, Input, InputSource,
    PipelineConfig, ReductionConfig, ReductionMethod, StageSeeds, TableFormat, LABEL_A,
};
use geocloud_core::ply::{load_ply, write_ply, PlyFormat};
use geocloud_core::reduction::LatentSet;
use geocloud_core::sampling::{extract_samples, split_dataset, SplitRatios};
use geocloud_core::shapes::{ShapeKind, ShapeSpec, DEFAULT_SHAPE_POINTS};

/// Compare point clouds through Gaussian mixtures fitted in a learned latent space.
#[derive(Parser, Debug)]
#[command(name = "geocloud", version, about)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cube, cone or sphere.
    Gen(GenArgs),
    /// Draw FPS samples from a cloud into a sample directory.
    Sample(SampleArgs),
    /// Split two sample directories, fit a reducer and write test-split latents.
    Reduce(ReduceArgs),
    /// Fit a Gaussian mixture to one label's latent rows.
    Fit(FitArgs),
    /// Grid MSKL between two fitted mixtures.
    Divergence(DivergenceArgs),
    /// Classical distances between two raw clouds.
    Baseline(BaselineArgs),
    /// Turn a WAV file into a (time, frequency, log-magnitude) cloud.
    #[command(name = "audio2cloud")]
    AudioToCloud(AudioArgs),
    /// Run the whole comparison for one pair of inputs.
    Compare(CompareArgs),
    /// Format stored reports as a pairwise table.
    Table(TableArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    shape: ShapeKind,
    #[arg(short, long, default_value_t = DEFAULT_SHAPE_POINTS)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 960)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value = LABEL_A)]
    label: String,
    /// Master seed; the sampling seed is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Min-max scale each axis to [0, 1] before sampling.
    #[arg(long)]
    normalize: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ReductionOpts {
    #[arg(long)]
    method: Option<ReductionMethod>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Comma-separated encoder hidden widths.
    #[arg(long, value_delimiter = ',')]
    encoder_hidden: Option<Vec<usize>>,
    /// Comma-separated decoder hidden widths.
    #[arg(long, value_delimiter = ',')]
    decoder_hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl ReductionOpts {
    fn apply(&self, cfg: &mut ReductionConfig) {
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(d) = self.latent_dim {
            cfg.latent_dim = d;
        }
        if let Some(h) = &self.encoder_hidden {
            cfg.encoder_hidden = h.clone();
        }
        if let Some(h) = &self.decoder_hidden {
            cfg.decoder_hidden = h.clone();
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
    }
}

#[derive(Args, Debug)]
struct ReduceArgs {
    /// Two sample directories (first label, second label).
    #[arg(long = "in", num_args = 1, required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    train: f64,
    #[arg(long, default_value_t = 0.15)]
    validation: f64,
    #[arg(long, default_value_t = 0.15)]
    test: f64,
    #[command(flatten)]
    reduction: ReductionOpts,
    /// Latent CSV of the test split.
    #[arg(short, long)]
    out: PathBuf,
    /// Also save the fitted reducer as JSON.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct GmmOpts {
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    mode: Option<CovarianceMode>,
    #[arg(long)]
    init: Option<InitMethod>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Variance floor.
    #[arg(long)]
    reg: Option<f64>,
}

impl GmmOpts {
    fn apply(&self, cfg: &mut GmmConfig) {
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(i) = self.init {
            cfg.init = i;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iter = m;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(r) = self.reg {
            cfg.reg = r;
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Latent CSV written by `reduce`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = LABEL_A)]
    label: String,
    #[command(flatten)]
    gmm: GmmOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct DivergenceOpts {
    /// Grid points per latent axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Padding in marginal standard deviations.
    #[arg(long)]
    pad: Option<f64>,
    /// Sum grid terms without the cell volume.
    #[arg(long)]
    raw_sum: bool,
}

impl DivergenceOpts {
    fn apply(&self, cfg: &mut DivergenceConfig) {
        if let Some(g) = self.grid {
            cfg.grid_points = g;
        }
        if let Some(p) = self.pad {
            cfg.pad = p;
        }
        if self.raw_sum {
            cfg.raw_sum = true;
        }
    }
}

#[derive(Args, Debug)]
struct DivergenceArgs {
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    q: PathBuf,
    #[command(flatten)]
    opts: DivergenceOpts,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Metrics to compute (default: all four).
    #[arg(long = "metric", value_delimiter = ',')]
    metrics: Vec<MetricName>,
    /// Average squared instead of plain nearest distances in Chamfer.
    #[arg(long)]
    squared: bool,
    #[arg(long)]
    emd_points: Option<usize>,
    #[arg(long)]
    dj_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AudioArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NFFT)]
    n_fft: usize,
    #[arg(long, default_value_t = DEFAULT_HOP)]
    hop: usize,
    /// Split into clouds of this many frames and write each next to the output.
    #[arg(long)]
    segment_frames: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    ascii: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// TOML or JSON pipeline configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// First input: `cube`, `sphere:7`, a .ply or a .wav path.
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long, env = "GEOCLOUD_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[command(flatten)]
    reduction: ReductionOpts,
    #[command(flatten)]
    gmm: GmmOpts,
    #[command(flatten)]
    divergence: DivergenceOpts,
    /// Report path; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Drop timings so reruns are byte-identical.
    #[arg(long)]
    canonical: bool,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn ply_format(ascii: bool) -> PlyFormat {
    if ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn to_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = ShapeSpec {
        kind: args.shape,
        n: args.n,
        seed: args.seed,
    };
    let cloud: PointCloud<f64> = spec.generate()?;
    write_ply(&cloud, &args.out, ply_format(args.ascii))?;
    log::info!("wrote {} points to {}", cloud.len(), args.out.display());
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let mut cloud: PointCloud<f64> = load_ply(&args.input)?;
    if args.normalize {
        cloud = cloud.normalize_axes();
    }
    let seeds = StageSeeds::derive(args.seed);
    let set = extract_samples(&cloud, args.count, args.size, &args.label, seeds.sample)?;
    write_sample_set(&set, &args.out)?;
    log::info!("wrote {} samples to {}", set.len(), args.out.display());
    Ok(())
}

fn reduce(args: ReduceArgs) -> Result<()> {
    if args.inputs.len() != 2 {
        bail!("reduce takes exactly two --in sample directories, got {}", args.inputs.len());
    }
    let a = read_sample_set(&args.inputs[0])?;
    let b = read_sample_set(&args.inputs[1])?;
    if a.source_label == b.source_label {
        bail!("both sample sets carry the label `{}`", a.source_label);
    }
    let seeds = StageSeeds::derive(args.seed);
    let ratios = SplitRatios {
        train: args.train,
        validation: args.validation,
        test: args.test,
    };
    let split = split_dataset(&a, &b, ratios, seeds.split)?;
    let mut cfg = ReductionConfig::default();
    args.reduction.apply(&mut cfg);
    let (model, history) = fit_reduction(&split, &cfg, seeds.reduce)?;
    if let Some(h) = &history {
        log::info!(
            "final train loss {:?}, validation loss {:?}",
            h.train.last(),
            h.validation.last()
        );
    }
    let latent = embed_test(&split, &model, [&a.source_label, &b.source_label])?;
    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    latent.write_csv(std::io::BufWriter::new(file))?;
    if let Some(path) = &args.model {
        write_output(Some(path), &to_pretty(&model)?)?;
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let file = std::fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let latent = LatentSet::read_csv(std::io::BufReader::new(file))?;
    let mut cfg = GmmConfig::default();
    args.gmm.apply(&mut cfg);
    let seeds = StageSeeds::derive(args.seed);
    let (params, report) = fit_label(&latent, &args.label, &cfg, seeds.fit)?;
    log::info!(
        "{} iterations, log-likelihood {}, converged {}",
        report.iterations,
        report.log_likelihood,
        report.converged
    );
    write_output(Some(&args.out), &params.to_json()?)
}

fn read_gmm(path: &Path) -> Result<GmmParams<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GmmParams::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn divergence(args: DivergenceArgs) -> Result<()> {
    let p = read_gmm(&args.p)?;
    let q = read_gmm(&args.q)?;
    let mut cfg = DivergenceConfig::default();
    args.opts.apply(&mut cfg);
    let result = mskl_auto(&p, &q, cfg.grid_points, cfg.pad, !cfg.raw_sum)?;
    write_output(None, &to_pretty(&result)?)
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let a: PointCloud<f64> = load_ply(&args.a)?;
    let b: PointCloud<f64> = load_ply(&args.b)?;
    let mut cfg = BaselineConfig::default();
    if !args.metrics.is_empty() {
        cfg.metrics = args.metrics;
    }
    cfg.squared_chamfer = args.squared;
    if let Some(n) = args.emd_points {
        cfg.emd_points = n;
    }
    if let Some(n) = args.dj_points {
        cfg.dj_points = n;
    }
    let values = compute_baselines(&a, &b, &cfg, StageSeeds::derive(args.seed).baseline)?;
    let named: std::collections::BTreeMap<&str, f64> = values.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    write_output(None, &to_pretty(&named)?)
}

fn audio_to_cloud(args: AudioArgs) -> Result<()> {
    let signal = load_wav(&args.input)?;
    let spec = stft(&signal, args.n_fft, args.hop)?;
    let format = ply_format(args.ascii);
    match args.segment_frames {
        None => {
            let cloud = spectrogram_to_cloud(&spec, signal.sample_rate)?;
            write_ply(&cloud, &args.out, format)?;
            log::info!("{} frames, {} points", spec.frame_count(), cloud.len());
        }
        Some(frames) => {
            let segments = segment_clouds(&spec, signal.sample_rate, frames)?;
            let stem = args.out.file_stem().map_or_else(|| "segment".into(), |s| s.to_string_lossy().into_owned());
            let dir = args.out.parent().unwrap_or(Path::new("."));
            for (i, seg) in segments.iter().enumerate() {
                write_ply(seg, dir.join(format!("{stem}_{i:04}.ply")), format)?;
            }
            let merged = PointCloud::concat(&segments)?;
            write_ply(&merged, &args.out, format)?;
            log::info!("{} segments, {} points", segments.len(), merged.len());
        }
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg: PipelineConfig = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    // Relative input paths are taken relative to the config file.
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cfg = cfg;
    for input in [&mut cfg.a, &mut cfg.b] {
        if let InputSource::Ply { path, .. } | InputSource::Wav { path, .. } = &mut input.source {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
    Ok(cfg)
}

fn compare(args: CompareArgs) -> Result<()> {
    let parse_input = |s: &str| -> Result<Input> { Ok(Input::new(InputSource::parse(s)?)) };
    let mut cfg = match (&args.config, &args.a, &args.b) {
        (Some(path), _, _) => load_config(path)?,
        (None, Some(a), Some(b)) => PipelineConfig::new(parse_input(a)?, parse_input(b)?, 0),
        _ => bail!("compare needs --config or both --a and --b"),
    };
    if let Some(a) = &args.a {
        cfg.a = parse_input(a)?;
    }
    if let Some(b) = &args.b {
        cfg.b = parse_input(b)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(c) = args.count {
        cfg.sampling.count = c;
    }
    if let Some(s) = args.size {
        cfg.sampling.size = s;
    }
    args.reduction.apply(&mut cfg.reduction);
    args.gmm.apply(&mut cfg.gmm);
    args.divergence.apply(&mut cfg.divergence);
    cfg.output = None;

    let report = run_pipeline(&cfg)?;
    let text = if args.canonical { report.to_canonical_json()? } else { report.to_json()? };
    write_output(args.out.as_deref(), &text)?;
    if args.out.is_some() {
        eprintln!(
            "{} vs {}: MSKL = {}",
            report.label_a, report.label_b, report.metrics.mskl
        );
    }
    Ok(())
}

fn table(args: TableArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ComparisonReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    write_output(args.out.as_deref(), &emit_table(&reports, args.format)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Sample(a) => sample(a),
        Command::Reduce(a) => reduce(a),
        Command::Fit(a) => fit(a),
        Command::Divergence(a) => divergence(a),
        Command::Baseline(a) => baseline(a),
        Command::AudioToCloud(a) => audio_to_cloud(a),
        Command::Compare(a) => compare(a),
        Command::Table(a) => table(a),
    }
}

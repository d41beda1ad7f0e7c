//! Gaussian mixture densities, EM fitting and canonical component ordering.
//!
//! A mixture is `p(x) = Σ_k π_k N(x | μ_k, Σ_k)`. Covariances are stored
//! either as a diagonal (the default, which keeps the parameterization
//! injective once components are ordered) or as a full symmetric matrix.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{squared_distance, PointCloud};
use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scalar::{compensated_sum, log_sum_exp, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    #[default]
    Diagonal,
    Full,
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diagonal" | "diag" => Ok(Self::Diagonal),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidParams(format!("unknown covariance mode `{other}`"))),
        }
    }
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Diagonal => "diagonal",
            Self::Full => "full",
        })
    }
}

/// One component's covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<T> {
    /// Per-axis variances.
    Diagonal(Vec<T>),
    /// Row-major `m × m` symmetric matrix.
    Full(Vec<T>),
}

impl<T: Real> Covariance<T> {
    pub fn identity(m: usize, mode: CovarianceMode) -> Self {
        match mode {
            CovarianceMode::Diagonal => Covariance::Diagonal(vec![T::one(); m]),
            CovarianceMode::Full => {
                let mut v = vec![T::zero(); m * m];
                for i in 0..m {
                    v[i * m + i] = T::one();
                }
                Covariance::Full(v)
            }
        }
    }

    pub fn mode(&self) -> CovarianceMode {
        match self {
            Covariance::Diagonal(_) => CovarianceMode::Diagonal,
            Covariance::Full(_) => CovarianceMode::Full,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Full(f) => (f.len() as f64).sqrt().round() as usize,
        }
    }

    /// Variance along axis `i`.
    pub fn variance(&self, i: usize) -> T {
        match self {
            Covariance::Diagonal(d) => d[i],
            Covariance::Full(f) => f[i * self.dim() + i],
        }
    }

    pub fn trace(&self) -> T {
        (0..self.dim()).map(|i| self.variance(i)).fold(T::zero(), |a, b| a + b)
    }

    /// Dense row-major matrix.
    pub fn to_matrix(&self) -> Vec<Vec<T>> {
        let m = self.dim();
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| match self {
                        Covariance::Diagonal(d) => {
                            if i == j {
                                d[i]
                            } else {
                                T::zero()
                            }
                        }
                        Covariance::Full(f) => f[i * m + j],
                    })
                    .collect()
            })
            .collect()
    }
}

/// Lower Cholesky factor of a row-major SPD matrix, or `None` if not positive definite.
pub(crate) fn cholesky<T: Real>(a: &[T], m: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for k in 0..j {
                s = s - l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(l)
}

/// A single Gaussian prepared for repeated log-density evaluation.
#[derive(Debug, Clone)]
struct PreparedGaussian<T> {
    mean: Vec<T>,
    factor: Factor<T>,
    /// `-½ (m ln 2π + ln |Σ|)`
    log_norm: T,
}

#[derive(Debug, Clone)]
enum Factor<T> {
    InvVariance(Vec<T>),
    Cholesky(Vec<T>),
}

impl<T: Real> PreparedGaussian<T> {
    fn new(mean: &[T], cov: &Covariance<T>) -> Result<Self> {
        let m = mean.len();
        if cov.dim() != m {
            return Err(Error::dim(m, cov.dim()));
        }
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        let (factor, log_det) = match cov {
            Covariance::Diagonal(d) => {
                if d.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
                    return Err(Error::Covariance);
                }
                let log_det = d.iter().map(|v| v.ln()).fold(T::zero(), |a, b| a + b);
                (Factor::InvVariance(d.iter().map(|&v| T::one() / v).collect()), log_det)
            }
            Covariance::Full(f) => {
                if f.len() != m * m {
                    return Err(Error::dim(m * m, f.len()));
                }
                for i in 0..m {
                    for j in 0..i {
                        let (a, b) = (f[i * m + j], f[j * m + i]);
                        if (a - b).abs() > T::of(1e-9) * (a.abs() + b.abs() + T::one()) {
                            return Err(Error::Covariance);
                        }
                    }
                }
                let l = cholesky(f, m).ok_or(Error::Covariance)?;
                let log_det = (0..m).map(|i| l[i * m + i].ln()).fold(T::zero(), |a, b| a + b) * T::of(2.0);
                (Factor::Cholesky(l), log_det)
            }
        };
        Ok(Self {
            mean: mean.to_vec(),
            factor,
            log_norm: -T::of(0.5) * (T::of(m as f64) * two_pi.ln() + log_det),
        })
    }

    fn mahalanobis_sq(&self, x: &[T]) -> T {
        let m = self.mean.len();
        match &self.factor {
            Factor::InvVariance(inv) => x
                .iter()
                .zip(&self.mean)
                .zip(inv)
                .fold(T::zero(), |acc, ((&xi, &mi), &iv)| {
                    let d = xi - mi;
                    acc + d * d * iv
                }),
            Factor::Cholesky(l) => {
                // Solve L z = (x - μ); the quadratic form is ‖z‖².
                let mut z = vec![T::zero(); m];
                let mut acc = T::zero();
                for i in 0..m {
                    let mut s = x[i] - self.mean[i];
                    for k in 0..i {
                        s = s - l[i * m + k] * z[k];
                    }
                    z[i] = s / l[i * m + i];
                    acc = acc + z[i] * z[i];
                }
                acc
            }
        }
    }

    fn log_pdf(&self, x: &[T]) -> T {
        self.log_norm - T::of(0.5) * self.mahalanobis_sq(x)
    }
}

/// Multivariate normal density `N(x | μ, Σ)`, evaluated through its logarithm.
pub fn gaussian_pdf<T: Real>(x: &[T], mean: &[T], cov: &Covariance<T>) -> Result<T> {
    gaussian_log_pdf(x, mean, cov).map(T::exp)
}

pub fn gaussian_log_pdf<T: Real>(x: &[T], mean: &[T], cov: &Covariance<T>) -> Result<T> {
    if x.len() != mean.len() {
        return Err(Error::dim(mean.len(), x.len()));
    }
    Ok(PreparedGaussian::new(mean, cov)?.log_pdf(x))
}

/// Mixture parameters `{(π_k, μ_k, Σ_k)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    covariances: Vec<Covariance<T>>,
}

impl<T: Real> GmmParams<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, covariances: Vec<Covariance<T>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidParams("mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::InvalidParams(format!(
                "component counts disagree: {k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let m = means[0].len();
        if m == 0 {
            return Err(Error::dim(1, 0));
        }
        let mode = covariances[0].mode();
        for (mu, cov) in means.iter().zip(&covariances) {
            if mu.len() != m {
                return Err(Error::dim(m, mu.len()));
            }
            if cov.mode() != mode {
                return Err(Error::InvalidParams("mixed covariance storage modes".into()));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams("non-finite mean".into()));
            }
            PreparedGaussian::new(mu, cov)?;
        }
        if weights.iter().any(|&w| !(w >= T::zero() && w <= T::one())) {
            return Err(Error::InvalidParams("weights must lie in [0, 1]".into()));
        }
        let total = weights.iter().fold(T::zero(), |a, &b| a + b);
        if (total - T::one()).abs() > T::of(1e-9).max(T::epsilon() * T::of(4.0 * k as f64)) {
            return Err(Error::InvalidParams(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    /// Number of components `K`.
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn mode(&self) -> CovarianceMode {
        self.covariances[0].mode()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Covariance<T>] {
        &self.covariances
    }

    pub fn density(&self) -> GmmDensity<T> {
        GmmDensity::new(self)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&GmmDocument::from(self)).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GmmDocument<T> = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        doc.try_into()
    }
}

/// JSON layout: `{K, mode, weights[], means[][], covariances[][][]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GmmDocument<T> {
    #[serde(rename = "K")]
    pub k: usize,
    pub mode: CovarianceMode,
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub covariances: Vec<Vec<Vec<T>>>,
}

impl<T: Real> From<&GmmParams<T>> for GmmDocument<T> {
    fn from(p: &GmmParams<T>) -> Self {
        Self {
            k: p.k(),
            mode: p.mode(),
            weights: p.weights.clone(),
            means: p.means.clone(),
            covariances: p.covariances.iter().map(Covariance::to_matrix).collect(),
        }
    }
}

impl<T: Real> TryFrom<GmmDocument<T>> for GmmParams<T> {
    type Error = Error;

    fn try_from(doc: GmmDocument<T>) -> Result<Self> {
        if doc.k != doc.weights.len() {
            return Err(Error::Schema(format!("K = {} but {} weights", doc.k, doc.weights.len())));
        }
        let mut covs = Vec::with_capacity(doc.covariances.len());
        for mat in doc.covariances {
            let m = mat.len();
            if mat.iter().any(|row| row.len() != m) {
                return Err(Error::Schema("covariance matrix is not square".into()));
            }
            covs.push(match doc.mode {
                CovarianceMode::Diagonal => {
                    for (i, row) in mat.iter().enumerate() {
                        if row.iter().enumerate().any(|(j, &v)| i != j && v != T::zero()) {
                            return Err(Error::Schema("diagonal mode with off-diagonal entries".into()));
                        }
                    }
                    Covariance::Diagonal((0..m).map(|i| mat[i][i]).collect())
                }
                CovarianceMode::Full => Covariance::Full(mat.into_iter().flatten().collect()),
            });
        }
        GmmParams::new(doc.weights, doc.means, covs)
    }
}

/// Mixture prepared for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct GmmDensity<T> {
    log_weights: Vec<T>,
    components: Vec<PreparedGaussian<T>>,
}

impl<T: Real> GmmDensity<T> {
    fn new(p: &GmmParams<T>) -> Self {
        Self {
            log_weights: p.weights.iter().map(|w| w.ln()).collect(),
            components: p
                .means
                .iter()
                .zip(&p.covariances)
                .map(|(mu, cov)| PreparedGaussian::new(mu, cov).expect("validated at construction"))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// `ln π_k + ln N(x | μ_k, Σ_k)` for every component.
    fn weighted_log_components(&self, x: &[T], out: &mut [T]) {
        for ((slot, lw), c) in out.iter_mut().zip(&self.log_weights).zip(&self.components) {
            *slot = *lw + c.log_pdf(x);
        }
    }

    pub fn log_pdf(&self, x: &[T]) -> T {
        let mut buf = vec![T::zero(); self.components.len()];
        self.weighted_log_components(x, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn pdf(&self, x: &[T]) -> T {
        self.log_pdf(x).exp()
    }
}

/// `Σ_k π_k N(x | μ_k, Σ_k)`.
pub fn gmm_pdf<T: Real>(x: &[T], params: &GmmParams<T>) -> Result<T> {
    gmm_log_pdf(x, params).map(T::exp)
}

pub fn gmm_log_pdf<T: Real>(x: &[T], params: &GmmParams<T>) -> Result<T> {
    if x.len() != params.dim() {
        return Err(Error::dim(params.dim(), x.len()));
    }
    Ok(params.density().log_pdf(x))
}

/// Total log-likelihood of `data` under `params`.
pub fn log_likelihood<T: Real>(data: &PointCloud<T>, params: &GmmParams<T>) -> Result<T> {
    if data.dim() != params.dim() {
        return Err(Error::dim(params.dim(), data.dim()));
    }
    let d = params.density();
    Ok(compensated_sum(data.points().map(|x| d.log_pdf(x))))
}

/// Reorders components by trace of covariance, then mean (lexicographic),
/// then weight. In one dimension the trace is the variance, so this is
/// the variance-then-mean order under which mixtures are identifiable.
pub fn canonicalize<T: Real>(params: &GmmParams<T>) -> GmmParams<T> {
    let mut order: Vec<usize> = (0..params.k()).collect();
    order.sort_by(|&a, &b| component_order(params, a, b));
    GmmParams {
        weights: order.iter().map(|&i| params.weights[i]).collect(),
        means: order.iter().map(|&i| params.means[i].clone()).collect(),
        covariances: order.iter().map(|&i| params.covariances[i].clone()).collect(),
    }
}

fn component_order<T: Real>(p: &GmmParams<T>, a: usize, b: usize) -> Ordering {
    let cmp = |x: T, y: T| x.as_f64().total_cmp(&y.as_f64());
    cmp(p.covariances[a].trace(), p.covariances[b].trace())
        .then_with(|| {
            p.means[a]
                .iter()
                .zip(&p.means[b])
                .map(|(&x, &y)| cmp(x, y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| cmp(p.weights[a], p.weights[b]))
}

/// Dimension of the mixture parameter space: means, covariances and the
/// `K − 1` free weights.
pub fn param_space_dim(k: usize, m: usize, mode: CovarianceMode) -> usize {
    let per_component = match mode {
        CovarianceMode::Full => m + m * (m + 1) / 2,
        CovarianceMode::Diagonal => 2 * m,
    };
    k * per_component + k.saturating_sub(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    /// k-means++ seeding followed by Lloyd iterations.
    #[default]
    Kmeans,
    Random,
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(Self::Kmeans),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidParams(format!("unknown init method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop once the mean per-point log-likelihood improves by less than this.
    pub tol: f64,
    /// Variance floor.
    pub reg: f64,
    pub seed: u64,
    pub mode: CovarianceMode,
    pub init: InitMethod,
    pub kmeans_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            reg: 1e-6,
            seed: 0,
            mode: CovarianceMode::Diagonal,
            init: InitMethod::Kmeans,
            kmeans_iter: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// EM iterations (M-steps) performed.
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Total log-likelihood before each M-step and after the last one.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Components re-seeded after losing all responsibility.
    pub reseeds: usize,
}

/// Fits a `k`-component mixture to `data` by expectation–maximization.
pub fn fit_em<T: Real>(data: &PointCloud<T>, k: usize, config: &FitConfig) -> Result<(GmmParams<T>, FitReport)> {
    let n = data.len();
    if k == 0 {
        return Err(Error::InvalidParams("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData { needed: k, got: n });
    }
    let mut em = Em::new(data, k, config);
    let mut params = em.initialize()?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut reseeds = 0;
    loop {
        let ll = em.e_step(&params);
        trace.push(ll.as_f64());
        if trace.len() >= 2 {
            let gain = (trace[trace.len() - 1] - trace[trace.len() - 2]) / n as f64;
            if gain < config.tol {
                converged = true;
                break;
            }
        }
        if iterations >= config.max_iter {
            break;
        }
        let (next, reseeded) = em.m_step()?;
        params = next;
        reseeds += reseeded;
        iterations += 1;
    }
    let report = FitReport {
        iterations,
        log_likelihood: *trace.last().expect("at least one E-step"),
        trace,
        converged,
        reseeds,
    };
    Ok((params, report))
}

struct Em<'a, T> {
    data: &'a PointCloud<T>,
    k: usize,
    config: &'a FitConfig,
    /// Row-major `n × k` responsibilities from the last E-step.
    resp: Vec<T>,
    /// Per-point log density from the last E-step.
    point_ll: Vec<T>,
    global_var: Vec<T>,
}

impl<'a, T: Real> Em<'a, T> {
    fn new(data: &'a PointCloud<T>, k: usize, config: &'a FitConfig) -> Self {
        let n = data.len();
        let m = data.dim();
        let nf = T::of(n as f64);
        let mean: Vec<T> = (0..m)
            .map(|j| compensated_sum(data.points().map(|p| p[j])) / nf)
            .collect();
        let reg = T::of(config.reg);
        let global_var = (0..m)
            .map(|j| (compensated_sum(data.points().map(|p| (p[j] - mean[j]) * (p[j] - mean[j]))) / nf).max(reg))
            .collect();
        Self {
            data,
            k,
            config,
            resp: vec![T::zero(); n * k],
            point_ll: vec![T::zero(); n],
            global_var,
        }
    }

    fn initialize(&mut self) -> Result<GmmParams<T>> {
        let mut r = rng(self.config.seed);
        let n = self.data.len();
        match self.config.init {
            InitMethod::Random => {
                let idx = rand::seq::index::sample(&mut r, n, self.k).into_vec();
                let w = T::one() / T::of(self.k as f64);
                let means = idx.iter().map(|&i| self.data.point(i).to_vec()).collect();
                let covs = (0..self.k).map(|_| self.diag_to_mode(self.global_var.clone())).collect();
                GmmParams::new(vec![w; self.k], means, covs)
            }
            InitMethod::Kmeans => {
                let labels = kmeans(self.data, self.k, self.config.kmeans_iter, &mut r);
                for (i, &l) in labels.iter().enumerate() {
                    for c in 0..self.k {
                        self.resp[i * self.k + c] = if c == l { T::one() } else { T::zero() };
                    }
                }
                self.m_step().map(|(p, _)| p)
            }
        }
    }

    fn diag_to_mode(&self, var: Vec<T>) -> Covariance<T> {
        match self.config.mode {
            CovarianceMode::Diagonal => Covariance::Diagonal(var),
            CovarianceMode::Full => {
                let m = var.len();
                let mut f = vec![T::zero(); m * m];
                for i in 0..m {
                    f[i * m + i] = var[i];
                }
                Covariance::Full(f)
            }
        }
    }

    fn e_step(&mut self, params: &GmmParams<T>) -> T {
        let density = params.density();
        let k = self.k;
        for (i, x) in self.data.points().enumerate() {
            let row = &mut self.resp[i * k..(i + 1) * k];
            density.weighted_log_components(x, row);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            self.point_ll[i] = lse;
        }
        compensated_sum(self.point_ll.iter().copied())
    }

    /// Weighted MLE update from the current responsibilities.
    fn m_step(&mut self) -> Result<(GmmParams<T>, usize)> {
        let n = self.data.len();
        let m = self.data.dim();
        let k = self.k;
        let reg = T::of(self.config.reg);
        let tiny = T::of(1e-10 * n as f64).max(T::min_positive_value());
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        let mut empty = Vec::new();
        for c in 0..k {
            let nk = compensated_sum((0..n).map(|i| self.resp[i * k + c]));
            if !(nk > tiny) {
                empty.push(c);
                weights.push(T::zero());
                means.push(vec![T::zero(); m]);
                covs.push(self.diag_to_mode(self.global_var.clone()));
                continue;
            }
            let mean: Vec<T> = (0..m)
                .map(|j| compensated_sum((0..n).map(|i| self.resp[i * k + c] * self.data.point(i)[j])) / nk)
                .collect();
            let cov = match self.config.mode {
                CovarianceMode::Diagonal => Covariance::Diagonal(
                    (0..m)
                        .map(|j| {
                            let s = compensated_sum((0..n).map(|i| {
                                let d = self.data.point(i)[j] - mean[j];
                                self.resp[i * k + c] * d * d
                            }));
                            (s / nk).max(reg)
                        })
                        .collect(),
                ),
                CovarianceMode::Full => {
                    let mut f = vec![T::zero(); m * m];
                    for a in 0..m {
                        for b in 0..=a {
                            let s = compensated_sum((0..n).map(|i| {
                                let p = self.data.point(i);
                                self.resp[i * k + c] * (p[a] - mean[a]) * (p[b] - mean[b])
                            }));
                            f[a * m + b] = s / nk;
                            f[b * m + a] = s / nk;
                        }
                        f[a * m + a] = f[a * m + a].max(reg);
                    }
                    let mut bump = reg;
                    while cholesky(&f, m).is_none() {
                        for a in 0..m {
                            f[a * m + a] = f[a * m + a] + bump;
                        }
                        bump = bump * T::of(10.0);
                    }
                    Covariance::Full(f)
                }
            };
            weights.push(nk / T::of(n as f64));
            means.push(mean);
            covs.push(cov);
        }
        if !empty.is_empty() {
            // Re-seed each empty component at the worst-explained point not yet used.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                self.point_ll[a]
                    .as_f64()
                    .total_cmp(&self.point_ll[b].as_f64())
                    .then(a.cmp(&b))
            });
            for (slot, &c) in empty.iter().enumerate() {
                let i = order[slot.min(n - 1)];
                means[c] = self.data.point(i).to_vec();
                weights[c] = T::one() / T::of(n as f64);
            }
        }
        let total = compensated_sum(weights.iter().copied());
        for w in &mut weights {
            *w = (*w / total).min(T::one());
        }
        Ok((GmmParams::new(weights, means, covs)?, empty.len()))
    }
}

/// k-means++ seeding and Lloyd iterations; returns a cluster label per point.
fn kmeans<T: Real>(data: &PointCloud<T>, k: usize, iters: usize, r: &mut crate::rng::StreamRng) -> Vec<usize> {
    let n = data.len();
    let mut centers: Vec<Vec<T>> = Vec::with_capacity(k);
    centers.push(data.point(r.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = data
        .points()
        .map(|p| squared_distance(p, &centers[0]).as_f64())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = r.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centers.push(data.point(next).to_vec());
        let c = centers.last().unwrap();
        for (i, p) in data.points().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, c).as_f64());
        }
    }
    let assign = |centers: &[Vec<T>]| -> Vec<usize> {
        data.points()
            .map(|p| {
                let mut best = (T::infinity(), 0);
                for (c, center) in centers.iter().enumerate() {
                    let d = squared_distance(p, center);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..iters {
        let m = data.dim();
        let mut sums = vec![vec![T::zero(); m]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in data.points().zip(&labels) {
            counts[l] += 1;
            for j in 0..m {
                sums[l][j] = sums[l][j] + p[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|&s| s / T::of(counts[c] as f64)).collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Bayesian information criterion `−2 ln L + p ln n`.
pub fn bic<T: Real>(data: &PointCloud<T>, params: &GmmParams<T>) -> Result<f64> {
    let ll = log_likelihood(data, params)?.as_f64();
    let p = param_space_dim(params.k(), params.dim(), params.mode()) as f64;
    Ok(-2.0 * ll + p * (data.len() as f64).ln())
}

/// Fits every candidate `K` and keeps the one with the lowest BIC.
pub fn fit_best_bic<T: Real>(
    data: &PointCloud<T>,
    candidates: &[usize],
    config: &FitConfig,
) -> Result<(GmmParams<T>, FitReport)> {
    let mut best: Option<(f64, GmmParams<T>, FitReport)> = None;
    for &k in candidates {
        let (p, r) = fit_em(data, k, config)?;
        let score = bic(data, &p)?;
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, p, r));
        }
    }
    best.map(|(_, p, r)| (p, r))
        .ok_or_else(|| Error::InvalidParams("no candidate K given".into()))
}

//! Simulation designs and replication experiments.
//!
//! Every replication `r` draws its signal factors, noise and any
//! cross-validation splits from its own stream under the master seed, so an
//! experiment is a pure function of its design and seed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{confidence_interval_values, csv_value, step_test, Method, TestSettings};
use crate::icsv::{icsv_with_pool, WishartPool};
use crate::noise::{sigma_cv, sigma_med_values, CvConfig, NoiseVariant};
use crate::rank::{decide, StopRule};
use crate::rng::{stream_id, stream_rng, StreamRng};
use crate::spectra::{svd_full, ObservedMatrix, SingularSpectrum};

const TAG_REPLICATION: u32 = 1;
const TAG_CV: u32 = 2;
const TAG_POOL: u32 = 3;

/// Low-rank signal with `Lambda_i = m i sigma (N p)^{1/4}` for `i <= rank`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    pub m: f64,
    pub sigma2: f64,
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.n < self.p {
            return Err(Error::param(format!("need N >= p >= 2, got N={}, p={}", self.n, self.p)));
        }
        if self.rank >= self.p {
            return Err(Error::param(format!("rank {} must be below p = {}", self.rank, self.p)));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(Error::param(format!("magnitude m must be nonnegative, got {}", self.m)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::param(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        let base = self.sigma2.sqrt() * ((self.n * self.p) as f64).powf(0.25);
        (1..=self.rank).map(|i| self.m * i as f64 * base).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    HeavyTail,
    RightSkew,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::HeavyTail => "heavy_tail",
            NoiseKind::RightSkew => "right_skew",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            "heavy_tail" | "t5" => Ok(NoiseKind::HeavyTail),
            "right_skew" | "skew" => Ok(NoiseKind::RightSkew),
            other => Err(Error::param(format!("unknown noise kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma2: f64,
}

/// `U_B diag(Lambda) V_B^T` with factors from the SVD of an independent
/// standard Gaussian matrix.
pub fn generate_signal<R: Rng + ?Sized>(spec: &SignalSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if spec.rank == 0 {
        return Ok(DMatrix::zeros(spec.n, spec.p));
    }
    let g = DMatrix::from_fn(spec.n, spec.p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = svd_full(&ObservedMatrix::new(g)?)?;
    let lam = spec.magnitudes();
    let mut u = s.left().columns(0, spec.rank).into_owned();
    for (j, l) in lam.iter().enumerate() {
        u.column_mut(j).scale_mut(*l);
    }
    Ok(u * s.right().columns(0, spec.rank).transpose())
}

/// Unit-variance draw of the given kind.
pub fn unit_noise<R: Rng + ?Sized>(kind: NoiseKind, rng: &mut R) -> f64 {
    match kind {
        NoiseKind::Gaussian => rng.sample(StandardNormal),
        NoiseKind::HeavyTail => {
            let t: f64 = rng.sample(StudentT::new(5.0).expect("valid degrees of freedom"));
            (3.0f64 / 5.0).sqrt() * t
        }
        NoiseKind::RightSkew => {
            let t: f64 = rng.sample(StudentT::new(5.0).expect("valid degrees of freedom"));
            let e: f64 = rng.sample(Exp1);
            (3.0f64 / 10.0).sqrt() * t + 0.5f64.sqrt() * (e - 1.0)
        }
    }
}

pub fn generate_noise<R: Rng + ?Sized>(n: usize, p: usize, spec: &NoiseSpec, rng: &mut R) -> DMatrix<f64> {
    let sigma = spec.sigma2.sqrt();
    DMatrix::from_fn(n, p, |_, _| sigma * unit_noise(spec.kind, rng))
}

/// How each replication obtains `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SigmaMode {
    Known,
    Median,
    CvDfc { cv: CvConfig },
}

impl SigmaMode {
    pub fn label(&self) -> &'static str {
        match self {
            SigmaMode::Known => "known",
            SigmaMode::Median => "median",
            SigmaMode::CvDfc { .. } => "cv-dfc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub signal: SignalSpec,
    pub noise: NoiseKind,
    pub sigma: SigmaMode,
}

impl Design {
    pub fn gaussian(n: usize, p: usize, rank: usize, m: f64) -> Self {
        Self {
            signal: SignalSpec {
                n,
                p,
                rank,
                m,
                sigma2: 1.0,
            },
            noise: NoiseKind::Gaussian,
            sigma: SigmaMode::Known,
        }
    }
}

/// One realized replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub signal: DMatrix<f64>,
    pub spectrum: SingularSpectrum,
    pub sigma2: f64,
}

pub fn replicate(design: &Design, seed: u64, r: u64) -> Result<Replication> {
    let mut rng = stream_rng(seed, stream_id(TAG_REPLICATION, r));
    let signal = generate_signal(&design.signal, &mut rng)?;
    let spec = NoiseSpec {
        kind: design.noise,
        sigma2: design.signal.sigma2,
    };
    let y = &signal + generate_noise(design.signal.n, design.signal.p, &spec, &mut rng);
    let y = ObservedMatrix::new(y)?;
    let spectrum = svd_full(&y)?;
    let sigma2 = match design.sigma {
        SigmaMode::Known => design.signal.sigma2,
        SigmaMode::Median => sigma_med_values(spectrum.values(), spectrum.rows())?.sigma2,
        SigmaMode::CvDfc { cv } => {
            let mut cv_rng = stream_rng(seed, stream_id(TAG_CV, r));
            sigma_cv(&y, NoiseVariant::LambdaDfC, &cv, &mut cv_rng)?.0.sigma2
        }
    };
    Ok(Replication {
        signal,
        spectrum,
        sigma2,
    })
}

/// Shared proposal pools for the integrated test, one per step.
///
/// Reusing one pool across replications uses common random numbers; each
/// p-value keeps its own Monte Carlo error of the pool size.
pub struct IcsvPools {
    pools: BTreeMap<usize, WishartPool>,
    pub min_ess: f64,
}

impl IcsvPools {
    pub fn new(n: usize, p: usize, steps: &[usize], settings: &TestSettings) -> Result<Self> {
        let cfg = settings.importance;
        cfg.validate()?;
        let mut pools = BTreeMap::new();
        for &k in steps {
            let pool = WishartPool::generate(n - k, p - k, cfg.sample_count, cfg.seed, stream_id(TAG_POOL, k as u64))?;
            pools.insert(k, pool);
        }
        Ok(Self {
            pools,
            min_ess: cfg.min_ess,
        })
    }

    pub fn get(&self, k: usize) -> Result<&WishartPool> {
        self.pools
            .get(&k)
            .ok_or_else(|| Error::Internal(format!("no proposal pool for step {k}")))
    }
}

/// Sequential Kac–Rice misuse: the global-null statistic applied to the
/// trailing `p - k + 1` singular values as if they were a fresh spectrum.
pub fn sequential_global_null(values: &[f64], n: usize, k: usize, sigma2: f64, settings: &TestSettings) -> Result<f64> {
    let tail = &values[k - 1..];
    Ok(csv_value(tail, n - k + 1, 1, 0.0, sigma2, &settings.quadrature)?.survival())
}

/// Label for the negative-control series.
pub const SEQUENTIAL_GLOBAL_NULL: &str = "sequential_global_null";

/// Kolmogorov–Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS distance `d` for sample size `n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Per-step p-values of one method over all replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSeries {
    pub method: String,
    pub k: usize,
    /// True when `k > rank`, i.e. the step's null hypothesis holds.
    pub null_step: bool,
    pub pvalues: Vec<f64>,
    pub ks_distance: f64,
    pub ks_pvalue: f64,
    pub rejection_rate: f64,
    #[serde(default)]
    pub max_mc_std_error: Option<f64>,
}

impl StepSeries {
    fn new(method: String, k: usize, null_step: bool, mut pvalues: Vec<f64>, alpha: f64, max_se: Option<f64>) -> Self {
        pvalues.sort_by(|a, b| a.total_cmp(b));
        let d = ks_uniform(&pvalues);
        let n = pvalues.len();
        let rejected = pvalues.iter().filter(|&&p| p <= alpha).count();
        Self {
            method,
            k,
            null_step,
            ks_distance: d,
            ks_pvalue: ks_pvalue(d, n),
            rejection_rate: rejected as f64 / n.max(1) as f64,
            pvalues,
            max_mc_std_error: max_se,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub design: Design,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub series: Vec<StepSeries>,
}

impl CalibrationResult {
    pub fn find(&self, method: &str, k: usize) -> Option<&StepSeries> {
        self.series.iter().find(|s| s.method == method && s.k == k)
    }

    /// Long-format QQ table: method, step, empirical and uniform quantiles.
    pub fn qq_table(&self) -> Table {
        let mut t = Table::new(&["method", "k", "null_step", "i", "uniform_quantile", "p_value"]);
        for s in &self.series {
            let n = s.pvalues.len() as f64;
            for (i, p) in s.pvalues.iter().enumerate() {
                t.push(vec![
                    s.method.clone(),
                    s.k.to_string(),
                    s.null_step.to_string(),
                    (i + 1).to_string(),
                    format!("{:.6}", (i as f64 + 0.5) / n),
                    format!("{p:.9}"),
                ]);
            }
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "method",
            "k",
            "null_step",
            "reps",
            "ks_distance",
            "ks_pvalue",
            "rejection_rate",
            "max_mc_std_error",
        ]);
        for s in &self.series {
            t.push(vec![
                s.method.clone(),
                s.k.to_string(),
                s.null_step.to_string(),
                s.pvalues.len().to_string(),
                format!("{:.6}", s.ks_distance),
                format!("{:.6}", s.ks_pvalue),
                format!("{:.6}", s.rejection_rate),
                s.max_mc_std_error.map_or(String::new(), |v| format!("{v:.6}")),
            ]);
        }
        t
    }
}

/// Step p-values for `steps` under each method, plus optionally the
/// sequential global-null negative control.
pub fn run_null_calibration(
    design: &Design,
    methods: &[Method],
    steps: &[usize],
    reps: usize,
    seed: u64,
    settings: &TestSettings,
    negative_control: bool,
) -> Result<CalibrationResult> {
    design.signal.validate()?;
    let (n, p) = (design.signal.n, design.signal.p);
    if let Some(&k) = steps.iter().find(|&&k| k == 0 || k >= p) {
        return Err(Error::param(format!("step {k} outside 1..={}", p - 1)));
    }
    let pools = if methods.contains(&Method::Icsv) {
        Some(IcsvPools::new(n, p, steps, settings)?)
    } else {
        None
    };
    let mut columns: BTreeMap<(String, usize), (Vec<f64>, f64)> = BTreeMap::new();
    for r in 0..reps {
        let rep = replicate(design, seed, r as u64)?;
        let values = rep.spectrum.values();
        for &k in steps {
            for &method in methods {
                let outcome = match (method, &pools) {
                    (Method::Icsv, Some(pools)) => icsv_with_pool(values, n, k, rep.sigma2, pools.get(k)?, pools.min_ess)?,
                    _ => step_test(values, n, k, Some(rep.sigma2), method, settings)?,
                };
                let entry = columns.entry((method.to_string(), k)).or_insert((Vec::new(), 0.0));
                entry.0.push(outcome.p_value);
                if let Some(se) = outcome.diagnostics.get("mc_std_error") {
                    entry.1 = entry.1.max(*se);
                }
            }
            if negative_control {
                let pv = sequential_global_null(values, n, k, rep.sigma2, settings)?;
                columns
                    .entry((SEQUENTIAL_GLOBAL_NULL.to_string(), k))
                    .or_insert((Vec::new(), 0.0))
                    .0
                    .push(pv);
            }
        }
    }
    let series = columns
        .into_iter()
        .map(|((method, k), (pv, se))| {
            let max_se = (method == Method::Icsv.to_string()).then_some(se);
            StepSeries::new(method, k, k > design.signal.rank, pv, settings.alpha, max_se)
        })
        .collect();
    Ok(CalibrationResult {
        design: *design,
        reps,
        seed,
        alpha: settings.alpha,
        series,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageCell {
    pub k: usize,
    pub covered: usize,
    pub reps: usize,
    pub rate: f64,
    pub mean_width: f64,
    /// Replications whose interval could not be computed.
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageResult {
    pub design: Design,
    pub level: f64,
    pub seed: u64,
    pub cells: Vec<CoverageCell>,
}

/// Coverage of the level-`level` interval for `<U_k V_k^T, B>`.
pub fn run_coverage(
    design: &Design,
    level: f64,
    steps: &[usize],
    reps: usize,
    seed: u64,
    settings: &TestSettings,
) -> Result<CoverageResult> {
    design.signal.validate()?;
    let n = design.signal.n;
    let mut cells: Vec<CoverageCell> = steps
        .iter()
        .map(|&k| CoverageCell {
            k,
            covered: 0,
            reps: 0,
            rate: 0.0,
            mean_width: 0.0,
            failures: 0,
        })
        .collect();
    for r in 0..reps {
        let rep = replicate(design, seed, r as u64)?;
        for cell in cells.iter_mut() {
            let truth = rep.spectrum.direction_inner(cell.k, &rep.signal);
            match confidence_interval_values(rep.spectrum.values(), n, cell.k, rep.sigma2, level, &settings.quadrature) {
                Ok(ci) => {
                    cell.reps += 1;
                    cell.mean_width += ci.width();
                    if ci.contains(truth) {
                        cell.covered += 1;
                    }
                }
                Err(e) if e.is_numerical() => cell.failures += 1,
                Err(e) => return Err(e),
            }
        }
    }
    for cell in cells.iter_mut() {
        if cell.reps > 0 {
            cell.rate = cell.covered as f64 / cell.reps as f64;
            cell.mean_width /= cell.reps as f64;
        }
    }
    Ok(CoverageResult {
        design: *design,
        level,
        seed,
        cells,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankResult {
    pub design: Design,
    pub method: Method,
    pub rule: StopRule,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    /// `histogram[j]` counts replications with estimated rank `j`.
    pub histogram: Vec<usize>,
    pub rate_correct: f64,
    pub rate_over: f64,
    pub mse: f64,
    pub mean_sigma2: f64,
}

/// Rank recovery by `method` p-values and `rule`.
pub fn run_rank_experiment(
    design: &Design,
    method: Method,
    rule: StopRule,
    reps: usize,
    seed: u64,
    settings: &TestSettings,
) -> Result<RankResult> {
    design.signal.validate()?;
    let (n, p) = (design.signal.n, design.signal.p);
    let steps: Vec<usize> = (1..p).collect();
    let pools = if method == Method::Icsv {
        Some(IcsvPools::new(n, p, &steps, settings)?)
    } else {
        None
    };
    let mut histogram = vec![0usize; p];
    let mut sq = 0.0;
    let mut sigma_sum = 0.0;
    let kappa = design.signal.rank;
    for r in 0..reps {
        let rep = replicate(design, seed, r as u64)?;
        let values = rep.spectrum.values();
        sigma_sum += rep.sigma2;
        let pvalues = steps
            .iter()
            .map(|&k| {
                Ok(match &pools {
                    Some(pools) => icsv_with_pool(values, n, k, rep.sigma2, pools.get(k)?, pools.min_ess)?.p_value,
                    None => step_test(values, n, k, Some(rep.sigma2), method, settings)?.p_value,
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let kh = decide(&pvalues, rule, settings.alpha)?.kappa_hat;
        histogram[kh] += 1;
        sq += (kh as f64 - kappa as f64).powi(2);
    }
    let total = reps.max(1) as f64;
    Ok(RankResult {
        design: *design,
        method,
        rule,
        alpha: settings.alpha,
        reps,
        seed,
        rate_correct: histogram[kappa] as f64 / total,
        rate_over: histogram[kappa + 1..].iter().sum::<usize>() as f64 / total,
        mse: sq / total,
        mean_sigma2: sigma_sum / total,
        histogram,
    })
}

/// Noise estimates over replications (mean and standard deviation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub design: Design,
    pub reps: usize,
    pub seed: u64,
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

pub fn run_noise_study(design: &Design, reps: usize, seed: u64) -> Result<NoiseStudy> {
    let mut estimates = Vec::with_capacity(reps);
    for r in 0..reps {
        estimates.push(replicate(design, seed, r as u64)?.sigma2);
    }
    let n = estimates.len().max(1) as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(NoiseStudy {
        design: *design,
        reps,
        seed,
        estimates,
        mean,
        sd: var.sqrt(),
    })
}

/// A plain text table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Inserts a constant leading column.
    pub fn prepend(&mut self, name: &str, value: &str) {
        self.columns.insert(0, name.to_string());
        for row in &mut self.rows {
            row.insert(0, value.to_string());
        }
    }

    /// Appends the rows of `other`, which must share this table's columns.
    pub fn extend(&mut self, other: Table) -> Result<()> {
        if self.rows.is_empty() && self.columns.is_empty() {
            *self = other;
            return Ok(());
        }
        if self.columns != other.columns {
            return Err(Error::Internal("table columns differ".into()));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn write_delimited<W: Write>(&self, mut w: W, delimiter: char) -> io::Result<()> {
        let sep = delimiter.to_string();
        writeln!(w, "{}", self.columns.join(&sep))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join(&sep))?;
        }
        Ok(())
    }
}

impl CoverageResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["rank", "m", "k", "level", "reps", "covered", "rate", "mean_width", "failures"]);
        for c in &self.cells {
            t.push(vec![
                self.design.signal.rank.to_string(),
                format!("{}", self.design.signal.m),
                c.k.to_string(),
                format!("{}", self.level),
                c.reps.to_string(),
                c.covered.to_string(),
                format!("{:.6}", c.rate),
                format!("{:.6}", c.mean_width),
                c.failures.to_string(),
            ]);
        }
        t
    }
}

impl RankResult {
    pub fn table(&self) -> Table {
        let mut cols = vec!["rank", "m", "method", "rule", "sigma", "reps", "rate_correct", "rate_over", "mse", "mean_sigma2"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((0..self.histogram.len()).map(|j| format!("n_hat_{j}")));
        let mut row = vec![
            self.design.signal.rank.to_string(),
            format!("{}", self.design.signal.m),
            self.method.to_string(),
            self.rule.to_string(),
            self.design.sigma.label().to_string(),
            self.reps.to_string(),
            format!("{:.6}", self.rate_correct),
            format!("{:.6}", self.rate_over),
            format!("{:.6}", self.mse),
            format!("{:.6}", self.mean_sigma2),
        ];
        row.extend(self.histogram.iter().map(|h| h.to_string()));
        Table {
            columns: cols,
            rows: vec![row],
        }
    }
}

/// Convenience for callers that already hold a generator.
pub fn replicate_with(design: &Design, rng: &mut StreamRng) -> Result<(DMatrix<f64>, ObservedMatrix)> {
    let signal = generate_signal(&design.signal, rng)?;
    let spec = NoiseSpec {
        kind: design.noise,
        sigma2: design.signal.sigma2,
    };
    let y = &signal + generate_noise(design.signal.n, design.signal.p, &spec, rng);
    Ok((signal, ObservedMatrix::new(y)?))
}

//! `pcrank`: rank selection for noisy matrices from the command line.

mod input;
mod simulate;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcrank::exact::{confidence_interval_values, step_test};
use pcrank::noise::{sigma_cv, sigma_med_values, sigma_simple_values, CvConfig, SoftImputeConfig};
use pcrank::rank::decide;
use pcrank::report::{AnalysisReport, InputDescriptor, RunConfig};
use pcrank::rng::{stream_id, stream_rng};
use pcrank::simlab::Table;
use pcrank::{svd_full, ISConfig, Method, NoiseEstimate, NoiseVariant, SingularSpectrum, StopRule, TestSettings};

use input::{Delimiter, Loaded, ReadOptions};

const CV_STREAM_TAG: u32 = 0xc5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Ingest(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

impl From<pcrank::Error> for CliError {
    fn from(e: pcrank::Error) -> Self {
        use pcrank::Error as E;
        match e {
            E::Input(_) => CliError::Ingest(e.to_string()),
            E::Parameter(_) | E::Unsupported(_) => CliError::Usage(e.to_string()),
            E::Numerical { .. } | E::Degenerate(_) => CliError::Numerical(e.to_string()),
            E::Internal(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Ingest(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "pcrank", version, about = "Exact tests for the number of principal components")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Step tests of H0: rank < k.
    Test(TestArgs),
    /// Estimate the rank with a sequential stopping rule.
    Rank(RankArgs),
    /// Confidence intervals for the signal along the k-th singular directions.
    Ci(CiArgs),
    /// Estimate the noise variance.
    Noise(NoiseCmdArgs),
    /// Run a simulation suite and write delimited tables.
    Simulate(simulate::SimulateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Delimited numeric matrix, or `builtin:exam` for the bundled exam scores.
    input: String,
    /// Field delimiter: auto, comma, tab, space or semicolon.
    #[arg(long, default_value = "auto")]
    delimiter: Delimiter,
    /// Skip the first non-comment line.
    #[arg(long)]
    header: bool,
    /// Subtract column means before analysis.
    #[arg(long)]
    center: bool,
}

impl InputArgs {
    fn load(&self) -> Result<Loaded, CliError> {
        input::load(
            &self.input,
            &ReadOptions {
                delimiter: self.delimiter,
                header: self.header,
                center: self.center,
            },
        )
    }
}

#[derive(Args, Clone)]
pub struct NoiseArgs {
    /// Known noise variance.
    #[arg(long, conflicts_with = "noise_est")]
    sigma2: Option<f64>,
    /// Noise estimator: median, simple, cv, cv-df or cv-dfc (default median).
    #[arg(long)]
    noise_est: Option<NoiseVariant>,
    /// Assumed rank for the simple estimator.
    #[arg(long)]
    kappa: Option<usize>,
    #[command(flatten)]
    cv: CvArgs,
}

#[derive(Args, Clone)]
pub struct CvArgs {
    /// Cross-validation folds.
    #[arg(long, default_value_t = 20)]
    folds: usize,
    /// Degrees-of-freedom multiplier of the cv-dfc estimator.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    c: f64,
    /// Number of log-spaced penalty values.
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Rank cap of the held-out fits (0 disables the cap).
    #[arg(long, default_value_t = 2)]
    rank_cap: usize,
}

impl CvArgs {
    pub fn config(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            grid_points: self.grid_points,
            c: self.c,
            impute: SoftImputeConfig {
                rank_cap: (self.rank_cap > 0).then_some(self.rank_cap),
                ..SoftImputeConfig::default()
            },
            ..CvConfig::default()
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed for Monte Carlo and cross-validation.
    #[arg(long, env = "PCRANK_SEED", default_value_t = 20_160_104)]
    seed: u64,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Importance samples for the integrated test.
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn settings(&self) -> TestSettings {
        TestSettings {
            alpha: self.alpha,
            importance: ISConfig {
                sample_count: self.samples,
                seed: self.seed,
                ..ISConfig::default()
            },
            ..TestSettings::default()
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "csv")]
    method: Method,
    /// Steps to test (repeatable; default all).
    #[arg(long = "k")]
    k: Vec<usize>,
    /// Emit only the singular values as an index/value table.
    #[arg(long)]
    scree: bool,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "csv")]
    method: Method,
    /// Stopping rule: simple or strong.
    #[arg(long, default_value = "strong")]
    rule: StopRule,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Components (repeatable; default 1).
    #[arg(long = "k")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct NoiseCmdArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Estimator: median, simple, cv, cv-df or cv-dfc.
    #[arg(long, default_value = "median")]
    variant: NoiseVariant,
    /// Assumed rank for the simple estimator.
    #[arg(long)]
    kappa: Option<usize>,
    #[command(flatten)]
    cv: CvArgs,
    #[command(flatten)]
    common: CommonArgs,
}

fn estimate_noise(
    loaded: &Loaded,
    spectrum: &SingularSpectrum,
    variant: NoiseVariant,
    kappa: Option<usize>,
    cv: &CvConfig,
    seed: u64,
) -> Result<NoiseEstimate, CliError> {
    let (values, n) = (spectrum.values(), spectrum.rows());
    Ok(match variant {
        NoiseVariant::Median => sigma_med_values(values, n)?,
        NoiseVariant::Simple => {
            let kappa = kappa.ok_or_else(|| CliError::Usage("the simple estimator needs --kappa".into()))?;
            sigma_simple_values(values, n, kappa)?
        }
        v => {
            let mut rng = stream_rng(seed, stream_id(CV_STREAM_TAG, 0));
            sigma_cv(&loaded.matrix, v, cv, &mut rng)?.0
        }
    })
}

/// Known `sigma^2` or an estimate, recorded in `report`.
fn resolve_sigma(
    loaded: &Loaded,
    spectrum: &SingularSpectrum,
    args: &NoiseArgs,
    seed: u64,
    report: &mut AnalysisReport,
) -> Result<f64, CliError> {
    if let Some(s) = args.sigma2 {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CliError::Usage(format!("--sigma2 must be positive, got {s}")));
        }
        report.config.sigma2 = Some(s);
        return Ok(s);
    }
    let variant = args.noise_est.unwrap_or(NoiseVariant::Median);
    let cv = args.cv.config();
    let est = estimate_noise(loaded, spectrum, variant, args.kappa, &cv, seed)?;
    report.config.noise_variant = Some(variant);
    report.config.kappa = args.kappa;
    if matches!(variant, NoiseVariant::Lambda | NoiseVariant::LambdaDf | NoiseVariant::LambdaDfC) {
        report.config.cv = Some(cv);
    }
    let s = est.sigma2;
    report.noise.push(est);
    Ok(s)
}

fn new_report(command: &str, loaded: &Loaded, spectrum: &SingularSpectrum, common: &CommonArgs, center: bool) -> AnalysisReport {
    AnalysisReport::new(
        common.seed,
        InputDescriptor {
            source: loaded.source.clone(),
            rows: loaded.matrix.rows(),
            cols: loaded.matrix.cols(),
            transposed: loaded.matrix.transposed(),
            centered: center,
        },
        RunConfig::new(command, common.settings()),
        spectrum.values().to_vec(),
    )
}

fn check_steps(steps: &[usize], p: usize) -> Result<(), CliError> {
    if let Some(k) = steps.iter().find(|&&k| k == 0 || k >= p) {
        return Err(CliError::Usage(format!("--k {k} outside 1..={}", p - 1)));
    }
    Ok(())
}

fn emit_report(report: &mut AnalysisReport, out: Option<&PathBuf>) -> Result<(), CliError> {
    report.collect_flags();
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            let mut w = io::stdout().lock();
            writeln!(w, "{text}")?;
        }
    }
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<(), CliError> {
    let loaded = args.input.load()?;
    let spectrum = svd_full(&loaded.matrix)?;
    if args.scree {
        let mut t = Table::new(&["index", "singular_value"]);
        for (i, d) in spectrum.values().iter().enumerate() {
            t.push(vec![(i + 1).to_string(), format!("{d:.9}")]);
        }
        return match &args.common.out {
            Some(path) => Ok(t.write_delimited(BufWriter::new(File::create(path)?), '\t')?),
            None => Ok(t.write_delimited(io::stdout().lock(), '\t')?),
        };
    }
    let p = spectrum.cols();
    let steps = if args.k.is_empty() { (1..p).collect() } else { args.k.clone() };
    check_steps(&steps, p)?;
    let mut report = new_report("test", &loaded, &spectrum, &args.common, args.input.center);
    let sigma2 = if args.method.needs_sigma2() {
        Some(resolve_sigma(&loaded, &spectrum, &args.noise, args.common.seed, &mut report)?)
    } else {
        None
    };
    report.config.method = Some(args.method);
    report.config.steps = steps.clone();
    let settings = report.config.settings;
    for k in steps {
        report
            .tests
            .push(step_test(spectrum.values(), spectrum.rows(), k, sigma2, args.method, &settings)?);
    }
    emit_report(&mut report, args.common.out.as_ref())
}

fn cmd_rank(args: RankArgs) -> Result<(), CliError> {
    let loaded = args.input.load()?;
    let spectrum = svd_full(&loaded.matrix)?;
    let p = spectrum.cols();
    let mut report = new_report("rank", &loaded, &spectrum, &args.common, args.input.center);
    let sigma2 = if args.method.needs_sigma2() {
        Some(resolve_sigma(&loaded, &spectrum, &args.noise, args.common.seed, &mut report)?)
    } else {
        None
    };
    report.config.method = Some(args.method);
    report.config.rule = Some(args.rule);
    report.config.steps = (1..p).collect();
    let settings = report.config.settings;
    for k in 1..p {
        report
            .tests
            .push(step_test(spectrum.values(), spectrum.rows(), k, sigma2, args.method, &settings)?);
    }
    let pv: Vec<f64> = report.tests.iter().map(|t| t.p_value).collect();
    report.decision = Some(decide(&pv, args.rule, settings.alpha)?);
    emit_report(&mut report, args.common.out.as_ref())
}

fn cmd_ci(args: CiArgs) -> Result<(), CliError> {
    let loaded = args.input.load()?;
    let spectrum = svd_full(&loaded.matrix)?;
    let p = spectrum.cols();
    let steps = if args.k.is_empty() { vec![1] } else { args.k.clone() };
    check_steps(&steps, p)?;
    let mut report = new_report("ci", &loaded, &spectrum, &args.common, args.input.center);
    let sigma2 = resolve_sigma(&loaded, &spectrum, &args.noise, args.common.seed, &mut report)?;
    report.config.level = Some(args.level);
    report.config.steps = steps.clone();
    let quad = report.config.settings.quadrature;
    for k in steps {
        report.intervals.push(confidence_interval_values(
            spectrum.values(),
            spectrum.rows(),
            k,
            sigma2,
            args.level,
            &quad,
        )?);
    }
    emit_report(&mut report, args.common.out.as_ref())
}

fn cmd_noise(args: NoiseCmdArgs) -> Result<(), CliError> {
    let loaded = args.input.load()?;
    let spectrum = svd_full(&loaded.matrix)?;
    let mut report = new_report("noise", &loaded, &spectrum, &args.common, args.input.center);
    let cv = args.cv.config();
    let est = estimate_noise(&loaded, &spectrum, args.variant, args.kappa, &cv, args.common.seed)?;
    report.config.noise_variant = Some(args.variant);
    report.config.kappa = args.kappa;
    if matches!(args.variant, NoiseVariant::Lambda | NoiseVariant::LambdaDf | NoiseVariant::LambdaDfC) {
        report.config.cv = Some(cv);
    }
    report.noise.push(est);
    emit_report(&mut report, args.common.out.as_ref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Ci(a) => cmd_ci(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Simulate(a) => simulate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcrank: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

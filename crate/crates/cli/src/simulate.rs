//! The `simulate` subcommand.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pcrank::report::{SCHEMA_VERSION, TOOL_VERSION};
use pcrank::simlab::{
    run_coverage, run_noise_study, run_null_calibration, run_rank_experiment, Design, NoiseKind, SigmaMode, SignalSpec, Table,
};
use pcrank::{ISConfig, Method, StopRule, TestSettings};
use serde::Serialize;

use crate::{CliError, CvArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Calibration,
    Power,
    Coverage,
    Rank,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaChoice {
    Known,
    Median,
    CvDfc,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// JSON design file; overrides the design flags below.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Signal ranks (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    rank: Vec<usize>,
    /// Signal magnitudes (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1.5")]
    m: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Noise distribution: gaussian, heavy-tail or right-skew.
    #[arg(long, default_value = "gaussian")]
    noise: NoiseKind,
    /// How each replication obtains sigma^2.
    #[arg(long, value_enum, default_value = "known")]
    sigma: SigmaChoice,
    /// Methods for the calibration and power suites (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "csv,icsv,pseudorank")]
    methods: Vec<Method>,
    /// Method for the rank suite.
    #[arg(long, default_value = "csv")]
    method: Method,
    #[arg(long, default_value = "strong")]
    rule: StopRule,
    /// Steps for the calibration, power and coverage suites (default 1..=min(4, p-1)).
    #[arg(long, value_delimiter = ',')]
    steps: Vec<usize>,
    /// Add the sequential global-null negative control to calibration.
    #[arg(long)]
    negative_control: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    /// Replications per design (default 3000 for p <= 10, else 1000).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, env = "PCRANK_SEED", default_value_t = 20_160_104)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Output delimiter: tab or comma.
    #[arg(long, default_value = "tab")]
    delimiter: String,
    #[command(flatten)]
    cv: CvArgs,
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema_version: u32,
    tool_version: &'a str,
    suite: Suite,
    seed: u64,
    reps: usize,
    designs: &'a [Design],
    settings: TestSettings,
    methods: &'a [Method],
    method: Method,
    rule: StopRule,
    steps: &'a [usize],
    level: f64,
    negative_control: bool,
    files: Vec<String>,
}

fn designs(args: &SimulateArgs) -> Result<Vec<Design>, CliError> {
    if let Some(path) = &args.design {
        let text = fs::read_to_string(path).map_err(|e| CliError::Ingest(format!("cannot read {}: {e}", path.display())))?;
        let d: Design = serde_json::from_str(&text).map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))?;
        d.signal.validate()?;
        return Ok(vec![d]);
    }
    let sigma = match args.sigma {
        SigmaChoice::Known => SigmaMode::Known,
        SigmaChoice::Median => SigmaMode::Median,
        SigmaChoice::CvDfc => SigmaMode::CvDfc { cv: args.cv.config() },
    };
    let mut out = Vec::new();
    for &rank in &args.rank {
        for &m in &args.m {
            let d = Design {
                signal: SignalSpec {
                    n: args.n,
                    p: args.p,
                    rank,
                    m,
                    sigma2: args.sigma2,
                },
                noise: args.noise,
                sigma,
            };
            d.signal.validate()?;
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no designs: --rank and --m must be non-empty".into()));
    }
    Ok(out)
}

fn write_table(dir: &Path, name: &str, table: &Table, delim: char, files: &mut Vec<String>) -> Result<(), CliError> {
    let ext = if delim == ',' { "csv" } else { "tsv" };
    let file = format!("{name}.{ext}");
    table.write_delimited(BufWriter::new(File::create(dir.join(&file))?), delim)?;
    files.push(file);
    Ok(())
}

fn tag(mut t: Table, d: &Design) -> Table {
    t.prepend("sigma_mode", d.sigma.label());
    t.prepend("noise", &d.noise.to_string());
    t.prepend("m", &d.signal.m.to_string());
    t.prepend("rank", &d.signal.rank.to_string());
    t
}

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let delim = match args.delimiter.as_str() {
        "tab" | "\t" => '\t',
        "comma" | "," => ',',
        other => return Err(CliError::Usage(format!("--delimiter must be tab or comma, got '{other}'"))),
    };
    let designs = designs(&args)?;
    let p = designs[0].signal.p;
    let reps = args.reps.unwrap_or(if p <= 10 { 3000 } else { 1000 });
    if reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    let steps: Vec<usize> = if args.steps.is_empty() {
        (1..=(p - 1).min(4)).collect()
    } else {
        args.steps.clone()
    };
    let settings = TestSettings {
        alpha: args.alpha,
        importance: ISConfig {
            sample_count: args.samples,
            seed: args.seed,
            ..ISConfig::default()
        },
        ..TestSettings::default()
    };
    fs::create_dir_all(&args.out_dir)?;
    let mut files = Vec::new();
    let name = match args.suite {
        Suite::Calibration => "calibration",
        Suite::Power => "power",
        Suite::Coverage => "coverage",
        Suite::Rank => "rank",
        Suite::Noise => "noise",
    };
    let mut main_table = Table::new(&[]);
    let mut qq_table = Table::new(&[]);
    for d in &designs {
        match args.suite {
            Suite::Calibration | Suite::Power => {
                let negative = args.negative_control && args.suite == Suite::Calibration;
                let res = run_null_calibration(d, &args.methods, &steps, reps, args.seed, &settings, negative)?;
                main_table.extend(tag(res.summary_table(), d))?;
                if args.suite == Suite::Calibration {
                    qq_table.extend(tag(res.qq_table(), d))?;
                }
            }
            Suite::Coverage => {
                let res = run_coverage(d, args.level, &steps, reps, args.seed, &settings)?;
                main_table.extend(tag(res.table(), d))?;
            }
            Suite::Rank => {
                let res = run_rank_experiment(d, args.method, args.rule, reps, args.seed, &settings)?;
                main_table.extend(res.table())?;
            }
            Suite::Noise => {
                if d.sigma == SigmaMode::Known {
                    return Err(CliError::Usage("the noise suite needs --sigma median or cv-dfc".into()));
                }
                let res = run_noise_study(d, reps, args.seed)?;
                let mut t = Table::new(&["reps", "mean", "sd"]);
                t.push(vec![reps.to_string(), format!("{:.6}", res.mean), format!("{:.6}", res.sd)]);
                main_table.extend(tag(t, d))?;
            }
        }
    }
    let main_name = if args.suite == Suite::Calibration {
        "calibration_summary"
    } else {
        name
    };
    write_table(&args.out_dir, main_name, &main_table, delim, &mut files)?;
    if args.suite == Suite::Calibration {
        write_table(&args.out_dir, "calibration_qq", &qq_table, delim, &mut files)?;
    }
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        suite: args.suite,
        seed: args.seed,
        reps,
        designs: &designs,
        settings,
        methods: &args.methods,
        method: args.method,
        rule: args.rule,
        steps: &steps,
        level: args.level,
        negative_control: args.negative_control,
        files: files.clone(),
    };
    let meta_name = format!("{name}.meta.json");
    fs::write(args.out_dir.join(&meta_name), serde_json::to_string_pretty(&meta)? + "\n")?;
    println!("wrote {} and {meta_name} to {}", files.join(", "), args.out_dir.display());
    Ok(())
}

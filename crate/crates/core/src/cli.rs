//! Command-line front end: angle sweeps to CSV and single-point JSON reports.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 an ideal-model
//! sweep point outside 4σ of its analytic prediction.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::linalg::ComplexMatrix;
use crate::montecarlo::{
    run_sweep, Counting, ImperfectionModel, Source, SweepConfig, SweepResult, DEFAULT_TRIALS,
};
use crate::network::{build_mc_circuit, build_usd_circuit};
use crate::quantum::{DiscriminationProblem, Hypothesis, Povm};
use crate::states::{
    make_mixed_pair, make_partially_polarized, rho0_from_input_polarization, MixedPairParams,
    PartialPolarizationParams, Rho0Params, Sign,
};
use crate::strategies::{mc_report, minerror_report, usd_report, Strategy, StrategyReport};

/// Acceptance band for sweep points, in standard deviations.
pub const SIGMA_LIMIT: f64 = 4.0;
/// Source used by USD sweeps when no state is given: p = 0.54 at 45°.
pub const DEFAULT_SOURCE_P: f64 = 0.54;
pub const DEFAULT_SOURCE_GAMMA_DEG: f64 = 45.0;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
    Breach(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Breach(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Breach(m) => write!(f, "acceptance breach: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Output(m) => CliError::Io(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "qdiscrim",
    version,
    about = "Discrimination of partially polarized and mixed photon states"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Maximum-confidence sweep over the half angle β.
    McSweep(McSweepArgs),
    /// Unambiguous-discrimination sweep over α.
    UsdSweep(UsdSweepArgs),
    /// Sweep described by a JSON config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form report for a single parameter point, as JSON.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Trials per sweep point and prepared state.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub n: u64,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Gaussian per-trial jitter on every wave plate, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub jitter_deg: f64,
    /// Static wave plate offset as NAME=DEGREES, repeatable.
    #[arg(long = "offset", value_parser = parse_offset)]
    pub offsets: Vec<(String, f64)>,
    /// Weight of white noise mixed into the prepared state.
    #[arg(long, default_value_t = 0.0)]
    pub misalignment: f64,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Poisson counting with this dwell time per point, seconds.
    #[arg(long)]
    pub poisson: Option<f64>,
    /// Count rate for --poisson, per second.
    #[arg(long, default_value_t = 2000.0)]
    pub rate: f64,
}

#[derive(Args, Debug)]
pub struct McSweepArgs {
    #[arg(long)]
    pub p: f64,
    /// Degrees, START:STOP:STEP or a comma list.
    #[arg(long, default_value = "5:45:5")]
    pub beta_range: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct UsdSweepArgs {
    /// Degrees, START:STOP:STEP or a comma list.
    #[arg(long, default_value = "5:45:5")]
    pub alpha_range: String,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct SourceArgs {
    /// Source state as R11,RE_R12,IM_R12 (R22 = 1 − R11).
    #[arg(long, conflicts_with_all = ["p", "gamma"])]
    pub rho0: Option<String>,
    /// Degree of polarization of the photon entering the source beam splitter.
    #[arg(long)]
    pub p: Option<f64>,
    /// Polarization angle of that photon, degrees.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Mc,
    Usd,
    Minerror,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Degree of polarization (mc, minerror).
    #[arg(long)]
    pub p: Option<f64>,
    /// Half angle β in degrees (mc, minerror).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Half angle α in degrees (usd).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rho0: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

fn parse_offset(s: &str) -> Result<(String, f64), String> {
    let (name, deg) = s.split_once('=').ok_or("expected NAME=DEGREES")?;
    let deg: f64 = deg
        .trim()
        .parse()
        .map_err(|_| format!("bad angle in {s}"))?;
    Ok((name.trim().to_string(), deg))
}

/// Expands `START:STOP:STEP`, a comma list or a single value into degrees.
pub fn parse_angles(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Invalid(format!("cannot parse angle range {s:?}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(bad());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|k| start + k as f64 * step).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn parse_rho0(s: &str) -> Result<Rho0Params, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Invalid(format!("cannot parse --rho0 {s:?}")))?;
    match v.as_slice() {
        [r11, re, im] => Ok(Rho0Params::new(*r11, 1.0 - r11, Complex64::new(*re, *im))?),
        _ => Err(CliError::Invalid("--rho0 takes R11,RE_R12,IM_R12".into())),
    }
}

fn source_rho0(
    rho0: Option<&str>,
    p: Option<f64>,
    gamma: Option<f64>,
) -> Result<Rho0Params, CliError> {
    match rho0 {
        Some(s) => parse_rho0(s),
        None => Ok(rho0_from_input_polarization(
            p.unwrap_or(DEFAULT_SOURCE_P),
            gamma.unwrap_or(DEFAULT_SOURCE_GAMMA_DEG).to_radians(),
        )?),
    }
}

fn imperfection(
    jitter_deg: f64,
    offsets: &[(String, f64)],
    misalignment: f64,
) -> Result<ImperfectionModel, CliError> {
    let offsets: BTreeMap<String, f64> = offsets
        .iter()
        .map(|(k, v)| (k.clone(), v.to_radians()))
        .collect();
    Ok(ImperfectionModel::new(
        offsets,
        jitter_deg.to_radians(),
        misalignment,
    )?)
}

fn counting(n: u64, poisson: Option<f64>, rate: f64) -> Counting {
    match poisson {
        Some(dwell) => Counting::Poisson { rate, dwell },
        None => Counting::Fixed(n),
    }
}

fn sweep_config(
    strategy: Strategy,
    angles: &str,
    source: Source,
    run: &RunArgs,
) -> Result<SweepConfig, CliError> {
    Ok(SweepConfig {
        strategy,
        angles_deg: parse_angles(angles)?,
        source,
        counting: counting(run.n, run.poisson, run.rate),
        seed: run.seed,
        imperfection: imperfection(run.jitter_deg, &run.offsets, run.misalignment)?,
        workers: run.workers,
    })
}

/// Angles as an explicit list or a `START:STOP:STEP` string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AngleSpec {
    List(Vec<f64>),
    Range(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Rho0Spec {
    Explicit { r11: f64, r12_re: f64, r12_im: f64 },
    Polarized { p: f64, gamma_deg: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImperfectionSpec {
    #[serde(default)]
    pub jitter_deg: f64,
    #[serde(default)]
    pub offset_deg: BTreeMap<String, f64>,
    #[serde(default)]
    pub misalignment: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    pub dwell_s: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_rate() -> f64 {
    2000.0
}

/// Sweep description read by `qdiscrim sweep --config`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub strategy: Strategy,
    pub angles_deg: AngleSpec,
    pub p: Option<f64>,
    pub rho0: Option<Rho0Spec>,
    #[serde(default = "default_trials")]
    pub n_trials: u64,
    pub seed: Option<u64>,
    #[serde(default)]
    pub imperfection: ImperfectionSpec,
    pub poisson: Option<PoissonSpec>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn default_trials() -> u64 {
    DEFAULT_TRIALS
}

impl SweepFile {
    pub fn to_config(&self, env_seed: Option<u64>) -> Result<SweepConfig, CliError> {
        let source = match (self.strategy, self.p, &self.rho0) {
            (
                Strategy::UnambiguousUsd,
                None,
                Some(Rho0Spec::Explicit {
                    r11,
                    r12_re,
                    r12_im,
                }),
            ) => Source::Rho0(Rho0Params::new(
                *r11,
                1.0 - r11,
                Complex64::new(*r12_re, *r12_im),
            )?),
            (Strategy::UnambiguousUsd, None, Some(Rho0Spec::Polarized { p, gamma_deg })) => {
                Source::Rho0(rho0_from_input_polarization(*p, gamma_deg.to_radians())?)
            }
            (Strategy::MaxConfidence | Strategy::MinError, Some(p), None) => {
                Source::Polarized { p }
            }
            (s, _, _) => {
                return Err(CliError::Invalid(format!(
                    "strategy {s} needs exactly one of {}",
                    if s == Strategy::UnambiguousUsd {
                        "rho0"
                    } else {
                        "p"
                    }
                )))
            }
        };
        let angles_deg = match &self.angles_deg {
            AngleSpec::List(v) => v.clone(),
            AngleSpec::Range(s) => parse_angles(s)?,
        };
        let offsets: Vec<(String, f64)> =
            self.imperfection.offset_deg.clone().into_iter().collect();
        Ok(SweepConfig {
            strategy: self.strategy,
            angles_deg,
            source,
            counting: match &self.poisson {
                Some(ps) => Counting::Poisson {
                    rate: ps.rate,
                    dwell: ps.dwell_s,
                },
                None => Counting::Fixed(self.n_trials),
            },
            seed: self.seed.or(env_seed).unwrap_or(0),
            imperfection: imperfection(
                self.imperfection.jitter_deg,
                &offsets,
                self.imperfection.misalignment,
            )?,
            workers: self.workers,
        })
    }
}

/// Sweep, write the CSV and summarize. Ideal-model sweeps are checked
/// against the analytic predictions.
pub fn execute_sweep(config: &SweepConfig, out: Option<&Path>) -> Result<String, CliError> {
    let result = run_sweep(config)?;
    match out {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            result.write_csv(&mut w)?;
            w.flush()?;
        }
        None => result.write_csv(io::stdout().lock())?,
    }
    let summary = summarize(config, &result);
    let breaches = result.breaches(SIGMA_LIMIT);
    if config.imperfection.is_ideal() && !breaches.is_empty() {
        let at: Vec<String> = breaches
            .iter()
            .map(|r| format!("{}° ({})", r.angle_deg, r.prepared))
            .collect();
        return Err(CliError::Breach(format!(
            "{summary}; outside {SIGMA_LIMIT}σ at {}",
            at.join(", ")
        )));
    }
    Ok(summary)
}

fn summarize(config: &SweepConfig, result: &SweepResult) -> String {
    let curve = match config.strategy {
        Strategy::MaxConfidence => "confidence and click fractions",
        Strategy::UnambiguousUsd => "inconclusive and conclusive fractions",
        Strategy::MinError => "error and click fractions",
    };
    if !config.imperfection.is_ideal() {
        return format!(
            "{} rows; imperfect model, deviations from the ideal {curve} are expected and not gated",
            result.rows.len()
        );
    }
    format!(
        "{} rows; max deviation of {curve} from the ideal model: {:.2}σ (limit {SIGMA_LIMIT}σ)",
        result.rows.len(),
        result.max_sigma_deviation()
    )
}

fn matrix_json(m: &ComplexMatrix) -> Value {
    let n = m.size();
    Value::Array(
        (0..n)
            .map(|i| {
                Value::Array(
                    (0..n)
                        .map(|j| json!([m.get(i, j).re, m.get(i, j).im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

fn povm_json(povm: &Povm) -> Value {
    Value::Array(
        povm.outcomes()
            .iter()
            .map(|(label, m)| json!({ "label": label, "matrix": matrix_json(m) }))
            .collect(),
    )
}

fn report_json(report: &StrategyReport, params: Value, circuit: Value) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("strategy".into(), json!(report.strategy));
    obj.insert("params".into(), params);
    for (k, v) in &report.predicted {
        obj.insert(k.clone(), json!(v));
    }
    obj.insert("povm".into(), povm_json(&report.povm));
    obj.insert("circuit".into(), circuit);
    Value::Object(obj)
}

#[derive(Serialize)]
struct CircuitPair<T: Serialize> {
    prepared_first: T,
    prepared_second: T,
}

/// Closed-form report for one parameter point.
pub fn analyze(args: &AnalyzeArgs) -> Result<Value, CliError> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| CliError::Invalid(format!("--{name} is required")))
    };
    match args.strategy {
        StrategyArg::Mc | StrategyArg::Minerror => {
            let p = need(args.p, "p")?;
            let beta_deg = need(args.beta, "beta")?;
            let params = PartialPolarizationParams::new(p, beta_deg.to_radians())?;
            let json_params = json!({ "p": p, "beta_deg": beta_deg });
            if args.strategy == StrategyArg::Mc {
                let circuits = CircuitPair {
                    prepared_first: build_mc_circuit(params, Sign::Plus)?.0,
                    prepared_second: build_mc_circuit(params, Sign::Minus)?.0,
                };
                Ok(report_json(
                    &mc_report(params)?,
                    json_params,
                    json!(circuits),
                ))
            } else {
                let problem = DiscriminationProblem::equal_priors(
                    make_partially_polarized(params, Sign::Plus),
                    make_partially_polarized(params, Sign::Minus),
                )?;
                Ok(report_json(
                    &minerror_report(&problem)?,
                    json_params,
                    Value::Null,
                ))
            }
        }
        StrategyArg::Usd => {
            let alpha_deg = need(args.alpha, "alpha")?;
            let alpha = alpha_deg.to_radians();
            let rho0 = source_rho0(args.rho0.as_deref(), args.p, args.gamma)?;
            let (rho1, rho2) = make_mixed_pair(MixedPairParams::new(alpha, rho0)?)?;
            let problem = DiscriminationProblem::equal_priors(rho1, rho2)?;
            let circuits = CircuitPair {
                prepared_first: build_usd_circuit(alpha, Hypothesis::First, rho0)?.0,
                prepared_second: build_usd_circuit(alpha, Hypothesis::Second, rho0)?.0,
            };
            let json_params = json!({
                "alpha_deg": alpha_deg,
                "rho0": { "r11": rho0.r11(), "r22": rho0.r22(), "r12_re": rho0.r12().re, "r12_im": rho0.r12().im },
            });
            Ok(report_json(
                &usd_report(alpha, &problem)?,
                json_params,
                json!(circuits),
            ))
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::McSweep(a) => {
            let config = sweep_config(
                Strategy::MaxConfidence,
                &a.beta_range,
                Source::Polarized { p: a.p },
                &a.run,
            )?;
            report_summary(
                execute_sweep(&config, a.run.out.as_deref()),
                a.run.out.is_some(),
            )
        }
        Command::UsdSweep(a) => {
            let rho0 = source_rho0(a.source.rho0.as_deref(), a.source.p, a.source.gamma)?;
            let config = sweep_config(
                Strategy::UnambiguousUsd,
                &a.alpha_range,
                Source::Rho0(rho0),
                &a.run,
            )?;
            report_summary(
                execute_sweep(&config, a.run.out.as_deref()),
                a.run.out.is_some(),
            )
        }
        Command::Sweep { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
            let file: SweepFile =
                serde_json::from_str(&text).map_err(|e| CliError::Invalid(e.to_string()))?;
            let env_seed = match std::env::var("SEED") {
                Ok(s) => Some(
                    s.parse()
                        .map_err(|_| CliError::Invalid(format!("SEED={s} is not an integer")))?,
                ),
                Err(_) => None,
            };
            let cfg = file.to_config(env_seed)?;
            report_summary(
                execute_sweep(&cfg, file.output.as_deref()),
                file.output.is_some(),
            )
        }
        Command::Analyze(a) => {
            let report = analyze(&a)?;
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(io::stdout().lock(), "{text}")?;
            Ok(())
        }
    }
}

/// The summary goes to standard output unless the CSV already does.
fn report_summary(outcome: Result<String, CliError>, to_file: bool) -> Result<(), CliError> {
    let summary = outcome?;
    if to_file {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qdiscrim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

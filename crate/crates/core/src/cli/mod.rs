//! Command-line front end: `fit`, `simulate`, `sweep`, `experiment` and `mi`.

pub mod record;
pub mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::effects::sensitivity_sweep;
use crate::error::Error;
use crate::estimator::{
    bootstrap, estimands, fit, BootstrapOptions, BootstrapResult, Estimand, FitConfig, FitMode,
    FitResult,
};
use crate::links::LinkFunction;
use crate::model::Dataset;
use crate::synthlab::{
    generate, mutual_information, run_experiment, ExperimentAxis, MiTarget, SynthConfig,
};
use record::{
    to_json, write_atomic, write_atomic_with, BootstrapSummary, FitSummary, NamedInterval,
    NamedValue, RunRecord,
};
use table::{read_table, standardize, write_dataset, write_rows, InputTable, Standardization};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags or input data.
    Input(String),
    /// Filesystem or serialization failure.
    Io(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub(crate) fn io(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }

    fn flag(flag: &str, e: impl std::fmt::Display) -> Self {
        Self::Input(format!("{flag}: {e}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) | Self::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Successful command outcomes; maps onto exit codes 0 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::NotConverged => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "underreport",
    version,
    about = "Outcome-model estimation with an underreported binary exposure"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a CSV file and write a JSON run record.
    Fit(FitArgs),
    /// Generate a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Risk difference across a grid of assumed underreporting rates.
    Sweep(SweepArgs),
    /// Monte-Carlo comparison of adjusted and unadjusted estimators.
    Experiment(ExperimentArgs),
    /// Plug-in mutual information between the reported exposure and covariates.
    Mi(MiArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    KnownTau,
    Single,
    Dual,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Link for the exposure model: logit, probit or cloglog.
    #[arg(long, default_value = "logit")]
    pub link_propensity: LinkFunction,
    /// Link for the outcome model: logit, probit or cloglog.
    #[arg(long, default_value = "logit")]
    pub link_outcome: LinkFunction,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Iteration cap per restart.
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Z-score covariates before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Comma-separated covariate columns (default: every non-reserved column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Underreporting rate; required with `--mode known-tau`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of bootstrap replicates for confidence intervals.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub ci: f64,
    /// Run record path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Rate for a second report; adds an `a_obs2` column.
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub theta_a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub phi_scale: f64,
    /// Upper bound of the exposure probability; below 1 the model is misspecified.
    #[arg(long, default_value_t = 1.0)]
    pub saturation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Include the latent exposure as an `a_true` column.
    #[arg(long)]
    pub emit_truth_column: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    pub input: PathBuf,
    /// `start:stop:count` with inclusive ends, or a comma-separated list.
    #[arg(long, default_value = "0:0.65:14")]
    pub tau_grid: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub ci: f64,
    /// Band CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional JSON run record path.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisArg {
    Tau,
    Size,
    Mi,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Comma-separated grid values along the axis.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub phi_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub theta_a: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum TargetArg {
    #[value(name = "a_obs")]
    #[serde(rename = "a_obs")]
    AObs,
    #[value(name = "a_obs2")]
    #[serde(rename = "a_obs2")]
    AObs2,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MiArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "a_obs")]
    pub target: TargetArg,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Optional JSON run record path.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

/// Runs a parsed command. `argv` excludes the program name and is echoed
/// into run records.
pub fn run(cli: &Cli, argv: &[String]) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, argv),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a, argv),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Mi(a) => cmd_mi(a, argv),
    }
}

/// Parses and runs `args` (including the program name), returning the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match run(&cli, &argv) {
        Ok(outcome) => {
            if outcome == Outcome::NotConverged {
                eprintln!("warning: optimizer did not converge");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_mode(mode: ModeArg, tau: Option<f64>) -> Result<FitMode, CliError> {
    match (mode, tau) {
        (ModeArg::KnownTau, Some(tau)) => {
            if !(0.0..1.0).contains(&tau) {
                return Err(CliError::flag("--tau", format!("{tau} not in [0, 1)")));
            }
            Ok(FitMode::KnownTau { tau })
        }
        (ModeArg::KnownTau, None) => Err(CliError::input("--tau is required with --mode known-tau")),
        (_, Some(_)) => Err(CliError::input("--tau only applies to --mode known-tau")),
        (ModeArg::Single, None) => Ok(FitMode::SingleObs),
        (ModeArg::Dual, None) => Ok(FitMode::DualObs),
    }
}

fn fit_config(mode: FitMode, model: &ModelArgs) -> Result<FitConfig, CliError> {
    if model.restarts == 0 {
        return Err(CliError::input("--restarts: must be at least 1"));
    }
    Ok(FitConfig {
        restarts: model.restarts,
        max_iterations: model.max_iterations,
        seed: model.seed,
        ..FitConfig::new(mode).with_links(model.link_propensity, model.link_outcome)
    })
}

fn check_bootstrap(replicates: Option<usize>, ci: f64) -> Result<Option<BootstrapOptions>, CliError> {
    if !(ci > 0.0 && ci < 1.0) {
        return Err(CliError::flag("--ci", format!("{ci} not in (0, 1)")));
    }
    match replicates {
        None => Ok(None),
        Some(b) if b < 10 => Err(CliError::flag("--bootstrap", "need at least 10 replicates")),
        Some(b) => Ok(Some(BootstrapOptions {
            replicates: b,
            ci_level: ci,
        })),
    }
}

fn load(
    input: &Path,
    model: &ModelArgs,
) -> Result<(InputTable, Dataset, Option<Standardization>), CliError> {
    let table = read_table(input, model.covariates.as_deref())?;
    if model.standardize {
        let (data, s) = standardize(&table)?;
        Ok((table, data, Some(s)))
    } else {
        let data = table.data.clone();
        Ok((table, data, None))
    }
}

fn mode_flag(mode: FitMode) -> &'static str {
    match mode {
        FitMode::KnownTau { .. } => "--mode known-tau",
        FitMode::SingleObs => "--mode single",
        FitMode::DualObs => "--mode dual",
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn summarize_fit(
    res: &FitResult,
    data: &Dataset,
    names: &[String],
) -> Result<(FitSummary, Vec<NamedValue>), CliError> {
    let all = estimands(&res.params, data)?;
    let (effects, params): (Vec<_>, Vec<_>) = all.into_iter().partition(|(e, _)| {
        matches!(e, Estimand::RiskDifference | Estimand::OddsRatio)
    });
    let named = |v: Vec<(Estimand, f64)>| -> Vec<NamedValue> {
        v.into_iter()
            .map(|(e, value)| NamedValue {
                name: e.label(names),
                value,
            })
            .collect()
    };
    Ok((FitSummary::new(res, named(params)), named(effects)))
}

fn summarize_bootstrap(b: &BootstrapResult, names: &[String]) -> BootstrapSummary {
    BootstrapSummary {
        replicates: b.replicates,
        replicates_used: b.replicates_used,
        replicates_failed: b.replicates_failed,
        ci_level: b.ci_level,
        intervals: b
            .intervals
            .iter()
            .map(|i| NamedInterval {
                name: i.estimand.label(names),
                estimate: i.estimate,
                lower: i.lower,
                upper: i.upper,
            })
            .collect(),
    }
}

fn cmd_fit(args: &FitArgs, argv: &[String]) -> Result<Outcome, CliError> {
    let mode = resolve_mode(args.mode, args.tau)?;
    let config = fit_config(mode, &args.model)?;
    let boot = check_bootstrap(args.bootstrap, args.ci)?;
    let (table, data, standardization) = load(&args.input, &args.model)?;
    let names = &table.covariate_names;

    let mut record = RunRecord::new("fit", argv, args, config.seed);
    record.covariates = names.clone();
    record.standardization = standardization;

    let flag_err = |e: Error| match e {
        Error::ModeMismatch(m) => CliError::flag(mode_flag(mode), m),
        other => other.into(),
    };
    let mut bootstrap_failed = false;
    let res = match boot {
        None => fit(&data, &config).map_err(flag_err)?,
        Some(opts) => match bootstrap(&data, &config, opts.replicates, opts.ci_level, config.seed) {
            Ok(b) => {
                record.bootstrap = Some(summarize_bootstrap(&b, names));
                b.point
            }
            Err(Error::Bootstrap(msg)) => {
                bootstrap_failed = true;
                record.warnings.push(format!("bootstrap: {msg}"));
                fit(&data, &config).map_err(flag_err)?
            }
            Err(e) => return Err(flag_err(e)),
        },
    };
    let (summary, effects) = summarize_fit(&res, &data, names)?;
    record.warnings.extend(res.warnings.iter().cloned());
    if res.boundary_suspect {
        record
            .warnings
            .push("estimated underreporting rate is at the boundary".into());
    }
    record.fit = Some(summary);
    record.estimands = effects;
    emit(args.out.as_deref(), &to_json(&record)?)?;
    Ok(if res.converged && !bootstrap_failed {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

/// Sidecar path for simulation truth: `data.csv` becomes `data.truth.json`.
pub fn truth_path(out: &Path) -> PathBuf {
    let s = out.to_string_lossy();
    match s.strip_suffix(".csv") {
        Some(stem) => PathBuf::from(format!("{stem}.truth.json")),
        None => PathBuf::from(format!("{s}.truth.json")),
    }
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a SynthConfig,
    truth: &'a crate::model::FullParams,
    true_rd: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let config = SynthConfig {
        n: args.n,
        d: args.d,
        tau: args.tau,
        tau2: args.tau2,
        theta_a: args.theta_a,
        phi_scale: args.phi_scale,
        saturation: args.saturation,
        seed: args.seed,
    };
    config.validate().map_err(CliError::from)?;
    let sample = generate(&config)?;
    let truth_col = args.emit_truth_column.then_some(&sample.a_true[..]);
    write_atomic_with(&args.out, |f| write_dataset(f, &sample.data, truth_col))?;
    let truth = TruthRecord {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &config,
        truth: &sample.truth,
        true_rd: sample.true_rd,
    };
    write_atomic(&truth_path(&args.out), to_json(&truth)?.as_bytes())?;
    Ok(Outcome::Success)
}

/// Parses `start:stop:count` (inclusive) or a comma-separated list.
pub fn parse_tau_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::flag("--tau-grid", m);
    let num = |s: &str| -> Result<f64, CliError> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("'{}' is not a number", s.trim())))
    };
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("'{spec}' is not start:stop:count")));
        }
        let (start, stop) = (num(parts[0])?, num(parts[1])?);
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("count '{}' is not a positive integer", parts[2])))?;
        match count {
            0 => return Err(bad("count must be at least 1".into())),
            1 => vec![start],
            _ => (0..count)
                .map(|i| {
                    if i == count - 1 {
                        stop
                    } else {
                        start + (stop - start) * i as f64 / (count - 1) as f64
                    }
                })
                .collect(),
        }
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    for &t in &grid {
        if !(0.0..1.0).contains(&t) {
            return Err(bad(format!("{t} not in [0, 1)")));
        }
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("values must be strictly increasing".into()));
    }
    Ok(grid)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_sweep(args: &SweepArgs, argv: &[String]) -> Result<Outcome, CliError> {
    let grid = parse_tau_grid(&args.tau_grid)?;
    let boot = check_bootstrap(args.bootstrap, args.ci)?;
    let config = fit_config(FitMode::KnownTau { tau: grid[0] }, &args.model)?;
    let (table, data, standardization) = load(&args.input, &args.model)?;
    let band = sensitivity_sweep(&data, &config, &grid, boot)?;

    let rows: Vec<Vec<String>> = (0..band.len())
        .map(|i| {
            vec![
                band.tau_grid[i].to_string(),
                band.rd_estimates[i].to_string(),
                opt_cell(band.ci_lower.as_ref().and_then(|v| v[i])),
                opt_cell(band.ci_upper.as_ref().and_then(|v| v[i])),
                band.converged[i].to_string(),
            ]
        })
        .collect();
    let header = ["tau", "rd", "ci_lo", "ci_hi", "converged"];
    match &args.out {
        Some(p) => write_atomic_with(p, |f| write_rows(f, &header, &rows))?,
        None => write_rows(std::io::stdout().lock(), &header, &rows)?,
    }
    for w in &band.warnings {
        log::warn!("{w}");
    }
    let all_converged = band.converged.iter().all(|&c| c);
    if let Some(path) = &args.record {
        let mut record = RunRecord::new("sweep", argv, args, config.seed);
        record.covariates = table.covariate_names.clone();
        record.standardization = standardization;
        record.warnings = band.warnings.clone();
        record.sweep = Some(band);
        write_atomic(path, to_json(&record)?.as_bytes())?;
    }
    Ok(if all_converged {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

fn parse_list(flag: &str, spec: &str) -> Result<Vec<f64>, CliError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::flag(flag, format!("'{}' is not a number", s.trim())))
        })
        .collect()
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<Outcome, CliError> {
    let grid = parse_list("--grid", &args.grid)?;
    let axis = match args.axis {
        AxisArg::Tau => ExperimentAxis::TauSweep,
        AxisArg::Size => ExperimentAxis::SizeSweep,
        AxisArg::Mi => ExperimentAxis::MiSweep,
    };
    let base = SynthConfig {
        n: args.n,
        d: args.d,
        tau: args.tau,
        tau2: None,
        theta_a: args.theta_a,
        phi_scale: args.phi_scale,
        saturation: 1.0,
        seed: args.seed,
    };
    if args.restarts == 0 {
        return Err(CliError::input("--restarts: must be at least 1"));
    }
    let fit_config = FitConfig {
        restarts: args.restarts,
        ..FitConfig::new(FitMode::SingleObs)
    };
    let report = run_experiment(axis, &grid, &base, args.replicates, &fit_config, args.seed)
        .map_err(|e| CliError::flag("--grid/--replicates", e))?;
    let rows: Vec<Vec<String>> = (0..report.grid.len())
        .map(|i| {
            vec![
                report.grid[i].to_string(),
                report.mse_adjusted[i].to_string(),
                report.mse_unadjusted[i].to_string(),
                report.n_failed[i].to_string(),
            ]
        })
        .collect();
    let header = ["grid_value", "mse_adjusted", "mse_unadjusted", "n_failed"];
    write_atomic_with(&with_suffix(&args.out_prefix, ".csv"), |f| {
        write_rows(f, &header, &rows)
    })?;
    write_atomic(
        &with_suffix(&args.out_prefix, ".json"),
        to_json(&report)?.as_bytes(),
    )?;
    for (g, flagged) in report.grid.iter().zip(&report.flagged) {
        if *flagged {
            log::warn!("more than 20% of replicates failed at grid value {g}");
        }
    }
    Ok(Outcome::Success)
}

fn cmd_mi(args: &MiArgs, argv: &[String]) -> Result<Outcome, CliError> {
    let table = read_table(&args.input, args.covariates.as_deref())?;
    let target = match args.target {
        TargetArg::AObs => MiTarget::ObsExposure,
        TargetArg::AObs2 => MiTarget::SecondObsExposure,
    };
    let mi = mutual_information(&table.data, target)
        .map_err(|e| CliError::flag("--target", e))?;
    println!("{mi:.6}");
    if let Some(path) = &args.record {
        let mut record = RunRecord::new("mi", argv, args, 0);
        record.covariates = table.covariate_names.clone();
        record.mutual_information = Some(mi);
        write_atomic(path, to_json(&record)?.as_bytes())?;
    }
    Ok(Outcome::Success)
}

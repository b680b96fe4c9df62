//! Command-line front end. Every command is a pure function of the config
//! file, the seed and its input files.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::config::{ConfigError, RunConfig, SCHEMA_VERSION};
use crate::data::{DataError, DayRange, ObservedSeries, QATAR_CSV};
use crate::diagnostics::diagnostics;
use crate::dynamics::ParameterVector;
use crate::fit::{self, FitError};
use crate::optimize::OptimizeError;
use crate::output::{self, write_atomic, OutputError};
use crate::sampler::{PosteriorSamples, RNG_ALGORITHM};

pub const DEFAULT_CONFIG: &str = "seirdfit.toml";

#[derive(Debug, Parser)]
#[command(name = "seirdfit", version, about = "Fit and forecast an intervention-aware SEIRD model")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the initial Exposed count E(0).
    #[arg(long, global = true)]
    pub initial_exposed: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mode search, tuning and sampling; writes samples and diagnostics.
    Fit,
    /// Parameter summaries, sequential contrasts and regime transmission rates.
    Analyze {
        /// Samples CSV; defaults to samples.csv in the output directory.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Posterior-predictive bands, fit metrics and the peak-day interval.
    Predict {
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Days after day 0; defaults to the configured horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Integrates the mean system once at fixed parameters.
    Simulate {
        /// TOML file with `alpha`, `beta_a`, `beta`, `gamma`, `eta`;
        /// defaults to the reference Qatar estimates.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Writes a config with every default spelled out, plus the bundled data.
    Init {
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        match e {
            OutputError::Write { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Optimize(OptimizeError::InfeasibleStart) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::TooFewSamples { .. }
            | AnalysisError::ScheduleMismatch { .. }
            | AnalysisError::NoInterventions
            | AnalysisError::NoDraws
            | AnalysisError::ZeroVariance => CliError::Data(e.to_string()),
            AnalysisError::HorizonTooShort { .. } | AnalysisError::BadRange { .. } => {
                CliError::Config(e.to_string())
            }
            AnalysisError::Integration { .. } | AnalysisError::BadRate(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

/// Runs the parsed command on a pool of `cli.workers` threads.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Init { force } => cmd_init(cli, *force),
        Command::Fit => cmd_fit(&load_config(cli)?),
        Command::Analyze { samples } => {
            let config = load_config(cli)?;
            let path = samples_path(&config, samples);
            cmd_analyze(&config, &path)
        }
        Command::Predict { samples, horizon } => {
            let config = load_config(cli)?;
            let path = samples_path(&config, samples);
            cmd_predict(&config, &path, horizon.unwrap_or(config.horizon))
        }
        Command::Simulate { params, horizon } => {
            let config = load_config(cli)?;
            let params = match params {
                Some(p) => read_params(p)?,
                None => ParameterVector::qatar_reference(),
            };
            cmd_simulate(&config, &params, horizon.unwrap_or(config.horizon))
        }
    })
}

/// Config file (or defaults) with command-line overrides applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.sampler.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(e0) = cli.initial_exposed {
        config.init.e = e0;
    }
    config.validate()?;
    Ok(config)
}

fn samples_path(config: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| config.output_dir.join("samples.csv"))
}

fn read_params(path: &Path) -> Result<ParameterVector, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid parameter file {}: {e}", path.display())))
}

fn to_json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifacts serialize");
    bytes.push(b'\n');
    bytes
}

fn manifest(command: &str, config: &RunConfig, artifacts: &[&str], extra: Value) -> Value {
    let mut m = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "rng": RNG_ALGORITHM,
        "seed": config.sampler.seed,
        "config": config,
        "artifacts": artifacts,
    });
    if let (Value::Object(m), Value::Object(extra)) = (&mut m, extra) {
        m.extend(extra);
    }
    m
}

fn data_summary(config: &RunConfig, obs: &ObservedSeries) -> Value {
    json!({
        "path": config.data_path.as_ref().map(|p| p.display().to_string()),
        "day0": obs.day0_date,
        "days": obs.len(),
        "train_len": obs.train_len,
        "test_len": obs.test_len,
    })
}

/// Writes every artifact only after all of them have been computed.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn cmd_init(cli: &Cli, force: bool) -> Result<(), CliError> {
    let path = cli
        .config
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG));
    let data = path.with_file_name("qatar.csv");
    for p in [&path, &data] {
        if p.exists() && !force {
            return Err(CliError::Config(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    let mut config = RunConfig {
        data_path: Some(PathBuf::from("qatar.csv")),
        ..RunConfig::default()
    };
    if let Some(seed) = cli.seed {
        config.sampler.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(e0) = cli.initial_exposed {
        config.init.e = e0;
    }
    write_atomic(&data, QATAR_CSV.as_bytes())?;
    write_atomic(&path, config.to_toml().as_bytes())?;
    Ok(())
}

pub fn cmd_fit(config: &RunConfig) -> Result<(), CliError> {
    let obs = config.observed()?;
    let ctx = config.context(obs)?;
    let start = config.start_point()?;
    let outcome = fit::fit(&ctx, &start, &config.sampler, &config.fit)?;
    let samples = &outcome.samples;
    if samples.log_post.iter().any(|lp| !lp.is_finite()) {
        return Err(CliError::Numeric("retained draw outside the posterior support".into()));
    }

    let report = diagnostics(samples);
    let diag = json!({
        "schema_version": SCHEMA_VERSION,
        "acceptance_rate": report.acceptance_rate,
        "n_samples": report.n_samples,
        "evaluation_failures": report.evaluation_failures,
        "trace_file": "samples.csv",
        "parameters": report.parameters,
    });
    let names = ctx.parameter_names();
    let named = |v: &[f64]| -> Value {
        Value::Object(names.iter().cloned().zip(v.iter().map(|x| json!(x))).collect())
    };
    let extra = json!({
        "data": data_summary(config, &ctx.obs),
        "mode_search": {
            "candidate_log_post": outcome.candidates.iter().map(|c| c.log_post).collect::<Vec<_>>(),
            "best_log_post": outcome.mode_log_post,
            "mode": named(&outcome.mode),
        },
        "tuning": {
            "rounds": outcome.tuning,
            "final_scales": named(&outcome.tuned_config.proposal_scales),
            "diagonal_fallback": outcome.diagonal_fallback,
        },
        "acceptance_rate": samples.accept_rate,
    });
    let artifacts = ["samples.csv", "diagnostics.json", "fit_manifest.json"];
    let m = manifest("fit", config, &artifacts, extra);
    write_all(
        &config.output_dir,
        &[
            ("samples.csv", output::samples_to_csv(samples).into_bytes()),
            ("diagnostics.json", to_json_bytes(&diag)),
            ("fit_manifest.json", to_json_bytes(&m)),
        ],
    )
}

/// Reads a samples file and checks it against the configured schedule.
pub fn load_samples(config: &RunConfig, path: &Path) -> Result<PosteriorSamples, CliError> {
    let samples = output::read_samples(path)?;
    let expected = ParameterVector::names(config.schedule.change_days.len());
    if samples.column_names != expected {
        return Err(CliError::Data(format!(
            "samples columns {:?} do not match the schedule's parameters {:?}",
            samples.column_names, expected
        )));
    }
    if let Some(i) = (0..samples.n_samples()).find(|i| !samples.parameters(*i).in_support()) {
        return Err(CliError::Data(format!(
            "draw {} lies outside the posterior support",
            i + 1
        )));
    }
    Ok(samples)
}

pub fn cmd_analyze(config: &RunConfig, samples_path: &Path) -> Result<(), CliError> {
    let samples = load_samples(config, samples_path)?;
    let schedule = config.schedule()?;
    let summary = analysis::summarize(&samples)?;
    let contrasts = if schedule.n_interventions() > 0 {
        Some(analysis::contrasts(&samples)?)
    } else {
        None
    };
    let rates = analysis::interval_rates(&samples, &schedule)?;
    let table = |t: &analysis::SummaryTable| {
        to_json_bytes(&json!({
            "schema_version": SCHEMA_VERSION,
            "n_samples": samples.n_samples(),
            "rows": t.rows,
        }))
    };
    let mut files = vec![
        ("summary.json", table(&summary)),
        ("summary.csv", summary.to_csv().into_bytes()),
        ("interval_rates.json", table(&rates)),
        ("interval_rates.csv", rates.to_csv().into_bytes()),
    ];
    if let Some(c) = &contrasts {
        files.push(("contrasts.json", table(c)));
        files.push(("contrasts.csv", c.to_csv().into_bytes()));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).chain(["analyze_manifest.json"]).collect();
    let m = manifest(
        "analyze",
        config,
        &names,
        json!({ "samples": samples_path.display().to_string() }),
    );
    files.push(("analyze_manifest.json", to_json_bytes(&m)));
    write_all(&config.output_dir, &files)
}

/// Metrics and artifacts produced by `predict`.
#[derive(Debug, Clone, Serialize)]
pub struct PredictSummary {
    pub schema_version: u32,
    pub horizon: usize,
    pub seed: u64,
    pub pseudo_r2: Option<f64>,
    pub predictive_r2: Option<f64>,
    pub train_containment: Option<f64>,
    pub test_containment: Option<f64>,
    pub peak_interval: analysis::PeakInterval,
}

pub fn cmd_predict(config: &RunConfig, samples_path: &Path, horizon: usize) -> Result<(), CliError> {
    let obs = config.observed()?;
    if horizon < obs.train_len {
        return Err(CliError::Config(format!(
            "horizon {horizon} is shorter than the training window ({} days)",
            obs.train_len
        )));
    }
    let samples = load_samples(config, samples_path)?;
    let schedule = config.schedule()?;
    let predictive = analysis::posterior_predictive(
        &samples,
        &schedule,
        &config.init,
        &config.integrator()?,
        horizon,
        config.sampler.seed,
    )?;
    let bands = &predictive.bands;
    let train = DayRange::new(1, obs.train_len);
    let test = obs.test_range();
    let covered = |r: DayRange| !r.is_empty() && bands.covers(r) && r.end <= obs.len();
    let metric = |r: DayRange, f: fn(&analysis::PredictiveBands, &ObservedSeries, DayRange) -> Result<f64, AnalysisError>| {
        if covered(r) {
            f(bands, &obs, r).map(Some)
        } else {
            Ok(None)
        }
    };
    let new = analysis::new_infections(&predictive.draws)?;
    let trajectories: Vec<_> = predictive.draws.iter().map(|d| &d.mean).collect();
    let peak = analysis::peak_interval(&trajectories)?;
    let summary = PredictSummary {
        schema_version: SCHEMA_VERSION,
        horizon,
        seed: config.sampler.seed,
        pseudo_r2: metric(train, analysis::pseudo_r2)?,
        predictive_r2: metric(test, analysis::pseudo_r2)?,
        train_containment: metric(train, analysis::band_containment)?,
        test_containment: metric(test, analysis::band_containment)?,
        peak_interval: analysis::PeakInterval {
            peak_days: Vec::new(),
            ..peak.clone()
        },
    };

    let mut peak_csv = String::from("peak_day\n");
    for d in &peak.peak_days {
        peak_csv.push_str(&format!("{d}\n"));
    }
    let mut files = vec![
        ("bands.csv", bands.to_csv().into_bytes()),
        ("new_infections.csv", new.to_csv().into_bytes()),
        ("peak_days.csv", peak_csv.into_bytes()),
        (
            "peak_interval.json",
            to_json_bytes(&json!({
                "schema_version": SCHEMA_VERSION,
                "lower": peak.lower,
                "upper": peak.upper,
                "horizon": peak.horizon,
                "boundary_fraction": peak.boundary_fraction,
                "horizon_limited": peak.horizon_limited,
            })),
        ),
        ("predict_metrics.json", to_json_bytes(&summary)),
    ];
    if let Some(b) = bands.restrict(DayRange::new(0, obs.train_len)) {
        files.push(("bands_fit.csv", b.to_csv().into_bytes()));
    }
    if let Some(b) = bands.restrict(test) {
        files.push(("bands_test.csv", b.to_csv().into_bytes()));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).chain(["predict_manifest.json"]).collect();
    let m = manifest(
        "predict",
        config,
        &names,
        json!({
            "samples": samples_path.display().to_string(),
            "horizon": horizon,
            "data": data_summary(config, &obs),
        }),
    );
    files.push(("predict_manifest.json", to_json_bytes(&m)));
    write_all(&config.output_dir, &files)
}

pub fn cmd_simulate(config: &RunConfig, params: &ParameterVector, horizon: usize) -> Result<(), CliError> {
    let schedule = config.schedule()?;
    if params.alpha.len() != schedule.n_interventions() + 1 {
        return Err(CliError::Config(format!(
            "{} alpha values given, schedule needs {}",
            params.alpha.len(),
            schedule.n_interventions() + 1
        )));
    }
    if !params.in_support() {
        return Err(CliError::Config("parameters are outside the model's support".into()));
    }
    let traj = config
        .integrator()?
        .integrate(params, &schedule, &config.init, horizon)
        .map_err(|e| match e {
            crate::dynamics::DynamicsError::EmptyHorizon => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        })?;
    let m = manifest(
        "simulate",
        config,
        &["trajectory.csv", "simulate_manifest.json"],
        json!({
            "params": params,
            "horizon": horizon,
            "peak_active_day": traj.peak_active_day(),
        }),
    );
    write_all(
        &config.output_dir,
        &[
            ("trajectory.csv", traj.to_csv().into_bytes()),
            ("simulate_manifest.json", to_json_bytes(&m)),
        ],
    )
}

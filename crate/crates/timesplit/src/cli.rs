//! Command-line entry point: reproducible estimation experiments plus
//! model analysis and validation utilities.
//!
//! Subcommands:
//!
//! * `estimate` — parse, compile, flatten, build the chosen importance
//!   function and estimate the time-bounded failure probability.
//! * `analyze`  — export the location graph, the backward class graph
//!   and per-location class/importance tables.
//! * `validate` — dry-run the frontend and report counts/diagnostics.
//!
//! Options may come from a `key=value` config file (`--config`);
//! explicit flags win. `TIMESPLIT_SEED` is the seed fallback.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::importance::{build_agnostic, build_time_sensitive, ImportanceFn};
use crate::kepler;
use crate::model::{FlatModel, FlattenOptions, Severity};
use crate::res::{self, Budget};
use crate::scg::ExpandOptions;
use crate::sim;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MODEL_ERROR: i32 = 2;
pub const EXIT_BUDGET_DIAGNOSTIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cmc,
    ResNotime,
    ResTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Fully resolved experiment configuration, echoed in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub bound: f64,
    pub method: Method,
    pub depth: u32,
    pub effort: u32,
    pub runs: Option<u64>,
    pub seconds: Option<f64>,
    pub seed: u64,
    /// Interval miss probability δ; intervals are at level 1−δ.
    pub confidence: f64,
    pub clip_quantile: f64,
    pub workers: usize,
    pub output: OutputFormat,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Model(String),
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: String },
}

#[derive(Parser)]
#[command(
    name = "timesplit",
    about = "Rare-event estimation for repairable dynamic fault trees",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the probability of system failure within the time bound.
    Estimate(Box<EstimateArgs>),
    /// Export the location graph, backward class graph and importance tables.
    Analyze(AnalyzeArgs),
    /// Parse, compile and flatten a model, reporting diagnostics and counts.
    Validate(ValidateArgs),
}

#[derive(Args, Default)]
struct EstimateArgs {
    /// Kepler .dft model file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Time bound of the reachability property
    #[arg(long)]
    bound: Option<f64>,
    /// cmc | res-notime | res-time
    #[arg(long)]
    method: Option<String>,
    /// Backward expansion depth (res-time)
    #[arg(long)]
    depth: Option<u32>,
    /// Fixed Effort runs per importance level
    #[arg(long)]
    effort: Option<u32>,
    /// Budget: total number of simulation paths
    #[arg(long)]
    runs: Option<u64>,
    /// Budget: wall-clock seconds (alternative to --runs)
    #[arg(long)]
    seconds: Option<f64>,
    /// RNG seed (fallback: TIMESPLIT_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Interval miss probability delta
    #[arg(long)]
    confidence: Option<f64>,
    /// Support-band quantile for unbounded distributions
    #[arg(long = "clip-quantile")]
    clip_quantile: Option<f64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// json | csv
    #[arg(long)]
    output: Option<String>,
    /// Write the backward class graph to PREFIX.json / PREFIX.dot
    #[arg(long = "export-scg")]
    export_scg: Option<PathBuf>,
    /// Write one reference trajectory as CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// key=value config file; explicit flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Backward expansion depth
    #[arg(long, default_value_t = 10)]
    depth: u32,
    #[arg(long = "clip-quantile", default_value_t = 1e-5)]
    clip_quantile: f64,
    /// Output directory for the exported artifacts
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "clip-quantile", default_value_t = 1e-5)]
    clip_quantile: f64,
}

/// Parses argv, dispatches, prints the report, returns the exit code.
pub fn main_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_MODEL_ERROR } else { EXIT_OK };
        }
    };
    match cli.cmd {
        Cmd::Estimate(args) => match resolve_config(&args) {
            Ok(config) => match cmd_estimate(&config, args.export_scg.as_deref(), args.trace.as_deref()) {
                Ok((report, code)) => {
                    println!("{report}");
                    code
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_MODEL_ERROR
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_MODEL_ERROR
            }
        },
        Cmd::Analyze(args) => {
            match cmd_analyze(&args.model, args.depth, args.clip_quantile, &args.out_dir) {
                Ok(summary) => {
                    println!("{summary}");
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_MODEL_ERROR
                }
            }
        }
        Cmd::Validate(args) => match cmd_validate(&args.model, args.clip_quantile) {
            Ok(report) => {
                println!("{report}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_MODEL_ERROR
            }
        },
    }
}

fn read_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    let mut out = HashMap::new();
    for (lno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                lno + 1
            )));
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_from_map<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse `{v}`"))),
    }
}

/// Merges flags, config file and environment into a full [`RunConfig`].
fn resolve_config(args: &EstimateArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => HashMap::new(),
    };
    for key in file.keys() {
        const KNOWN: [&str; 12] = [
            "model", "bound", "method", "depth", "effort", "runs", "seconds", "seed",
            "confidence", "clip-quantile", "workers", "output",
        ];
        if !KNOWN.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("unknown config key {key}")));
        }
    }

    let model = args
        .model
        .clone()
        .or(file.get("model").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("missing --model".into()))?;
    let bound = match args.bound.or(parse_from_map(&file, "bound")?) {
        Some(b) if b > 0.0 => b,
        Some(_) => return Err(CliError::Usage("--bound must be positive".into())),
        None => return Err(CliError::Usage("missing --bound".into())),
    };
    let method = match args
        .method
        .clone()
        .or(file.get("method").cloned())
        .unwrap_or_else(|| "cmc".into())
        .as_str()
    {
        "cmc" => Method::Cmc,
        "res-notime" => Method::ResNotime,
        "res-time" => Method::ResTime,
        other => {
            return Err(CliError::Usage(format!(
                "unknown method {other} (expected cmc, res-notime or res-time)"
            )))
        }
    };
    let depth = args.depth.or(parse_from_map(&file, "depth")?).unwrap_or(10);
    let effort = args.effort.or(parse_from_map(&file, "effort")?).unwrap_or(16);
    if effort < 2 {
        return Err(CliError::Usage("--effort must be at least 2".into()));
    }
    let runs = args.runs.or(parse_from_map(&file, "runs")?);
    let seconds = args.seconds.or(parse_from_map(&file, "seconds")?);
    match (runs, seconds) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--runs and --seconds are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Usage("specify a budget: --runs N or --seconds T".into()))
        }
        _ => {}
    }
    let seed = match args.seed.or(parse_from_map(&file, "seed")?) {
        Some(s) => s,
        None => match std::env::var("TIMESPLIT_SEED") {
            Ok(v) => v
                .parse()
                .map_err(|_| CliError::Usage("TIMESPLIT_SEED must be an integer".into()))?,
            Err(_) => 0,
        },
    };
    let confidence = args
        .confidence
        .or(parse_from_map(&file, "confidence")?)
        .unwrap_or(0.05);
    if !(0.0..1.0).contains(&confidence) || confidence == 0.0 {
        return Err(CliError::Usage("--confidence must be in (0,1)".into()));
    }
    let clip_quantile = args
        .clip_quantile
        .or(parse_from_map(&file, "clip-quantile")?)
        .unwrap_or(crate::model::DEFAULT_CLIP_QUANTILE);
    let workers = args.workers.or(parse_from_map(&file, "workers")?).unwrap_or(0);
    let output = match args
        .output
        .clone()
        .or(file.get("output").cloned())
        .unwrap_or_else(|| "json".into())
        .as_str()
    {
        "json" => OutputFormat::Json,
        "csv" => OutputFormat::Csv,
        other => return Err(CliError::Usage(format!("unknown output format {other}"))),
    };
    Ok(RunConfig {
        model: model.display().to_string(),
        bound,
        method,
        depth,
        effort,
        runs,
        seconds,
        seed,
        confidence,
        clip_quantile,
        workers,
        output,
    })
}

/// Frontend pipeline: read, parse, compile, flatten. Warnings go to
/// stderr; errors become [`CliError::Model`].
pub fn load_model(path: &Path, clip_quantile: f64) -> Result<FlatModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    let dft = kepler::parse(&text)
        .map_err(|e| CliError::Model(format!("{}: {e}", path.display())))?;
    let network = kepler::compile(&dft, clip_quantile);
    for d in network.validate() {
        if d.severity == Severity::Warning {
            eprintln!("{}: {d}", path.display());
        }
    }
    network
        .flatten(&FlattenOptions::default())
        .map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
}

fn init_workers(workers: usize) {
    if workers > 0 {
        // the global pool can only be set once per process; later calls
        // keep the existing pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn build_importance(
    model: &FlatModel,
    config: &RunConfig,
) -> Result<Option<ImportanceFn>, CliError> {
    match config.method {
        Method::Cmc => Ok(None),
        Method::ResNotime => build_agnostic(model)
            .map(Some)
            .map_err(|e| CliError::Model(e.to_string())),
        Method::ResTime => build_time_sensitive(model, config.depth, &ExpandOptions::default())
            .map(Some)
            .map_err(|e| CliError::Model(e.to_string())),
    }
}

/// Runs one estimation experiment. Returns the rendered report and the
/// process exit code (0, or 3 when too few replications completed for a
/// confidence interval).
pub fn cmd_estimate(
    config: &RunConfig,
    export_scg: Option<&Path>,
    trace: Option<&Path>,
) -> Result<(String, i32), CliError> {
    init_workers(config.workers);
    let model = load_model(Path::new(&config.model), config.clip_quantile)?;
    let imp = build_importance(&model, config)?;
    let budget = match (config.runs, config.seconds) {
        (Some(n), None) => Budget::Runs(n),
        (None, Some(t)) => Budget::Seconds(t),
        _ => return Err(CliError::Usage("budget must be exactly one of runs/seconds".into())),
    };
    if let (Some(prefix), Some(f)) = (export_scg, &imp) {
        if let Some(index) = f.index() {
            write_text(&prefix.with_extension("json"), &index.to_json(&model).to_string())?;
            write_text(&prefix.with_extension("dot"), &index.to_dot(&model))?;
        }
    }
    if let Some(path) = trace {
        write_trace(&model, imp.as_ref(), config, path)?;
    }
    let estimate = match (&config.method, &imp) {
        (Method::Cmc, _) => res::cmc(&model, config.bound, budget, config.seed, config.confidence)
            .map_err(|e| CliError::Model(e.to_string()))?,
        (m, Some(f)) => {
            let label = match m {
                Method::ResNotime => "res-notime".to_string(),
                Method::ResTime => format!("res-time-{}", config.depth),
                Method::Cmc => unreachable!(),
            };
            res::res_estimate(
                &model,
                f,
                &label,
                config.effort,
                config.bound,
                budget,
                config.seed,
                config.confidence,
            )
            .map_err(|e| CliError::Model(e.to_string()))?
        }
        _ => unreachable!("importance function exists for splitting methods"),
    };
    let diagnostic = config.method != Method::Cmc && estimate.replications < 2;
    let report = match config.output {
        OutputFormat::Json => {
            let mut v = serde_json::json!({
                "method": estimate.method,
                "estimate": estimate.value,
                "half_width": estimate.half_width,
                "confidence": estimate.confidence,
                "runs": estimate.runs,
                "replications": estimate.replications,
                "wall_time_s": estimate.wall_time_s,
                "seed": estimate.seed,
                "depth": config.depth,
                "effort": config.effort,
                "config": config,
            });
            if estimate.half_width.is_infinite() {
                v["half_width"] = serde_json::json!("inf");
            }
            serde_json::to_string_pretty(&v).expect("report serializes")
        }
        OutputFormat::Csv => {
            let eps = if estimate.half_width.is_finite() {
                estimate.half_width.to_string()
            } else {
                "inf".to_string()
            };
            format!(
                "method,est,eps,runs,time\n{},{},{},{},{}",
                estimate.method, estimate.value, eps, estimate.runs, estimate.wall_time_s
            )
        }
    };
    Ok((report, if diagnostic { EXIT_BUDGET_DIAGNOSTIC } else { EXIT_OK }))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })
}

/// One reference trajectory (stream 0) as CSV.
fn write_trace(
    model: &FlatModel,
    imp: Option<&ImportanceFn>,
    config: &RunConfig,
    path: &Path,
) -> Result<(), CliError> {
    let mut rng = sim::stream_rng(config.seed, 0);
    let mut state = sim::sample_initial(model, &mut rng);
    let mut out = String::from("step,age,timer,location,importance\n");
    let importance_of = |s: &sim::SimState| {
        imp.map(|f| f.importance(s.location, &s.tau)).unwrap_or(0)
    };
    let _ = writeln!(
        out,
        "0,{},-,{},{}",
        state.age,
        state.location.0,
        importance_of(&state)
    );
    for step_no in 1..=100_000u64 {
        if model.location(state.location).is_target {
            break;
        }
        let dt = state.tau.iter().cloned().fold(f64::INFINITY, f64::min);
        if model.location(state.location).active.is_empty() || state.age + dt > config.bound {
            break;
        }
        let Some((next, fired)) = sim::step(model, &state, &mut rng) else {
            break;
        };
        state = next;
        let _ = writeln!(
            out,
            "{step_no},{},{},{},{}",
            state.age,
            model.timer(fired).name,
            state.location.0,
            importance_of(&state)
        );
    }
    write_text(path, &out)
}

/// Exports analysis artifacts and returns a short summary.
pub fn cmd_analyze(
    model_path: &Path,
    depth: u32,
    clip_quantile: f64,
    out_dir: &Path,
) -> Result<String, CliError> {
    let model = load_model(model_path, clip_quantile)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io {
        path: out_dir.display().to_string(),
        err: e.to_string(),
    })?;
    write_text(&out_dir.join("locations.dot"), &model.to_dot())?;
    write_text(&out_dir.join("model.json"), &model.to_json().to_string())?;

    let index = crate::scg::backward_expand(&model, depth, &ExpandOptions::default())
        .map_err(|e| CliError::Model(e.to_string()))?;
    write_text(&out_dir.join("scg.json"), &index.to_json(&model).to_string())?;
    write_text(&out_dir.join("scg.dot"), &index.to_dot(&model))?;

    let mut classes_csv = String::from("location,label,omega,importance,classes\n");
    for (loc, omega, count) in index.class_histogram() {
        let _ = writeln!(
            classes_csv,
            "{},{},{},{},{}",
            loc.0,
            model.location_label(loc),
            omega,
            index.d_cap - omega,
            count
        );
    }
    write_text(&out_dir.join("classes.csv"), &classes_csv)?;

    let agnostic = build_agnostic(&model).map_err(|e| CliError::Model(e.to_string()))?;
    let mut agn_csv = String::from("location,label,importance\n");
    for loc in &model.locations {
        let _ = writeln!(
            agn_csv,
            "{},{},{}",
            loc.id.0,
            model.location_label(loc.id),
            agnostic.importance(loc.id, &[])
        );
    }
    write_text(&out_dir.join("agnostic.csv"), &agn_csv)?;

    Ok(format!(
        "analyzed {}: {} locations, {} edges, {} timers, {} backward classes at depth {} (artifacts in {})",
        model_path.display(),
        model.locations.len(),
        model.edges.len(),
        model.timers.len(),
        index.class_count(),
        depth,
        out_dir.display()
    ))
}

/// Full frontend dry run; errors yield `Err`, warnings are listed in the
/// report.
pub fn cmd_validate(model_path: &Path, clip_quantile: f64) -> Result<String, CliError> {
    let text = fs::read_to_string(model_path).map_err(|e| CliError::Io {
        path: model_path.display().to_string(),
        err: e.to_string(),
    })?;
    let dft = kepler::parse(&text)
        .map_err(|e| CliError::Model(format!("{}: {e}", model_path.display())))?;
    let network = kepler::compile(&dft, clip_quantile);
    let diags = network.validate();
    let mut lines = Vec::new();
    for d in &diags {
        lines.push(format!("{}: {}", model_path.display(), d));
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(CliError::Model(lines.join("\n")));
    }
    let model = network
        .flatten(&FlattenOptions::default())
        .map_err(|e| CliError::Model(format!("{}: {e}", model_path.display())))?;
    lines.push(format!(
        "OK: {} locations, {} edges, {} timers, {} target locations",
        model.locations.len(),
        model.edges.len(),
        model.timers.len(),
        model.target_locations().count()
    ));
    Ok(lines.join("\n"))
}

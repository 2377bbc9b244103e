//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 domain failure (flagged repair or
//! unresolved search), 4 internal error. Each subcommand prints one summary
//! line on stdout; everything else goes to stderr. Numbers are printed with
//! [`fmt_num`].

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::cspace::first_conflict;
use crate::export::{export_results, timing_harness, ExportError, ResultBundle};
use crate::fttr::{run_pipeline, FttrResult, Termination};
use crate::repair::{plan, RepairError};
use crate::scenario::{load_scenario_with, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "trajrepair",
    version,
    about = "Trajectory repair and feasible time-to-react search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Directory for exported results.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repair start time relative to the reference start (s), for `repair`.
    #[arg(long = "t-rep", global = true, allow_negative_numbers = true)]
    pub t_rep: Option<f64>,
    /// Number of timed runs for `bench`.
    #[arg(long, global = true, default_value_t = 100)]
    pub runs: usize,
    /// Scenario override with a dotted key, e.g. `weights.deformation.lambda_c=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Wall-clock budget of the search (s); same as `--set search.time_budget_s=..`.
    #[arg(long = "budget-s", global = true)]
    pub budget_s: Option<f64>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Load and validate a scenario.
    Validate,
    /// Report the time to collision of the reference.
    Check,
    /// Repair at a fixed `--t-rep`.
    Repair,
    /// Binary search for the feasible time-to-react.
    Search,
    /// Time repeated searches.
    Bench,
}

/// Six significant digits with trailing zeros removed; `0.0` for zero and
/// `inf` for infinity.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    let mut text = format!("{x:.decimals$}");
    if text.contains('.') {
        while text.ends_with('0') {
            text.pop();
        }
        if text.ends_with('.') {
            text.push('0');
        }
    }
    text
}

struct Failure {
    code: i32,
    message: String,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

impl From<RepairError> for Failure {
    fn from(e: RepairError) -> Self {
        let code = match e {
            RepairError::InvalidRequest(_) => EXIT_INPUT,
            _ => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        let code = match e {
            ExportError::Io { .. } | ExportError::Csv { .. } => EXIT_INPUT,
            _ => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn load(cli: &Cli) -> Result<Scenario, Failure> {
    let path = cli.scenario.as_ref().ok_or_else(|| input_error("missing --scenario"))?;
    let mut overrides = cli.overrides.clone();
    if let Some(budget) = cli.budget_s {
        overrides.push(format!("search.time_budget_s={budget}"));
    }
    let scenario = load_scenario_with(path, &overrides)?;
    for w in &scenario.warnings {
        log::warn!("{w}");
    }
    Ok(scenario)
}

fn cmd_validate(cli: &Cli) -> Result<i32, Failure> {
    let scenario = load(cli)?;
    println!("valid: {}", scenario.name());
    Ok(EXIT_OK)
}

fn cmd_check(cli: &Cli) -> Result<i32, Failure> {
    let scenario = load(cli)?;
    let conflict = first_conflict(
        &scenario.reference,
        &scenario.obstacles,
        scenario.search.collision_check_dt,
    )
    .map_err(RepairError::from)?;
    match conflict {
        Some(c) => println!("ttc: {} obstacle: {}", fmt_num(c.ttc), c.obstacle_id),
        None => println!("ttc: inf"),
    }
    Ok(EXIT_OK)
}

fn cmd_repair(cli: &Cli) -> Result<i32, Failure> {
    let scenario = load(cli)?;
    let t_rep = cli.t_rep.ok_or_else(|| input_error("repair needs --t-rep"))?;
    let horizon = scenario.reference.t_end() - scenario.reference.t_start();
    if !(0.0..horizon).contains(&t_rep) {
        return Err(input_error(format!(
            "--t-rep {t_rep} outside [0, {horizon}) of the reference"
        )));
    }
    let started = Instant::now();
    let candidate = plan(&scenario.request().with_t_rep(scenario.reference.t_start() + t_rep))?;
    let elapsed = started.elapsed().as_secs_f64();
    let bundle = ResultBundle::from_repair(&scenario, t_rep, &candidate, elapsed)?;
    if let Some(out) = &cli.out {
        export_results(&bundle, out)?;
    }
    let status = serde_json::to_value(candidate.status).expect("status serializes");
    println!(
        "status: {} t_rep: {} feasible: {}",
        status.as_str().unwrap_or_default(),
        fmt_num(t_rep),
        bundle.document.gamma_feasibility.overall
    );
    Ok(if candidate.status.is_flagged() {
        EXIT_DOMAIN
    } else {
        EXIT_OK
    })
}

fn log_iterations(result: &FttrResult) {
    log::info!("iter  t_rep_s  feasible  t_start_s  t_end_s  time_ms");
    for (k, it) in result.iterations.iter().enumerate() {
        log::info!(
            "{k:>4}  {:>7}  {:>8}  {:>9}  {:>7}  {:.3}",
            fmt_num(it.t_rep),
            it.feasible,
            fmt_num(it.t_start),
            fmt_num(it.t_end),
            it.elapsed_s * 1e3
        );
    }
}

fn termination_name(t: Termination) -> String {
    serde_json::to_value(t)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn cmd_search(cli: &Cli) -> Result<i32, Failure> {
    let scenario = load(cli)?;
    let result = run_pipeline(&scenario)?;
    log_iterations(&result);
    if let Some(out) = &cli.out {
        export_results(&ResultBundle::from_search(&scenario, &result, None)?, out)?;
    }
    println!(
        "f_ttr: {} ttc: {} calls: {} terminated_by: {}{}",
        fmt_num(result.f_ttr),
        fmt_num(result.ttc),
        result.planner_calls(),
        termination_name(result.terminated_by),
        if result.unresolved { " unresolved" } else { "" }
    );
    Ok(if result.unresolved { EXIT_DOMAIN } else { EXIT_OK })
}

fn cmd_bench(cli: &Cli) -> Result<i32, Failure> {
    let scenario = load(cli)?;
    let (stats, result) = timing_harness(&scenario, cli.runs)?;
    if let Some(out) = &cli.out {
        export_results(
            &ResultBundle::from_search(&scenario, &result, Some(stats.clone()))?,
            out,
        )?;
    }
    eprintln!("scenario | total search time (ms) | time per iteration (ms)");
    println!(
        "{} | {} ± {} | {} ± {}",
        scenario.name(),
        fmt_num(stats.total_mean_s * 1e3),
        fmt_num(stats.total_std_s * 1e3),
        fmt_num(stats.per_iteration_mean_s * 1e3),
        fmt_num(stats.per_iteration_std_s * 1e3)
    );
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let outcome = match cli.command {
        Command::Validate => cmd_validate(&cli),
        Command::Check => cmd_check(&cli),
        Command::Repair => cmd_repair(&cli),
        Command::Search => cmd_search(&cli),
        Command::Bench => cmd_bench(&cli),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

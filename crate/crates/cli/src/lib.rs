//! Command-line front end: mining runs, the GP baseline, evaluation,
//! backtests, reports and synthetic data.
//!
//! Exit codes: 0 ok, 2 config, 3 data, 4 backend, 5 internal.

pub mod chart;
pub mod config;
pub mod output;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use treevo_core::backtest::{run_backtest, BacktestResult};
use treevo_core::data::{self, PlantedSignal, SplitName, SplitPanels};
use treevo_core::eval::{evaluate, fitness};
use treevo_core::evolution::runlog::{
    convergence_csv, convergence_from_log, read_run_log, run_label, BestRecord, LogRecord, OutcomeStatus,
};
use treevo_core::evolution::{self, ConvergencePoint, RunLog, RunStatus};
use treevo_core::gp::run_gp;
use treevo_core::llm::{build_backend, BackendKind, PromptTemplates};
use treevo_core::{parse, FitnessReport};

use chart::{line_chart, step_points, Series};
use config::AppConfig;
use output::{sha256_file, Staging};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub(crate) fn io(what: &str, e: std::io::Error) -> CliError {
        CliError::Internal(format!("{what}: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "treevo", version, about = "Evolve formulaic alphas through tree-structured thoughts")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the thought-tree search.
    Mine(RunArgs),
    /// Run the genetic programming baseline.
    Gp(RunArgs),
    /// Score one expression on one split.
    Eval(EvalArgs),
    /// Top-K / Drop-M backtest of an expression or a finished run.
    Backtest(BacktestArgs),
    /// Overlay convergence curves and operator usage of several runs.
    Report(ReportArgs),
    /// Write a synthetic panel CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_backend)]
    pub backend: Option<BackendKind>,
    /// Response script for the mock backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Series name in reports.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub expr: String,
    #[arg(long, default_value = "valid")]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "run", required_unless_present = "run")]
    pub expr: Option<String>,
    /// Run directory whose best expression is tested.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub stocks: usize,
    /// Trading days; the default covers 2016 through 2023.
    #[arg(long, default_value_t = 2100)]
    pub days: usize,
    /// Expression whose z-score drives forward returns.
    #[arg(long)]
    pub plant: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mine(a) => cmd_mine(&a).map(drop),
        Command::Gp(a) => cmd_gp(&a).map(drop),
        Command::Eval(a) => {
            use std::io::Write;
            let r = cmd_eval(&a)?;
            let text = serde_json::to_string_pretty(&r).map_err(|e| CliError::Internal(e.to_string()))?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("stdout", e)),
                _ => Ok(()),
            }
        }
        Command::Backtest(a) => cmd_backtest(&a).map(drop),
        Command::Report(a) => cmd_report(&a).map(drop),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn load_splits(cfg: &AppConfig, data_path: &Path, horizon: usize) -> Result<SplitPanels, CliError> {
    let panel = data::load_panel(data_path).map_err(|e| CliError::Data(format!("{}: {e}", data_path.display())))?;
    cfg.split.apply(&panel, horizon)
}

fn load_config(args: &RunArgs) -> Result<AppConfig, CliError> {
    let mut cfg = AppConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(kind) = args.backend {
        cfg.backend.kind = kind;
    }
    if let Some(script) = &args.script {
        cfg.backend.script = Some(script.clone());
    }
    if let Some(label) = &args.label {
        cfg.evolution.label = label.clone();
    }
    Ok(cfg)
}

fn data_digest(path: &Path) -> Result<serde_json::Value, CliError> {
    let digest = sha256_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(json!({ "path": path.display().to_string(), "sha256": digest }))
}

fn write_manifest(staging: &mut Staging, mut fields: serde_json::Value) -> Result<(), CliError> {
    fields["tool"] = json!("treevo");
    fields["version"] = json!(env!("CARGO_PKG_VERSION"));
    fields["files"] = json!(staging.digests());
    staging.write_json("manifest.json", &fields)
}

fn convergence_series(label: &str, points: &[ConvergencePoint], x_end: usize) -> Series {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.best_validation_ic.map(|ic| (p.evaluations as f64, ic)))
        .collect();
    Series {
        label: label.to_string(),
        points: step_points(&pts, Some(x_end as f64)),
    }
}

/// Best expression, per-split fitness, convergence table and chart.
fn write_run_outputs(
    staging: &mut Staging,
    label: &str,
    best: Option<&BestRecord>,
    convergence: &[ConvergencePoint],
    evaluations_used: usize,
) -> Result<(), CliError> {
    staging.adopt("run_log.jsonl")?;
    staging.write("convergence.csv", convergence_csv(convergence))?;
    if let Some(b) = best {
        staging.write("best_expression.txt", format!("{}\n", b.expression))?;
        staging.write_json("fitness_train.json", &b.train)?;
        staging.write_json("fitness_valid.json", &b.validation)?;
        staging.write_json("fitness_test.json", &b.test)?;
    }
    let svg = staging.path("convergence.svg");
    line_chart(
        &svg,
        &format!("{label}: best validation IC"),
        "evaluations",
        "validation IC",
        &[convergence_series(label, convergence, evaluations_used)],
    )?;
    staging.adopt("convergence.svg")
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub out: PathBuf,
    pub status: RunStatus,
    pub best: Option<BestRecord>,
    pub evaluations_used: usize,
    pub generations: u32,
}

pub fn cmd_mine(args: &RunArgs) -> Result<RunSummary, CliError> {
    let cfg = load_config(args)?;
    cfg.evolution.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.backend.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let templates = match &cfg.templates {
        Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| CliError::Config(format!("templates: {e}")))?,
        None => PromptTemplates::default(),
    };
    let splits = load_splits(&cfg, &args.data, cfg.evolution.horizon)?;
    let backend = build_backend(&cfg.backend, cfg.evolution.seed).map_err(|e| CliError::Backend(e.to_string()))?;

    let mut staging = Staging::new(&args.out)?;
    let log = RunLog::with_sink(staging.path("run_log.jsonl")).map_err(|e| CliError::io("run log", e))?;
    let result = evolution::run(&cfg.evolution, &splits, backend.as_ref(), &templates, log)
        .map_err(|e| CliError::Config(e.to_string()))?;
    log::info!(
        "{} generations, {} evaluations, {} model calls",
        result.generations,
        result.evaluations_used,
        result.llm_calls
    );
    write_run_outputs(
        &mut staging,
        &cfg.evolution.label,
        result.best.as_ref(),
        &result.convergence,
        result.evaluations_used,
    )?;
    write_manifest(
        &mut staging,
        json!({
            "command": "mine",
            "engine": "treevo",
            "label": cfg.evolution.label,
            "seed": cfg.evolution.seed,
            "status": result.status,
            "abort_reason": result.abort_reason,
            "evaluations_used": result.evaluations_used,
            "generations": result.generations,
            "llm_calls": result.llm_calls,
            "data": data_digest(&args.data)?,
            "config": cfg,
        }),
    )?;
    let out = staging.commit()?;
    if result.status == RunStatus::Aborted {
        return Err(CliError::Backend(result.abort_reason.unwrap_or_else(|| "run aborted".into())));
    }
    Ok(RunSummary {
        out,
        status: result.status,
        best: result.best,
        evaluations_used: result.evaluations_used,
        generations: result.generations,
    })
}

pub fn cmd_gp(args: &RunArgs) -> Result<RunSummary, CliError> {
    let cfg = load_config(args)?;
    cfg.gp.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let label = args.label.clone().unwrap_or_else(|| "gp".into());
    let splits = load_splits(&cfg, &args.data, cfg.gp.horizon)?;
    let mut staging = Staging::new(&args.out)?;
    let log = RunLog::with_sink(staging.path("run_log.jsonl")).map_err(|e| CliError::io("run log", e))?;
    let result = run_gp(&cfg.gp, &splits, log, &label).map_err(|e| CliError::Config(e.to_string()))?;
    write_run_outputs(&mut staging, &label, result.best.as_ref(), &result.convergence, result.evaluations_used)?;
    write_manifest(
        &mut staging,
        json!({
            "command": "gp",
            "engine": "gp",
            "label": label,
            "seed": cfg.gp.seed,
            "status": RunStatus::Completed,
            "evaluations_used": result.evaluations_used,
            "generations": result.generations,
            "data": data_digest(&args.data)?,
            "config": cfg.gp,
        }),
    )?;
    let out = staging.commit()?;
    Ok(RunSummary {
        out,
        status: RunStatus::Completed,
        best: result.best,
        evaluations_used: result.evaluations_used,
        generations: result.generations,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<FitnessReport, CliError> {
    let cfg = AppConfig::load(args.config.as_deref())?;
    let expr = parse(&args.expr).map_err(|e| CliError::Config(format!("expression: {e}")))?;
    let splits = load_splits(&cfg, &args.data, cfg.evolution.horizon)?;
    Ok(fitness(&expr, splits.get(args.split), cfg.evolution.horizon))
}

pub fn cmd_backtest(args: &BacktestArgs) -> Result<BacktestResult, CliError> {
    let cfg = AppConfig::load(args.config.as_deref())?;
    cfg.backtest.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let text = match (&args.expr, &args.run) {
        (Some(e), _) => e.clone(),
        (None, Some(run)) => {
            let p = run.join("best_expression.txt");
            std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        (None, None) => return Err(CliError::Config("either --expr or --run is required".into())),
    };
    let expr = parse(text.trim()).map_err(|e| CliError::Config(format!("expression: {e}")))?;
    let splits = load_splits(&cfg, &args.data, cfg.evolution.horizon)?;
    let panel = splits.get(args.split);
    let result = run_backtest(&evaluate(&expr, panel), panel, &cfg.backtest).map_err(|e| CliError::Data(e.to_string()))?;

    let mut staging = Staging::new(&args.out)?;
    let mut table = String::from("date,strategy,benchmark,turnover\n");
    for (k, d) in result.strategy.dates.iter().enumerate() {
        let turnover = result.turnover.get(k).map(|t| t.to_string()).unwrap_or_default();
        table.push_str(&format!("{d},{},{},{turnover}\n", result.strategy.values[k], result.benchmark.values[k]));
    }
    staging.write("backtest.csv", table)?;
    let xs = |c: &treevo_core::backtest::EquityCurve| c.values.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect();
    line_chart(
        &staging.path("backtest.svg"),
        &format!("Top-{} / Drop-{}: {}", cfg.backtest.top_k, cfg.backtest.drop_m, expr),
        "trading day",
        "cumulative return",
        &[
            Series {
                label: "strategy".into(),
                points: xs(&result.strategy),
            },
            Series {
                label: "equal weight".into(),
                points: xs(&result.benchmark),
            },
        ],
    )?;
    staging.adopt("backtest.svg")?;
    staging.write_json(
        "summary.json",
        &json!({
            "expression": expr.to_string(),
            "split": format!("{:?}", args.split).to_lowercase(),
            "strategy_terminal": result.strategy.terminal(),
            "benchmark_terminal": result.benchmark.terminal(),
            "excess_terminal": result.excess_terminal(),
            "information_ratio": result.information_ratio(),
            "max_drawdown": result.strategy.max_drawdown(),
            "mean_turnover": result.turnover.iter().sum::<f64>() / result.turnover.len().max(1) as f64,
        }),
    )?;
    write_manifest(
        &mut staging,
        json!({ "command": "backtest", "data": data_digest(&args.data)?, "config": cfg.backtest }),
    )?;
    staging.commit()?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunDigest {
    pub label: String,
    pub dir: PathBuf,
    pub engine: String,
    pub evaluations_used: usize,
    /// Accepted children per operator.
    pub operators: BTreeMap<String, usize>,
    pub best_expression: Option<String>,
    pub best_validation_ic: Option<f64>,
    pub test_ic: Option<f64>,
    #[serde(skip)]
    pub convergence: Vec<ConvergencePoint>,
}

pub fn digest_run(dir: &Path) -> Result<RunDigest, CliError> {
    let path = dir.join("run_log.jsonl");
    let records = read_run_log(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut d = RunDigest {
        label: run_label(&records)
            .map(str::to_string)
            .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()),
        dir: dir.to_path_buf(),
        engine: String::new(),
        evaluations_used: 0,
        operators: BTreeMap::new(),
        best_expression: None,
        best_validation_ic: None,
        test_ic: None,
        convergence: convergence_from_log(&records),
    };
    for r in &records {
        match r {
            LogRecord::RunStart(s) => d.engine = s.engine.clone(),
            LogRecord::OperatorOutcome(o) if o.status == OutcomeStatus::Accepted => {
                *d.operators.entry(o.operator.clone()).or_insert(0) += 1;
            }
            LogRecord::RunEnd(e) => {
                d.evaluations_used = e.evaluations_used;
                if let Some(b) = &e.best {
                    d.best_expression = Some(b.expression.clone());
                    d.best_validation_ic = b.validation.ic;
                    d.test_ic = b.test.ic;
                }
            }
            _ => {}
        }
    }
    if d.evaluations_used == 0 {
        d.evaluations_used = d.convergence.last().map_or(0, |p| p.evaluations);
    }
    Ok(d)
}

pub fn cmd_report(args: &ReportArgs) -> Result<Vec<RunDigest>, CliError> {
    let mut runs = Vec::new();
    let mut labels = HashSet::new();
    for dir in &args.runs {
        let mut d = digest_run(dir)?;
        if !labels.insert(d.label.clone()) {
            d.label = format!("{} ({})", d.label, dir.display());
            labels.insert(d.label.clone());
        }
        runs.push(d);
    }
    let mut staging = Staging::new(&args.out)?;
    let mut table = String::from("label,evaluations,best_validation_ic\n");
    let mut ops = String::from("label,operator,accepted\n");
    for r in &runs {
        for p in &r.convergence {
            let ic = p.best_validation_ic.map(|v| v.to_string()).unwrap_or_default();
            table.push_str(&format!("{},{},{ic}\n", csv_field(&r.label), p.evaluations));
        }
        for (op, n) in &r.operators {
            ops.push_str(&format!("{},{op},{n}\n", csv_field(&r.label)));
        }
    }
    staging.write("convergence.csv", table)?;
    staging.write("operators.csv", ops)?;
    let x_end = runs.iter().map(|r| r.evaluations_used).max().unwrap_or(0);
    let series: Vec<Series> = runs.iter().map(|r| convergence_series(&r.label, &r.convergence, x_end)).collect();
    line_chart(&staging.path("convergence.svg"), "Best validation IC", "evaluations", "validation IC", &series)?;
    staging.adopt("convergence.svg")?;
    staging.write_json("summary.json", &runs)?;
    write_manifest(&mut staging, json!({ "command": "report", "runs": args.runs }))?;
    staging.commit()?;
    Ok(runs)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let signal = match &args.plant {
        Some(text) => {
            let expr = parse(text).map_err(|e| CliError::Config(format!("planted expression: {e}")))?;
            Some(PlantedSignal::new(expr, args.noise))
        }
        None => None,
    };
    if args.stocks == 0 || args.days == 0 {
        return Err(CliError::Config("stocks and days must be positive".into()));
    }
    let panel = data::synthetic_panel(args.seed, args.stocks, args.days, signal.as_ref());
    let tmp = args.out.with_extension("csv.partial");
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io("creating output parent", e))?;
    }
    data::save_panel(&panel, &tmp).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::rename(&tmp, &args.out).map_err(|e| CliError::io("publishing panel", e))?;
    Ok(())
}

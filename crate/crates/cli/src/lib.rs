//! The `mucs` command line: reproducible prediction, mutation, ranking,
//! evaluation and comparison campaigns driven by one JSON config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use mucs_core::detectors::Method;
use mucs_core::gateway::{Gateway, GatewayModel};
use mucs_core::harness::{
    build_gateway, compare_reports, write_csv, write_predictions, EvalReport, Experiment, ExperimentConfig,
    HarnessError, ItemFailure,
};
use mucs_core::model::ProbModel;
use mucs_core::mutation::{audit_lines, generate_mutants};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mucs", version, about = "LLM fault detection with mutation-based confidence smoothing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON). Relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "mucs-out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated budget fractions, e.g. 0.1,0.3,0.5.
    #[arg(long, global = true, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    /// Comma-separated detector ids, e.g. gini,maxp.
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Enable MuCS smoothing (default settings unless the config has some).
    #[arg(long, global = true)]
    pub mucs: bool,
    /// Replay logged predictions instead of querying a model.
    #[arg(long, global = true)]
    pub offline_predictions: Option<PathBuf>,
    /// Answer queries from a stub reply table instead of the network.
    #[arg(long, global = true)]
    pub stub: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. --set mucs.n_mutants=5.
    /// Values parse as JSON, falling back to a plain string.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the model for every item and write a replayable prediction log.
    Predict,
    /// Write the mutant audit log (n_mutants lines per item).
    Mutate,
    /// Write each detector's full ranking.
    Rank,
    /// Run detectors over the budget grid and write the report tables.
    Evaluate,
    /// Relative TRC change of TREATED over BASELINE (report.json files or their directories).
    Compare { baseline: PathBuf, treated: PathBuf },
    /// Print the response cache statistics.
    CacheStats,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Predict => "predict",
            Command::Mutate => "mutate",
            Command::Rank => "rank",
            Command::Evaluate => "evaluate",
            Command::Compare { .. } => "compare",
            Command::CacheStats => "cache-stats",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Config fields holding file paths.
const PATH_FIELDS: [&str; 7] = [
    "dataset",
    "stub",
    "offline_predictions",
    "cache",
    "lexicon",
    "embeddings",
    "train",
];

/// Sets `root.a.b.c = value`, creating intermediate objects.
pub fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override path {path:?}")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            return Err(CliError::Usage(format!("override {path:?} descends into a non-object")));
        }
        let obj = cur.as_object_mut().expect("checked object");
        let next = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if next.is_null() {
            *next = Value::Object(Default::default());
        }
        cur = next;
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(CliError::Usage(format!("override {path:?} descends into a non-object"))),
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Reads the config file (if any), resolves its relative paths, then applies
/// flags and `--set` overrides in that order.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut value = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let mut v: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            if let Some(obj) = v.as_object_mut() {
                for field in PATH_FIELDS {
                    if let Some(Value::String(s)) = obj.get(field) {
                        let p = Path::new(s);
                        if p.is_relative() {
                            obj.insert(field.into(), path_value(&base.join(p)));
                        }
                    }
                }
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        return Err(CliError::Usage("config must be a JSON object".into()));
    }
    if let Some(seed) = cli.seed {
        set_dotted(&mut value, "seed", seed.into())?;
    }
    if let Some(b) = &cli.budgets {
        set_dotted(&mut value, "budgets", serde_json::json!(b))?;
    }
    if let Some(ms) = &cli.methods {
        let ids = ms
            .iter()
            .map(|m| Method::from_str(m).map(|m| Value::String(m.id().into())))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        set_dotted(&mut value, "methods", Value::Array(ids))?;
    }
    if cli.mucs && value.get("mucs").is_none_or(Value::is_null) {
        let defaults = serde_json::from_value::<ExperimentConfig>(value.clone())
            .map(|c| c.default_mucs())
            .unwrap_or_default();
        set_dotted(&mut value, "mucs", serde_json::to_value(defaults).expect("serializes"))?;
    }
    if let Some(p) = &cli.offline_predictions {
        set_dotted(&mut value, "offline_predictions", path_value(p))?;
    }
    if let Some(p) = &cli.stub {
        set_dotted(&mut value, "stub", path_value(p))?;
    }
    for o in &cli.overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {o:?} is not PATH=VALUE")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_dotted(&mut value, path.trim(), v)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg.effective())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
    failures: &'a [ItemFailure],
    exit_code: i32,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for r in rows {
        let line = serde_json::to_string(&r).map_err(|e| io_err(path, e))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn failure_code(failures: &[ItemFailure]) -> i32 {
    if failures.is_empty() {
        EXIT_OK
    } else if failures.iter().any(|f| f.transport) {
        EXIT_TRANSPORT
    } else {
        EXIT_PARTIAL
    }
}

struct Outcome {
    outputs: Vec<String>,
    failures: Vec<ItemFailure>,
    code: i32,
}

fn require_gateway(cfg: &ExperimentConfig) -> Result<Gateway, CliError> {
    build_gateway(cfg)?.ok_or_else(|| CliError::Usage("this command queries a model; remove offline_predictions".into()))
}

fn cmd_predict(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let gw = require_gateway(cfg)?;
    let exp = Experiment::load(cfg)?;
    let model = GatewayModel {
        gateway: &gw,
        template: &exp.template,
    };
    let log = exp.collect_predictions(&model)?;
    write_predictions(&out.join("predictions.jsonl"), &log.predictions)?;
    eprintln!(
        "predict: {} predictions, {} failures, {} requests",
        log.predictions.len(),
        log.failures.len(),
        gw.request_count()
    );
    Ok(Outcome {
        outputs: vec!["predictions.jsonl".into()],
        code: failure_code(&log.failures),
        failures: log.failures,
    })
}

fn cmd_mutate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let exp = Experiment::load(cfg)?;
    let mucs = exp.config.mucs.clone().unwrap_or_else(|| exp.config.default_mucs());
    let mut lines = Vec::new();
    for item in &exp.items {
        let mutants = generate_mutants(item, &mucs, &exp.lexicon).map_err(HarnessError::from)?;
        lines.extend(audit_lines(&item.id, &mutants));
    }
    write_jsonl(&out.join("mutants.jsonl"), &lines)?;
    Ok(Outcome {
        outputs: vec!["mutants.jsonl".into()],
        failures: Vec::new(),
        code: EXIT_OK,
    })
}

fn with_model<T>(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    f: impl FnOnce(Option<&dyn ProbModel>) -> Result<T, CliError>,
) -> Result<T, CliError> {
    match build_gateway(cfg)? {
        Some(gw) => {
            let model = GatewayModel {
                gateway: &gw,
                template: &exp.template,
            };
            f(Some(&model))
        }
        None => f(None),
    }
}

#[derive(Serialize)]
struct RankLine<'a> {
    method: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unavailable: Option<String>,
}

fn cmd_rank(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let exp = Experiment::load(cfg)?;
    let (rankings, failures) = with_model(cfg, &exp, |model| {
        let prepared = exp.prepare(model)?;
        Ok((exp.rankings(&prepared), prepared.prediction_failures))
    })?;
    let lines: Vec<RankLine> = rankings
        .iter()
        .map(|(m, r)| match r {
            Ok(r) => RankLine {
                method: m.id(),
                order: Some(&r.order),
                scores: Some(&r.scores),
                unavailable: None,
            },
            Err(e) => RankLine {
                method: m.id(),
                order: None,
                scores: None,
                unavailable: Some(e.to_string()),
            },
        })
        .collect();
    write_jsonl(&out.join("rankings.jsonl"), &lines)?;
    Ok(Outcome {
        outputs: vec!["rankings.jsonl".into()],
        code: failure_code(&failures),
        failures,
    })
}

fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let exp = Experiment::load(cfg)?;
    let report = with_model(cfg, &exp, |model| Ok(exp.run(model)?))?;
    report.write_all(out)?;
    for f in &report.fallbacks {
        eprintln!("warning: item {} evaluated without smoothing: {}", f.item_id, f.reason);
    }
    if report.accuracy.drift_flagged {
        eprintln!(
            "warning: accuracy on mutated prompts drifts by {:.4} from the original",
            report.accuracy.drift.unwrap_or_default()
        );
    }
    Ok(Outcome {
        outputs: ["report.json", "trc.csv", "calibration.csv", "histogram.csv"]
            .map(String::from)
            .to_vec(),
        code: failure_code(&report.prediction_failures),
        failures: report.prediction_failures,
    })
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("report.json")
    } else {
        p.to_path_buf()
    }
}

fn cmd_compare(baseline: &Path, treated: &Path, out: &Path) -> Result<Outcome, CliError> {
    let a = EvalReport::load(&report_path(baseline))?;
    let b = EvalReport::load(&report_path(treated))?;
    let table = compare_reports(&a, &b)?;
    write_csv(&out.join("improvement.csv"), &table.rows())?;
    write_json(&out.join("improvement.json"), &table)?;
    Ok(Outcome {
        outputs: vec!["improvement.csv".into(), "improvement.json".into()],
        failures: Vec::new(),
        code: EXIT_OK,
    })
}

fn cmd_cache_stats(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let gw = require_gateway(cfg)?;
    let stats = gw.cache_stats();
    println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
    write_json(&out.join("cache_stats.json"), &stats)?;
    Ok(Outcome {
        outputs: vec!["cache_stats.json".into()],
        failures: Vec::new(),
        code: EXIT_OK,
    })
}

/// Runs a parsed invocation; returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = match &cli.command {
        // Comparing reports needs no dataset.
        Command::Compare { .. } if cli.config.is_none() => ExperimentConfig::default(),
        _ => resolve_config(cli)?,
    };
    std::fs::create_dir_all(&cli.out).map_err(|e| io_err(&cli.out, e))?;
    let outcome = match &cli.command {
        Command::Predict => cmd_predict(&cfg, &cli.out)?,
        Command::Mutate => cmd_mutate(&cfg, &cli.out)?,
        Command::Rank => cmd_rank(&cfg, &cli.out)?,
        Command::Evaluate => cmd_evaluate(&cfg, &cli.out)?,
        Command::Compare { baseline, treated } => cmd_compare(baseline, treated, &cli.out)?,
        Command::CacheStats => cmd_cache_stats(&cfg, &cli.out)?,
    };
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.item_id, f.reason);
    }
    let manifest = Manifest {
        tool: "mucs",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed: cfg.seed,
        config: &cfg,
        outputs: outcome.outputs,
        failures: &outcome.failures,
        exit_code: outcome.code,
    };
    write_json(&cli.out.join("manifest.json"), &manifest)?;
    Ok(outcome.code)
}

/// Parses `args` (program name first) and runs; usage errors exit with 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

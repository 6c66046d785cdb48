//! Command-line surface: `prune`, `sweep`, `analyze`, `export`, `bench`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use crate::analysis::{emit_report, sparsity_report, trajectory_compare, DEFAULT_RANK_TOL};
use crate::error::{PinsError, Result};
use crate::models::container;
use crate::sparse_export::{
    bench_stored, export_bundle, load_bundle, random_sparse_matrix, to_csr, StoredCsr,
};
use crate::trainer::{run_sweep, train_prune, RunRecord, RunSummary, TrainConfig};

pub const OUT_ENV: &str = "PINSPRUNE_OUT";
pub const DEFAULT_OUT: &str = "runs";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MODEL_FILE: &str = "model.pinsmodl";
pub const CHECKPOINT_STEM: &str = "checkpoint";

#[derive(Debug, Parser)]
#[command(name = "pinsprune", version, about = "Prune while training, analyze and export sparse models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and prune one configuration.
    Prune(RunArgs),
    /// Run a grid of configurations over several seeds.
    Sweep(SweepArgs),
    /// Rank, occupancy and trajectory reports for a model, run or sweep.
    Analyze(AnalyzeArgs),
    /// Write a model's prunable matrices as a CSR bundle.
    Export(ExportArgs),
    /// Time dense vs CSR matvec for a bundle or a random matrix.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML or JSON experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, `dotted.key=value` (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output root; defaults to the config's output_dir, then $PINSPRUNE_OUT, then ./runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Axes such as `criterion=magnitude,sensitivity,pins` and `seeds=1..5`.
    #[arg(required = true)]
    pub axes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// A `.pinsmodl` file, a run directory or a sweep directory.
    pub target: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rel_tol: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub model: PathBuf,
    /// Store int8 values with one scale per matrix.
    #[arg(long)]
    pub quantize: bool,
    /// Bundle directory; defaults to `<model stem>-csr` next to the model.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bundle directory written by `export`.
    #[arg(required_unless_present = "random")]
    pub bundle: Option<PathBuf>,
    /// Benchmark a seeded random `ROWSxCOLS` matrix instead.
    #[arg(long, value_name = "ROWSxCOLS")]
    pub random: Option<String>,
    #[arg(long, default_value_t = 0.9)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Prune(a) => cmd_prune(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Export(a) => cmd_export(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn read_document(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| PinsError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| PinsError::Config(format!("{}: {e}", path.display())))
    } else {
        let v: toml::Value =
            toml::from_str(&text).map_err(|e| PinsError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| PinsError::Config(e.to_string()))
    }
}

/// Sets `dotted.key` in a JSON object, creating intermediate objects.
pub fn set_dotted(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PinsError::Config(format!("bad override key `{key}`")));
    }
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| PinsError::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// A `model` table without `kind` describes the default MLP.
fn default_model_kind(doc: &mut Value) {
    if let Some(model) = doc.get_mut("model").and_then(Value::as_object_mut) {
        model
            .entry("kind")
            .or_insert_with(|| Value::String("mlp".into()));
    }
}

fn to_config(mut doc: Value) -> Result<TrainConfig> {
    default_model_kind(&mut doc);
    let cfg: TrainConfig = serde_json::from_value(doc).map_err(|e| PinsError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `key=value` override.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| PinsError::Config(format!("override `{assignment}` is not key=value")))?;
    set_dotted(doc, k.trim(), parse_value(v.trim()))
}

/// Experiment file plus overrides, as a validated config and the optional
/// output directory it names.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<(TrainConfig, Option<PathBuf>)> {
    let mut doc = match path {
        Some(p) => read_document(p)?,
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        return Err(PinsError::Config("experiment file must be a table".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        set_dotted(&mut doc, "seed", Value::from(s))?;
    }
    let out = doc
        .as_object_mut()
        .and_then(|m| m.remove("output_dir"))
        .map(|v| {
            v.as_str()
                .map(PathBuf::from)
                .ok_or_else(|| PinsError::Config("output_dir must be a string".into()))
        })
        .transpose()?;
    Ok((to_config(doc)?, out))
}

fn output_root(flag: Option<&Path>, from_config: Option<PathBuf>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or(from_config)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// `{digest}-{seed}`.
pub fn run_dir_name(cfg: &TrainConfig) -> String {
    format!("{}-{}", cfg.digest(), cfg.seed)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PinsError::Serde(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| PinsError::io(path, e))
}

fn cmd_prune(a: &RunArgs) -> Result<i32> {
    let (cfg, cfg_out) = load_config(a.config.as_deref(), &a.set, a.seed)?;
    let dir = output_root(a.out.as_deref(), cfg_out).join(run_dir_name(&cfg));
    std::fs::create_dir_all(&dir).map_err(|e| PinsError::io(&dir, e))?;
    write_json(&dir.join(RESOLVED_CONFIG), &cfg)?;
    let run = train_prune(&cfg)?;
    run.record.write(&dir)?;
    container::save_registry(run.model.registry(), &dir.join(MODEL_FILE))?;
    run.checkpoint.save(&dir, CHECKPOINT_STEM)?;
    let mut summary = serde_json::to_value(run.record.summary()).map_err(|e| PinsError::Serde(e.to_string()))?;
    summary["run_dir"] = Value::String(dir.display().to_string());
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(0)
}

/// One sweep axis: a dotted key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses `key=a,b,c`; `seeds=lo..hi` is an inclusive range.
pub fn parse_axis(spec: &str) -> Result<Axis> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| PinsError::Config(format!("axis `{spec}` is not key=values")))?;
    let key = k.trim().to_string();
    let values: Vec<String> = if let Some((lo, hi)) = v.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| PinsError::Config(format!("bad range `{v}`")))?;
        let hi: u64 = hi.trim().parse().map_err(|_| PinsError::Config(format!("bad range `{v}`")))?;
        if hi < lo {
            return Err(PinsError::Config(format!("empty range `{v}`")));
        }
        (lo..=hi).map(|s| s.to_string()).collect()
    } else {
        v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    };
    if key.is_empty() || values.is_empty() {
        return Err(PinsError::Config(format!("axis `{spec}` has no values")));
    }
    Ok(Axis { key, values })
}

/// Cartesian product of non-seed axes as `(cell name, config)`, plus the
/// seed list (`seeds` or `seed` axis; the base seed when absent).
pub fn expand_axes(
    base_doc: &Value,
    base_seed: u64,
    axes: &[Axis],
) -> Result<(Vec<(String, TrainConfig)>, Vec<u64>)> {
    let mut seeds = vec![base_seed];
    let mut cells: Vec<(Vec<String>, Value)> = vec![(vec![], base_doc.clone())];
    for axis in axes {
        if axis.key == "seeds" || axis.key == "seed" {
            seeds = axis
                .values
                .iter()
                .map(|s| s.parse().map_err(|_| PinsError::Config(format!("bad seed `{s}`"))))
                .collect::<Result<_>>()?;
            continue;
        }
        let mut next = Vec::new();
        for (names, doc) in &cells {
            for v in &axis.values {
                let mut d = doc.clone();
                set_dotted(&mut d, &axis.key, parse_value(v))?;
                let mut n = names.clone();
                n.push(format!("{}={v}", axis.key));
                next.push((n, d));
            }
        }
        cells = next;
    }
    let cells = cells
        .into_iter()
        .map(|(names, doc)| {
            let name = if names.is_empty() { "base".to_string() } else { names.join(",") };
            Ok((name, to_config(doc)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cells, seeds))
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let (base, cfg_out) = load_config(a.run.config.as_deref(), &a.run.set, a.run.seed)?;
    let axes: Vec<Axis> = a.axes.iter().map(|s| parse_axis(s)).collect::<Result<_>>()?;
    let base_doc = serde_json::to_value(&base).map_err(|e| PinsError::Serde(e.to_string()))?;
    let (cells, seeds) = expand_axes(&base_doc, base.seed, &axes)?;
    let dir = output_root(a.run.out.as_deref(), cfg_out).join(format!("sweep-{}", base.digest()));
    std::fs::create_dir_all(&dir).map_err(|e| PinsError::io(&dir, e))?;
    write_json(&dir.join(RESOLVED_CONFIG), &base)?;

    let table = run_sweep(&cells, &seeds, a.jobs)?;
    let mut listing = Vec::new();
    for r in &table.runs {
        let cfg_digest = r.config.digest();
        let entry = match &r.outcome {
            Ok(rec) => {
                rec.write(&dir)?;
                serde_json::json!({"cell": r.cell, "seed": r.seed, "digest": cfg_digest, "ok": true,
                                   "final_test_metric": rec.final_test_metric})
            }
            Err(msg) => {
                eprintln!("run {} seed {} failed: {msg}", r.cell, r.seed);
                serde_json::json!({"cell": r.cell, "seed": r.seed, "digest": cfg_digest, "ok": false, "error": msg})
            }
        };
        listing.push(entry);
    }
    let agg = dir.join("aggregate.csv");
    std::fs::write(&agg, table.to_csv()).map_err(|e| PinsError::io(&agg, e))?;
    write_json(&dir.join("sweep.json"), &listing)?;
    println!("{}", table.to_csv().trim_end());
    Ok(if table.failures() > 0 { 1 } else { 0 })
}

fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PinsError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("summary-") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| PinsError::io(&p, e))?;
            let summary: RunSummary =
                serde_json::from_str(&text).map_err(|e| PinsError::Serde(format!("{}: {e}", p.display())))?;
            let jsonl = dir.join(format!("run-{}-{}.jsonl", summary.config_digest, summary.seed));
            let rows_text = std::fs::read_to_string(&jsonl).map_err(|e| PinsError::io(&jsonl, e))?;
            Ok(RunRecord::from_parts(summary, RunRecord::parse_jsonl(&rows_text)?))
        })
        .collect()
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32> {
    let target = &a.target;
    let meta = std::fs::metadata(target).map_err(|e| PinsError::io(target, e))?;
    let (models, records, default_out) = if meta.is_dir() {
        let model = target.join(MODEL_FILE);
        let models = if model.exists() { vec![model] } else { vec![] };
        (models, read_records(target)?, target.join("analysis"))
    } else {
        let parent = target.parent().unwrap_or(Path::new("."));
        (vec![target.clone()], vec![], parent.join("analysis"))
    };
    let reports = models
        .iter()
        .map(|m| sparsity_report(&container::load_registry(m)?, a.rel_tol, &m.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let trajectory = if records.is_empty() {
        None
    } else {
        Some(trajectory_compare(&records)?)
    };
    let out = a.out.clone().unwrap_or(default_out);
    emit_report(&out, &reports, trajectory.as_ref())?;
    let overview: Vec<Value> = reports
        .iter()
        .map(|r| serde_json::json!({"source": r.source, "overall_density": r.overall_density, "mean_rank": r.mean_rank}))
        .collect();
    println!(
        "{}",
        serde_json::json!({"out": out.display().to_string(), "models": overview, "runs": records.len()})
    );
    Ok(0)
}

fn cmd_export(a: &ExportArgs) -> Result<i32> {
    let reg = container::load_registry(&a.model)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let stem = a.model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let suffix = if a.quantize { "csr-i8" } else { "csr" };
        a.model
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("{stem}-{suffix}"))
    });
    let manifest = export_bundle(&reg, &out, a.quantize)?;
    println!(
        "{}",
        serde_json::json!({
            "bundle": out.display().to_string(),
            "matrices": manifest.matrices.len(),
            "dense_bytes": manifest.dense_bytes,
            "sparse_bytes": manifest.sparse_bytes,
        })
    );
    Ok(0)
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| PinsError::Config(format!("dims `{s}` are not ROWSxCOLS")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| PinsError::Config(format!("bad dimension `{v}`")))
    };
    Ok((parse(r)?, parse(c)?))
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let matrices = match (&a.bundle, &a.random) {
        (Some(dir), _) => load_bundle(dir)?.1,
        (None, Some(dims)) => {
            let (r, c) = parse_dims(dims)?;
            if !(0.0..=1.0).contains(&a.sparsity) {
                return Err(PinsError::Config(format!("sparsity {} not in [0, 1]", a.sparsity)));
            }
            let m = random_sparse_matrix(r, c, a.sparsity, a.seed.unwrap_or(0));
            vec![StoredCsr::F32(to_csr(&m)?)]
        }
        (None, None) => return Err(PinsError::Config("give a bundle or --random".into())),
    };
    if a.trials < crate::sparse_export::BENCH_MIN_TRIALS {
        return Err(PinsError::Config(format!(
            "--trials must be >= {}",
            crate::sparse_export::BENCH_MIN_TRIALS
        )));
    }
    let report = bench_stored(&matrices, a.trials, a.seed.unwrap_or(0))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(0)
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use apemo_core::benchmark::{
    no_fallback_rate, preflight, read_records, run_block, BlockConfig, ExecutorKind, Metric,
    RunOptions, RunRecord, RunStore, SCHEMA_VERSION,
};
use apemo_core::frontier::{self, pareto_front, FrontierSpec};
use apemo_core::scheduler::PolicyKind;
use apemo_core::stats::{block_report, StatsConfig};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::{self, ExperimentConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunArgs {
    pub config: PathBuf,
    pub block: Option<String>,
    pub out: PathBuf,
    pub workers: usize,
    pub resume: bool,
    pub stats_seed: Option<u64>,
    /// Suppress per-run console lines.
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub block: String,
    pub executor: ExecutorKind,
    pub config_path: String,
    pub config_hash: String,
    pub output_dir: String,
    pub records: String,
    pub stats_seed: u64,
    pub worker_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRun {
    pub name: String,
    pub executed: usize,
    pub resumed: usize,
    pub records: usize,
    pub no_fallback_rate: f64,
    pub records_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub blocks: Vec<BlockRun>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn select_blocks<'a>(
    cfg: &'a ExperimentConfig,
    name: Option<&str>,
    kind: ExecutorKind,
) -> Result<Vec<&'a BlockConfig>, CliError> {
    let label = match kind {
        ExecutorKind::Abm => "abm",
        ExecutorKind::Llm => "llm",
    };
    match name {
        Some(n) => {
            let b = cfg.block(n)?;
            if b.executor != kind {
                return Err(CliError::Config(format!(
                    "block {n:?} does not use the {label} executor"
                )));
            }
            Ok(vec![b])
        }
        None => {
            let v: Vec<_> = cfg.blocks.iter().filter(|b| b.executor == kind).collect();
            if v.is_empty() {
                return Err(CliError::Config(format!("config defines no {label} blocks")));
            }
            Ok(v)
        }
    }
}

fn run_blocks(args: &RunArgs, kind: ExecutorKind) -> Result<RunOutcome, CliError> {
    let loaded = config::load(&args.config)?;
    let cfg = &loaded.config;
    let blocks = select_blocks(cfg, args.block.as_deref(), kind)?;
    let settings = cfg.settings();
    if kind == ExecutorKind::Llm {
        for b in &blocks {
            preflight(b, &settings).map_err(|e| match e {
                apemo_core::ApemoError::Transport { endpoint, message } => {
                    CliError::Transport(format!("preflight failed for {endpoint}: {message}"))
                }
                other => other.into(),
            })?;
        }
    }
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let stats_seed = args.stats_seed.unwrap_or(cfg.stats.seed);
    let mut out = Vec::new();
    for block in blocks {
        let records_path = args.out.join(format!("{}.jsonl", block.name));
        let manifest_path = args.out.join(format!("{}.manifest.json", block.name));
        let hash = cfg.block_hash(block);
        if args.resume {
            if let Ok(text) = fs::read_to_string(&manifest_path) {
                let old: RunManifest = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
                if old.config_hash != hash && records_path.exists() {
                    return Err(CliError::Config(format!(
                        "block {:?} changed since {} was written; rerun with --resume false or another --out",
                        block.name,
                        records_path.display()
                    )));
                }
            }
        } else if records_path.exists() {
            fs::remove_file(&records_path).map_err(|e| io_err(&records_path, e))?;
        }
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION.into(),
            block: block.name.clone(),
            executor: block.executor,
            config_path: loaded.path.display().to_string(),
            config_hash: hash,
            output_dir: args.out.display().to_string(),
            records: format!("{}.jsonl", block.name),
            stats_seed,
            worker_limit: args.workers.max(1),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Other(e.to_string()))?;
        fs::write(&manifest_path, text + "\n").map_err(|e| io_err(&manifest_path, e))?;

        let store = RunStore::open(&records_path)?;
        let quiet = args.quiet;
        let print = move |r: &RunRecord, resumed: bool| {
            if !quiet {
                println!(
                    "{} run {} mean_quality={:.4} endpoint={:.4} cost={:.0} fallback={}{}",
                    r.block,
                    r.run_key(),
                    r.mean_quality,
                    r.endpoint_quality,
                    r.total_cost,
                    r.fallback,
                    if resumed { " (resumed)" } else { "" }
                );
            }
        };
        let outcome = run_block(
            block,
            &settings,
            RunOptions {
                workers: args.workers.max(1),
                store: Some(&store),
                on_record: Some(&print),
            },
        )?;
        let rate = outcome.no_fallback_rate()?;
        if block.strict && rate < 1.0 {
            warn!(
                "strict block {} failed its gate: no_fallback_rate={rate:.4}; results are directional evidence only",
                block.name
            );
        }
        if !args.quiet {
            println!(
                "block {}: {} runs ({} executed, {} resumed), no_fallback_rate={:.4}",
                block.name,
                outcome.records.len(),
                outcome.executed,
                outcome.resumed,
                rate
            );
        }
        out.push(BlockRun {
            name: block.name.clone(),
            executed: outcome.executed,
            resumed: outcome.resumed,
            records: outcome.records.len(),
            no_fallback_rate: rate,
            records_path,
        });
    }
    Ok(RunOutcome { blocks: out })
}

pub fn cmd_simulate(args: &RunArgs) -> Result<RunOutcome, CliError> {
    run_blocks(args, ExecutorKind::Abm)
}

pub fn cmd_run_llm(args: &RunArgs) -> Result<RunOutcome, CliError> {
    run_blocks(args, ExecutorKind::Llm)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportArgs {
    /// Directory holding `<block>.jsonl` record files.
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub block: Option<String>,
    pub baselines: Vec<PolicyKind>,
    pub stats_seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub reports_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Blocks whose tables carry the directional-evidence banner.
    pub directional: Vec<String>,
    pub diagnostics: Vec<String>,
}

fn load_blocks(dir: &Path, only: Option<&str>) -> Result<BTreeMap<String, Vec<RunRecord>>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::EmptyInput(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut blocks: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for f in files {
        for r in read_records(&f)? {
            if only.is_none_or(|b| b == r.block) {
                blocks.entry(r.block.clone()).or_default().push(r);
            }
        }
    }
    if blocks.is_empty() {
        return Err(CliError::EmptyInput(format!(
            "no run records under {}",
            dir.display()
        )));
    }
    Ok(blocks)
}

struct ReportContext {
    stats: StatsConfig,
    treatment: PolicyKind,
    metrics: Option<Vec<Metric>>,
    frontier: Vec<FrontierSpec>,
}

fn report_context(args: &ReportArgs) -> Result<ReportContext, CliError> {
    let cfg = match &args.config {
        Some(p) => config::load(p)?.config,
        None => ExperimentConfig::default(),
    };
    let mut stats = cfg.stats;
    if let Some(s) = args.stats_seed {
        stats.seed = s;
    }
    Ok(ReportContext {
        stats,
        treatment: cfg.report.treatment.unwrap_or(PolicyKind::Apemo),
        metrics: cfg.report.metrics.clone(),
        frontier: cfg.frontier.clone(),
    })
}

fn baselines_for(records: &[RunRecord], treatment: PolicyKind, requested: &[PolicyKind]) -> Vec<PolicyKind> {
    PolicyKind::ALL
        .into_iter()
        .filter(|p| *p != treatment)
        .filter(|p| requested.is_empty() || requested.contains(p))
        .filter(|p| records.iter().any(|r| r.policy == *p))
        .collect()
}

fn default_metrics(records: &[RunRecord]) -> Vec<Metric> {
    let mut m = vec![Metric::MeanQuality, Metric::ReuseProbability, Metric::AvgFrustration];
    if records.iter().any(|r| r.trap.is_some()) {
        m.extend([
            Metric::EndpointQuality,
            Metric::TrapQualityRebound2,
            Metric::TrapFrustrationDrop2,
        ]);
    }
    m
}

/// Per-turn means over all episodes of each policy, for trap plots.
fn trap_series_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("policy,turn,mean_quality,mean_frustration,episodes\n");
    for p in PolicyKind::ALL {
        let eps: Vec<_> = records
            .iter()
            .filter(|r| r.policy == p)
            .flat_map(|r| r.episode_metrics.iter())
            .collect();
        let Some(first) = eps.first() else { continue };
        for t in 0..first.qualities.len() {
            let n = eps.len() as f64;
            let q = eps.iter().map(|e| e.qualities[t]).sum::<f64>() / n;
            let f = eps.iter().map(|e| e.frustrations[t]).sum::<f64>() / n;
            let _ = writeln!(out, "{},{},{},{},{}", p, t + 1, q, f, eps.len());
        }
    }
    out
}

fn write(files: &mut Vec<PathBuf>, path: PathBuf, text: &str) -> Result<(), CliError> {
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    files.push(path);
    Ok(())
}

fn frontier_outputs(
    blocks: &BTreeMap<String, Vec<RunRecord>>,
    cx: &ReportContext,
    requested: &[PolicyKind],
    dir: &Path,
    files: &mut Vec<PathBuf>,
    diagnostics: &mut Vec<String>,
) -> Result<String, CliError> {
    let specs = if cx.frontier.is_empty() {
        let mut v = Vec::new();
        for (name, recs) in blocks {
            if !recs.iter().any(|r| r.policy == cx.treatment) {
                continue;
            }
            for b in baselines_for(recs, cx.treatment, requested) {
                v.push(FrontierSpec {
                    label: format!("{name} vs {b}"),
                    block: name.clone(),
                    baseline: b,
                    treatment: cx.treatment,
                    metric: None,
                });
            }
        }
        v
    } else {
        cx.frontier.clone()
    };
    let (summaries, mut diags) = frontier::summarize_all(&specs, blocks);
    let (rows, row_diags) = frontier::frontier_table(&summaries);
    diags.extend(row_diags);
    let mut text = frontier::render_table(&rows);
    let points: Vec<_> = rows.iter().map(|r| r.point()).collect();
    let front: Vec<String> = pareto_front(&points).into_iter().map(|p| p.label).collect();
    let _ = writeln!(text, "pareto front: {}", if front.is_empty() { "(empty)".into() } else { front.join("; ") });
    for d in &diags {
        let _ = writeln!(text, "omitted: {d}");
    }
    write(files, dir.join("frontier.txt"), &text)?;
    write(files, dir.join("frontier.csv"), &frontier::to_csv(&rows))?;
    write(files, dir.join("frontier.jsonl"), &frontier::to_jsonl(&rows)?)?;
    diagnostics.extend(diags);
    Ok(text)
}

pub fn cmd_report(args: &ReportArgs) -> Result<ReportOutcome, CliError> {
    let blocks = load_blocks(&args.out, args.block.as_deref())?;
    let cx = report_context(args)?;
    let dir = args.out.join("reports");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut files = Vec::new();
    let mut directional = Vec::new();
    let mut diagnostics = Vec::new();
    for (name, recs) in &blocks {
        if !recs.iter().any(|r| r.policy == cx.treatment) {
            diagnostics.push(format!("{name}: no {} runs, table skipped", cx.treatment));
            continue;
        }
        let baselines = baselines_for(recs, cx.treatment, &args.baselines);
        if baselines.is_empty() {
            diagnostics.push(format!("{name}: no baseline runs, table skipped"));
            continue;
        }
        let metrics = cx.metrics.clone().unwrap_or_else(|| default_metrics(recs));
        let report = block_report(recs, cx.treatment, &baselines, &metrics, &cx.stats)?;
        if report.directional {
            directional.push(name.clone());
        }
        let text = report.render_text();
        if !args.quiet {
            println!("{text}");
        }
        write(&mut files, dir.join(format!("{name}.txt")), &text)?;
        write(&mut files, dir.join(format!("{name}.jsonl")), &report.to_jsonl()?)?;
        write(&mut files, dir.join(format!("{name}.csv")), &report.to_csv())?;
        if recs.iter().any(|r| r.trap.is_some()) {
            write(&mut files, dir.join(format!("{name}_trap_series.csv")), &trap_series_csv(recs))?;
        }
        let _ = no_fallback_rate(recs)?;
    }
    let text = frontier_outputs(&blocks, &cx, &args.baselines, &dir, &mut files, &mut diagnostics)?;
    if !args.quiet {
        print!("{text}");
    }
    for d in &diagnostics {
        warn!("{d}");
    }
    Ok(ReportOutcome {
        reports_dir: dir,
        files,
        directional,
        diagnostics,
    })
}

pub fn cmd_frontier(args: &ReportArgs) -> Result<ReportOutcome, CliError> {
    let blocks = load_blocks(&args.out, args.block.as_deref())?;
    let cx = report_context(args)?;
    let dir = args.out.join("reports");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut files = Vec::new();
    let mut diagnostics = Vec::new();
    let text = frontier_outputs(&blocks, &cx, &args.baselines, &dir, &mut files, &mut diagnostics)?;
    if !args.quiet {
        print!("{text}");
    }
    Ok(ReportOutcome {
        reports_dir: dir,
        files,
        directional: Vec::new(),
        diagnostics,
    })
}

/// Parse and validate a config file; returns a short description.
pub fn cmd_validate_config(path: &Path) -> Result<String, CliError> {
    let loaded = config::load(path)?;
    let cfg = &loaded.config;
    let mut s = format!("{}: ok, {} blocks\n", path.display(), cfg.blocks.len());
    for b in &cfg.blocks {
        let _ = writeln!(
            s,
            "  {} executor={:?} T={} models={} seeds={} policies={} episodes={} runs={}",
            b.name,
            b.executor,
            b.horizon,
            b.models.len(),
            b.seeds().len(),
            b.policies.len(),
            b.episodes,
            b.cells().len()
        );
    }
    Ok(s)
}

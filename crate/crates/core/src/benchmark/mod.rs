//! Experimental blocks: every (model, seed, policy) cell of a block is one
//! run of `episodes` trajectories, aggregated into a [`RunRecord`].

mod store;

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, OnceLock};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use store::{read_records, RunStore};

use crate::abm::{make_abm_executor, AbmConfig, TrapSpec};
use crate::error::{ApemoError, Result};
use crate::executor::Executor;
use crate::llm::{ChatClient, LlmConfig, LlmExecutor, Topology};
use crate::scheduler::{run_trajectory, PolicyKind, SchedulerConfig, TrajectorySpec};
use crate::trajectory::{
    average_frustration, objective_value, peak_end_quality, reuse_per_cost, ObjectiveWeights,
    ReuseModel, Trajectory,
};

pub const SCHEMA_VERSION: &str = "1.0";
pub const SCHEMA_MAJOR: u32 = 1;

const TASKS_V1: &str = include_str!("../../tasks/v1.txt");

/// The fixed task list, one prompt per line.
pub fn tasks() -> &'static [&'static str] {
    static TASKS: OnceLock<Vec<&'static str>> = OnceLock::new();
    TASKS.get_or_init(|| TASKS_V1.lines().filter(|l| !l.trim().is_empty()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    Abm,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start.saturating_add(*count)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    /// Defaults to `ceil(T/2)`.
    #[serde(default)]
    pub trap_turn: Option<usize>,
    #[serde(default = "default_severity")]
    pub severity: f64,
    #[serde(default = "default_recovery")]
    pub recovery_rate: f64,
}

fn default_severity() -> f64 {
    0.4
}

fn default_recovery() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub name: String,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    pub horizon: usize,
    #[serde(default = "one")]
    pub episodes: u32,
    pub policies: Vec<PolicyKind>,
    pub seeds: SeedSpec,
    /// The trajectory cap is `tokens_per_turn * horizon`.
    #[serde(default = "default_tokens_per_turn")]
    pub tokens_per_turn: u64,
    #[serde(default)]
    pub trap: Option<TrapConfig>,
    #[serde(default)]
    pub executor: ExecutorKind,
    /// Strict blocks require a clean no-fallback gate.
    #[serde(default)]
    pub strict: bool,
    /// Overrides the configured LLM topology for this block.
    #[serde(default)]
    pub topology: Option<Topology>,
}

fn default_models() -> Vec<String> {
    vec!["abm".into()]
}

fn one() -> u32 {
    1
}

fn default_tokens_per_turn() -> u64 {
    1000
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ApemoError::config(format!("block {:?}: {m}", self.name)));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return fail("name must be non-empty [A-Za-z0-9_-]".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if self.episodes == 0 {
            return fail("episodes must be >= 1".into());
        }
        if self.policies.is_empty() {
            return fail("policies must be non-empty".into());
        }
        if self.policies.iter().collect::<HashSet<_>>().len() != self.policies.len() {
            return fail("policies must be distinct".into());
        }
        let seeds = self.seeds.expand();
        if seeds.is_empty() {
            return fail("seeds must be non-empty".into());
        }
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if self.models.is_empty() || self.models.iter().any(|m| m.trim().is_empty()) {
            return fail("models must be non-empty strings".into());
        }
        if self.models.iter().collect::<HashSet<_>>().len() != self.models.len() {
            return fail("models must be distinct".into());
        }
        if self.tokens_per_turn == 0 {
            return fail("tokens_per_turn must be >= 1".into());
        }
        if let Some(trap) = self.trap_spec() {
            trap.validate(self.horizon)?;
            check_trap_window(trap.trap_turn, self.horizon)?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.expand()
    }

    pub fn budget_cap(&self) -> u64 {
        self.tokens_per_turn.saturating_mul(self.horizon as u64)
    }

    pub fn trap_spec(&self) -> Option<TrapSpec> {
        self.trap.map(|t| TrapSpec {
            trap_turn: t.trap_turn.unwrap_or(self.horizon.div_ceil(2)),
            severity: t.severity,
            recovery_rate: t.recovery_rate,
        })
    }

    /// Cells in deterministic (model, seed, policy) order.
    pub fn cells(&self) -> Vec<RunKey> {
        let seeds = self.seeds();
        let mut out = Vec::with_capacity(self.models.len() * seeds.len() * self.policies.len());
        for model in &self.models {
            for &seed in &seeds {
                for &policy in &self.policies {
                    out.push(RunKey {
                        model: model.clone(),
                        seed,
                        policy,
                        horizon: self.horizon,
                    });
                }
            }
        }
        out
    }
}

fn check_trap_window(trap_turn: usize, horizon: usize) -> Result<()> {
    if trap_turn < 2 || trap_turn + 2 > horizon {
        return Err(ApemoError::config(format!(
            "trap_turn {trap_turn} needs one turn before and two after it within T={horizon}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub model: String,
    pub seed: u64,
    pub policy: PolicyKind,
    pub horizon: usize,
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/seed={}/{}/T={}", self.model, self.seed, self.policy, self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapMetrics {
    pub endpoint_quality: f64,
    pub quality_drop: f64,
    pub quality_rebound2: f64,
    pub frustration_drop2: f64,
}

/// Trap response of one trajectory; `trap_turn` is 1-based.
pub fn trap_metrics(traj: &Trajectory, trap_turn: usize) -> Result<TrapMetrics> {
    check_trap_window(trap_turn, traj.horizon())?;
    let q = |t: usize| traj.turns[t - 1].quality;
    let s = |t: usize| traj.turns[t - 1].frustration;
    Ok(TrapMetrics {
        endpoint_quality: q(traj.horizon()),
        quality_drop: q(trap_turn - 1) - q(trap_turn),
        quality_rebound2: q(trap_turn + 2) - q(trap_turn),
        frustration_drop2: s(trap_turn) - s(trap_turn + 2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: u32,
    pub task_id: usize,
    pub mean_quality: f64,
    pub peak_end_quality: f64,
    pub reuse_probability: f64,
    pub reuse_per_cost: Option<f64>,
    pub avg_frustration: f64,
    pub total_cost: u64,
    pub endpoint_quality: f64,
    pub objective: f64,
    pub repairs: usize,
    pub fallback: bool,
    pub trap: Option<TrapMetrics>,
    pub qualities: Vec<f64>,
    pub frustrations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: String,
    pub block: String,
    pub model: String,
    pub seed: u64,
    pub policy: PolicyKind,
    pub horizon: usize,
    pub episodes: u32,
    pub budget_cap: u64,
    pub mean_quality: f64,
    pub peak_end_quality: f64,
    pub reuse_probability: f64,
    pub reuse_per_cost: Option<f64>,
    pub avg_frustration: f64,
    pub total_cost: f64,
    pub policy_cost: f64,
    pub repair_cost: f64,
    pub overhead_cost: f64,
    pub endpoint_quality: f64,
    pub objective: f64,
    pub trap_turn: Option<usize>,
    pub trap: Option<TrapMetrics>,
    pub fallback: bool,
    pub episode_metrics: Vec<EpisodeMetrics>,
}

/// Run-level metrics available to statistics and frontier code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanQuality,
    PeakEndQuality,
    ReuseProbability,
    ReusePerCost,
    AvgFrustration,
    TotalCost,
    EndpointQuality,
    Objective,
    TrapQualityDrop,
    TrapQualityRebound2,
    TrapFrustrationDrop2,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::MeanQuality,
        Metric::PeakEndQuality,
        Metric::ReuseProbability,
        Metric::ReusePerCost,
        Metric::AvgFrustration,
        Metric::TotalCost,
        Metric::EndpointQuality,
        Metric::Objective,
        Metric::TrapQualityDrop,
        Metric::TrapQualityRebound2,
        Metric::TrapFrustrationDrop2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanQuality => "mean_quality",
            Metric::PeakEndQuality => "peak_end_quality",
            Metric::ReuseProbability => "reuse_probability",
            Metric::ReusePerCost => "reuse_per_cost",
            Metric::AvgFrustration => "avg_frustration",
            Metric::TotalCost => "total_cost",
            Metric::EndpointQuality => "endpoint_quality",
            Metric::Objective => "objective",
            Metric::TrapQualityDrop => "trap_quality_drop",
            Metric::TrapQualityRebound2 => "trap_quality_rebound2",
            Metric::TrapFrustrationDrop2 => "trap_frustration_drop2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = ApemoError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ApemoError::config(format!("unknown metric {s:?}")))
    }
}

impl RunRecord {
    pub fn run_key(&self) -> RunKey {
        RunKey {
            model: self.model.clone(),
            seed: self.seed,
            policy: self.policy,
            horizon: self.horizon,
        }
    }

    pub fn check_schema(&self) -> Result<()> {
        let major = self
            .schema_version
            .split('.')
            .next()
            .and_then(|m| m.parse::<u32>().ok());
        if major != Some(SCHEMA_MAJOR) {
            return Err(ApemoError::Schema {
                found: self.schema_version.clone(),
                expected: SCHEMA_MAJOR,
            });
        }
        Ok(())
    }

    /// Value of a run-level metric; `None` when undefined for this run.
    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::MeanQuality => Some(self.mean_quality),
            Metric::PeakEndQuality => Some(self.peak_end_quality),
            Metric::ReuseProbability => Some(self.reuse_probability),
            Metric::ReusePerCost => self.reuse_per_cost,
            Metric::AvgFrustration => Some(self.avg_frustration),
            Metric::TotalCost => Some(self.total_cost),
            Metric::EndpointQuality => Some(self.endpoint_quality),
            Metric::Objective => Some(self.objective),
            Metric::TrapQualityDrop => self.trap.map(|t| t.quality_drop),
            Metric::TrapQualityRebound2 => self.trap.map(|t| t.quality_rebound2),
            Metric::TrapFrustrationDrop2 => self.trap.map(|t| t.frustration_drop2),
        }
    }
}

/// Fraction of runs that completed without executor failure.
pub fn no_fallback_rate(records: &[RunRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(ApemoError::invalid("no_fallback_rate of zero records"));
    }
    let clean = records.iter().filter(|r| !r.fallback).count();
    Ok(clean as f64 / records.len() as f64)
}

/// Everything besides the block definition needed to execute a block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchSettings {
    pub scheduler: SchedulerConfig,
    pub objective: ObjectiveWeights,
    pub reuse: ReuseModel,
    pub abm: AbmConfig,
    pub llm: Option<LlmConfig>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one episode; shared by every policy of the same cell row.
pub fn episode_seed(model: &str, seed: u64, episode: u32) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in model.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(h ^ splitmix(seed ^ splitmix(episode as u64)))
}

/// Task shown in `episode` of run `seed`.
pub fn task_index(seed: u64, episode: u32, episodes: u32) -> usize {
    let n = tasks().len() as u64;
    (seed.wrapping_mul(episodes as u64).wrapping_add(episode as u64) % n) as usize
}

pub fn episode_metrics(
    traj: &Trajectory,
    task_id: usize,
    trap_turn: Option<usize>,
    settings: &BenchSettings,
) -> Result<EpisodeMetrics> {
    let q = peak_end_quality(traj, &settings.objective)?;
    let f = average_frustration(traj)?;
    let r = settings.reuse.probability(q, f);
    let cost = traj.cost.total();
    let trap = trap_turn.map(|t| trap_metrics(traj, t)).transpose()?;
    Ok(EpisodeMetrics {
        episode_id: traj.episode_id,
        task_id,
        mean_quality: traj.mean_quality()?,
        peak_end_quality: q,
        reuse_probability: r,
        reuse_per_cost: reuse_per_cost(r, cost).ok(),
        avg_frustration: f,
        total_cost: cost,
        endpoint_quality: traj.turns[traj.horizon() - 1].quality,
        objective: objective_value(q, r, f, cost, traj.budget_cap, &settings.objective)?,
        repairs: traj.repairs.len(),
        fallback: traj.fallback,
        trap,
        qualities: traj.qualities(),
        frustrations: traj.frustrations(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    crate::trajectory::mean(xs).unwrap_or(0.0)
}

fn aggregate(
    block: &BlockConfig,
    key: &RunKey,
    trajs: &[Trajectory],
    episodes: Vec<EpisodeMetrics>,
) -> RunRecord {
    let avg = |f: &dyn Fn(&EpisodeMetrics) -> f64| mean(&episodes.iter().map(f).collect::<Vec<_>>());
    let cost_avg = |f: &dyn Fn(&Trajectory) -> u64| {
        mean(&trajs.iter().map(|t| f(t) as f64).collect::<Vec<_>>())
    };
    let rpc: Option<Vec<f64>> = episodes.iter().map(|e| e.reuse_per_cost).collect();
    let trap = if episodes.iter().all(|e| e.trap.is_some()) && !episodes.is_empty() {
        let t = |f: &dyn Fn(&TrapMetrics) -> f64| {
            mean(&episodes.iter().map(|e| f(e.trap.as_ref().expect("checked"))).collect::<Vec<_>>())
        };
        Some(TrapMetrics {
            endpoint_quality: t(&|m| m.endpoint_quality),
            quality_drop: t(&|m| m.quality_drop),
            quality_rebound2: t(&|m| m.quality_rebound2),
            frustration_drop2: t(&|m| m.frustration_drop2),
        })
    } else {
        None
    };
    RunRecord {
        schema_version: SCHEMA_VERSION.into(),
        block: block.name.clone(),
        model: key.model.clone(),
        seed: key.seed,
        policy: key.policy,
        horizon: key.horizon,
        episodes: block.episodes,
        budget_cap: block.budget_cap(),
        mean_quality: avg(&|e| e.mean_quality),
        peak_end_quality: avg(&|e| e.peak_end_quality),
        reuse_probability: avg(&|e| e.reuse_probability),
        reuse_per_cost: rpc.map(|v| mean(&v)),
        avg_frustration: avg(&|e| e.avg_frustration),
        total_cost: avg(&|e| e.total_cost as f64),
        policy_cost: cost_avg(&|t| t.cost.policy_cost),
        repair_cost: cost_avg(&|t| t.cost.repair_cost),
        overhead_cost: cost_avg(&|t| t.cost.overhead_cost),
        endpoint_quality: avg(&|e| e.endpoint_quality),
        objective: avg(&|e| e.objective),
        trap_turn: block.trap_spec().map(|t| t.trap_turn),
        trap,
        fallback: episodes.iter().any(|e| e.fallback),
        episode_metrics: episodes,
    }
}

enum Backend {
    Abm,
    Llm {
        clients: Vec<(String, Arc<ChatClient>)>,
        critic: Option<Arc<ChatClient>>,
        cfg: Box<LlmConfig>,
    },
}

impl Backend {
    fn make(&self, block: &BlockConfig, settings: &BenchSettings, model: &str, seed: u64, task: usize) -> Result<Box<dyn Executor>> {
        match self {
            Backend::Abm => Ok(Box::new(make_abm_executor(settings.abm, block.trap_spec(), seed)?)),
            Backend::Llm { clients, critic, cfg } => {
                let client = clients
                    .iter()
                    .find(|(m, _)| m == model)
                    .map(|(_, c)| Arc::clone(c))
                    .expect("client per model");
                let ex = LlmExecutor::new(client, critic.clone(), cfg, tasks()[task])?
                    .with_trap(block.trap_spec().map(|t| t.trap_turn));
                Ok(Box::new(ex))
            }
        }
    }
}

/// Execute one cell.
pub fn run_cell(block: &BlockConfig, settings: &BenchSettings, key: &RunKey) -> Result<RunRecord> {
    let backend = backend_for(block, settings)?;
    run_cell_with(block, settings, &backend, key)
}

fn run_cell_with(block: &BlockConfig, settings: &BenchSettings, backend: &Backend, key: &RunKey) -> Result<RunRecord> {
    let trap_turn = block.trap_spec().map(|t| t.trap_turn);
    let mut trajs = Vec::with_capacity(block.episodes as usize);
    let mut metrics = Vec::with_capacity(block.episodes as usize);
    for e in 0..block.episodes {
        let seed = episode_seed(&key.model, key.seed, e);
        let task = task_index(key.seed, e, block.episodes);
        let mut ex = backend.make(block, settings, &key.model, seed, task)?;
        let spec = TrajectorySpec {
            policy: key.policy,
            horizon: key.horizon,
            budget_cap: block.budget_cap(),
            seed,
            model_id: key.model.clone(),
            episode_id: e,
        };
        let traj = run_trajectory(ex.as_mut(), spec, &settings.scheduler)?;
        metrics.push(episode_metrics(&traj, task, trap_turn, settings)?);
        trajs.push(traj);
    }
    Ok(aggregate(block, key, &trajs, metrics))
}

fn backend_for(block: &BlockConfig, settings: &BenchSettings) -> Result<Backend> {
    match block.executor {
        ExecutorKind::Abm => {
            settings.abm.validate()?;
            Ok(Backend::Abm)
        }
        ExecutorKind::Llm => {
            let mut cfg = settings.llm.clone().ok_or_else(|| {
                ApemoError::config(format!("block {:?} uses the llm executor but no llm section is configured", block.name))
            })?;
            if let Some(t) = block.topology {
                cfg.topology = t;
            }
            cfg.validate()?;
            let mut clients = Vec::new();
            for model in &block.models {
                let mut endpoint = cfg.endpoint.clone();
                endpoint.model_id = model.clone();
                clients.push((model.clone(), Arc::new(ChatClient::new(endpoint, cfg.dialect.clone())?)));
            }
            let critic = cfg
                .critic_endpoint
                .clone()
                .map(|e| ChatClient::new(e, cfg.dialect.clone()).map(Arc::new))
                .transpose()?;
            Ok(Backend::Llm { clients, critic, cfg: Box::new(cfg) })
        }
    }
}

/// Check that the block's model server answers.
pub fn preflight(block: &BlockConfig, settings: &BenchSettings) -> Result<()> {
    if let Backend::Llm { clients, critic, .. } = backend_for(block, settings)? {
        if let Some((_, c)) = clients.first() {
            c.preflight()?;
        }
        if let Some(c) = critic {
            c.preflight()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutcome {
    /// One record per cell, in cell order.
    pub records: Vec<RunRecord>,
    pub executed: usize,
    pub resumed: usize,
}

impl BlockOutcome {
    pub fn no_fallback_rate(&self) -> Result<f64> {
        no_fallback_rate(&self.records)
    }
}

pub type RecordCallback<'a> = dyn Fn(&RunRecord, bool) + Sync + 'a;

#[derive(Default)]
pub struct RunOptions<'a> {
    pub workers: usize,
    pub store: Option<&'a RunStore>,
    /// Called once per cell, in cell order, with `true` for resumed cells.
    pub on_record: Option<&'a RecordCallback<'a>>,
}

/// Execute every cell of `block`, skipping cells already in the store.
pub fn run_block(block: &BlockConfig, settings: &BenchSettings, opts: RunOptions<'_>) -> Result<BlockOutcome> {
    block.validate()?;
    settings.scheduler.validate()?;
    settings.objective.validate()?;
    let backend = backend_for(block, settings)?;
    let workers = opts.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ApemoError::config(format!("worker pool: {e}")))?;

    let cells = block.cells();
    let mut records = Vec::with_capacity(cells.len());
    let (mut executed, mut resumed) = (0, 0);
    let mut pending = Vec::new();
    // Resumed cells are emitted as soon as every earlier cell is known.
    let flush = |pending: &mut Vec<RunKey>, records: &mut Vec<RunRecord>, executed: &mut usize| -> Result<()> {
        let fresh: Vec<Result<RunRecord>> = pool.install(|| {
            pending
                .par_iter()
                .map(|k| run_cell_with(block, settings, &backend, k))
                .collect()
        });
        for r in fresh {
            let r = r?;
            if let Some(store) = opts.store {
                store.append(&r)?;
            }
            if let Some(cb) = opts.on_record {
                cb(&r, false);
            }
            *executed += 1;
            records.push(r);
        }
        pending.clear();
        Ok(())
    };
    for key in cells {
        if let Some(done) = opts.store.and_then(|s| s.get(&key)) {
            flush(&mut pending, &mut records, &mut executed)?;
            if let Some(cb) = opts.on_record {
                cb(done, true);
            }
            records.push(done.clone());
            resumed += 1;
            continue;
        }
        pending.push(key);
        if pending.len() >= workers {
            flush(&mut pending, &mut records, &mut executed)?;
        }
    }
    flush(&mut pending, &mut records, &mut executed)?;
    info!(
        "block {}: {executed} executed, {resumed} resumed",
        block.name
    );
    Ok(BlockOutcome {
        records,
        executed,
        resumed,
    })
}

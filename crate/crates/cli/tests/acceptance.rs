//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use apemo_cli::{cmd_report, cmd_simulate, ExperimentConfig, ReportArgs, RunArgs};
use apemo_core::abm::{make_abm_executor, AbmConfig, TrapSpec};
use apemo_core::benchmark::{
    run_block, trap_metrics, BlockConfig, Metric, RunOptions, SeedSpec, TrapConfig,
};
use apemo_core::executor::{Attempt, Executor, Phase, TurnOutput, TurnRequest};
use apemo_core::frontier::{dominates, frontier_table, pareto_front, ComparisonSummary, FrontierPoint};
use apemo_core::llm::client::{ChatClient, Dialect, ModelEndpoint};
use apemo_core::llm::mock::{chat_response, MockBehavior, MockServer};
use apemo_core::llm::{role_caps, LlmConfig, LlmExecutor, Topology};
use apemo_core::scheduler::{
    run_trajectory, DetectionThresholds, PolicyKind, SchedulerConfig, TrajectorySpec,
};
use apemo_core::signals::{OutputDigest, SignalConfig};
use apemo_core::stats::{bootstrap_ci, delta_report, sign_test, StatsConfig};
use apemo_core::trajectory::{peak_end_quality, ObjectiveWeights, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Records every request and its reported usage.
struct Recording<E> {
    inner: E,
    calls: Vec<(Phase, u64, u64)>,
}

impl<E: Executor> Executor for Recording<E> {
    fn task_digest(&self) -> OutputDigest {
        self.inner.task_digest()
    }

    fn execute(&mut self, r: &TurnRequest<'_>) -> apemo_core::Result<TurnOutput> {
        let out = self.inner.execute(r)?;
        self.calls.push((r.phase, r.allocated_tokens, out.tokens_used));
        Ok(out)
    }

    fn commit(&mut self, turn: usize, kept: Attempt) {
        self.inner.commit(turn, kept)
    }
}

fn random_scheduler(rng: &mut ChaCha8Rng) -> SchedulerConfig {
    let plan_fraction = rng.random_range(0.0..0.4);
    SchedulerConfig {
        skim: rng.random_range(0.0..=1.0),
        detection: DetectionThresholds {
            q_threshold: rng.random_range(0.0..=1.0),
            drop_threshold: rng.random_range(0.0..0.6),
            frustration_threshold: rng.random_range(0.0..=1.0),
        },
        ending_threshold: rng.random_range(0.0..=1.0),
        max_repairs: rng.random_range(0..5),
        overhead_per_turn: rng.random_range(0..200),
        repair_scale: rng.random_range(0.0..3.0),
        plan_fraction,
        reflect_fraction: rng.random_range(0.0..(1.0 - plan_fraction)),
        signals: SignalConfig {
            smoothing: rng.random_range(0.0..=1.0),
            ..SignalConfig::default()
        },
    }
}

fn budget_safety() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for i in 0..10_000u64 {
        let policy = PolicyKind::ALL[rng.random_range(0..PolicyKind::ALL.len())];
        let horizon = rng.random_range(1..=16);
        let cap = rng.random_range(horizon as u64..=horizon as u64 * 1500);
        let cfg = random_scheduler(&mut rng);
        let abm = AbmConfig {
            initial_quality: rng.random_range(0.2..=1.0),
            drift: rng.random_range(-0.08..0.02),
            noise_sd: rng.random_range(0.0..0.15),
            ..AbmConfig::default()
        };
        let trap = (horizon >= 4 && rng.random_bool(0.5)).then(|| TrapSpec {
            trap_turn: rng.random_range(2..=horizon - 2),
            severity: rng.random_range(0.0..=1.0),
            recovery_rate: rng.random_range(0.0..=1.0),
        });
        let seed = rng.random();
        let mut ex = Recording {
            inner: make_abm_executor(abm, trap, seed).map_err(e)?,
            calls: Vec::new(),
        };
        let spec = TrajectorySpec {
            policy,
            horizon,
            budget_cap: cap,
            seed,
            model_id: "abm".into(),
            episode_id: 0,
        };
        let traj = run_trajectory(&mut ex, spec, &cfg).map_err(e)?;
        let c = traj.cost;
        ensure(c.total() <= cap, || format!("case {i}: cost {} > cap {cap}", c.total()))?;
        ensure(c.total() == c.policy_cost + c.repair_cost + c.overhead_cost, || {
            format!("case {i}: ledger components do not sum")
        })?;
        let turn_spend: u64 = traj.turns.iter().map(|t| t.tokens_spent).sum();
        ensure(turn_spend <= c.total(), || format!("case {i}: per-turn spend exceeds ledger"))?;
        let used: u64 = ex.calls.iter().map(|&(_, alloc, used)| used.min(alloc)).sum();
        ensure(used + c.overhead_cost >= c.policy_cost + c.repair_cost && used <= cap, || {
            format!("case {i}: executor usage {used} inconsistent with ledger {c:?}")
        })?;
        ensure(ex.calls.iter().all(|&(_, alloc, _)| alloc <= cap), || format!("case {i}: allocation above cap"))?;
        checked += 1;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("{checked} trajectories, 0 violations, {:.1}s", took.as_secs_f64()))
}

fn peak_end_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let f = vec![0.0; n];
        let w_peak = rng.random_range(0.0..=1.0);
        let w = ObjectiveWeights {
            w_peak,
            w_end: 1.0 - w_peak,
            ..ObjectiveWeights::default()
        };
        let traj = Trajectory::from_series(PolicyKind::Uniform, &q, &f).map_err(e)?;
        let got = peak_end_quality(&traj, &w).map_err(e)?;
        let mut peak = q[0];
        for &x in &q {
            if x > peak {
                peak = x;
            }
        }
        let ending = if n == 1 { q[0] } else { (q[n - 2] + q[n - 1]) / 2.0 };
        let want = w_peak * peak + (1.0 - w_peak) * ending;
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("1000 trajectories, max error {worst:e}"))
}

fn fingerprint(t: &Trajectory) -> String {
    format!("{:?}|{:?}|{:?}|{}", t.turns, t.cost, t.repairs, t.fallback)
}

fn policy_reduction() -> Outcome {
    let base = SchedulerConfig::default();
    let reduced = SchedulerConfig {
        skim: 0.0,
        detection: DetectionThresholds::unreachable(),
        ending_threshold: 0.0,
        overhead_per_turn: 0,
        ..base
    };
    for seed in 0..100u64 {
        let run = |policy| {
            let mut ex = make_abm_executor(AbmConfig::default(), None, seed).map_err(e)?;
            let spec = TrajectorySpec {
                policy,
                horizon: 8,
                budget_cap: 8000,
                seed,
                model_id: "abm".into(),
                episode_id: 0,
            };
            run_trajectory(&mut ex, spec, &reduced).map_err(e)
        };
        let a = run(PolicyKind::Apemo)?;
        let u = run(PolicyKind::Uniform)?;
        ensure(fingerprint(&a) == fingerprint(&u), || format!("seed {seed} differs"))?;
    }
    Ok("100 seeds bit-identical".into())
}

fn trap_block(policies: Vec<PolicyKind>, horizon: usize, trap: bool) -> BlockConfig {
    BlockConfig {
        name: "acceptance".into(),
        models: vec!["abm".into()],
        horizon,
        episodes: 1,
        policies,
        seeds: SeedSpec::Range { start: 0, count: 50 },
        tokens_per_turn: 1000,
        trap: trap.then_some(TrapConfig {
            trap_turn: Some(4),
            severity: 0.4,
            recovery_rate: 0.3,
        }),
        executor: Default::default(),
        strict: false,
        topology: None,
    }
}

fn abm_endpoint_direction() -> Outcome {
    let start = Instant::now();
    let settings = ExperimentConfig::default().settings();
    let block = trap_block(vec![PolicyKind::Apemo, PolicyKind::TaskPeakEnd], 8, true);
    let out = run_block(&block, &settings, RunOptions { workers: 4, ..Default::default() }).map_err(e)?;
    let (t, b): (Vec<_>, Vec<_>) = out.records.into_iter().partition(|r| r.policy == PolicyKind::Apemo);
    let r = delta_report(
        Metric::EndpointQuality,
        PolicyKind::Apemo,
        PolicyKind::TaskPeakEnd,
        &t,
        &b,
        &StatsConfig::default(),
    )
    .map_err(e)?;
    let took = start.elapsed();
    let summary = format!(
        "n={} mean delta {:+.4}, 95% CI [{:.4}, {:.4}], {:.1}s",
        r.n,
        r.mean_delta,
        r.ci_low,
        r.ci_high,
        took.as_secs_f64()
    );
    ensure(r.n == 50 && r.mean_delta > 0.0 && r.ci_low > 0.0, || summary.clone())?;
    ensure(took < Duration::from_secs(120), || summary.clone())?;
    Ok(summary)
}

fn horizon_ordering() -> Outcome {
    let settings = ExperimentConfig::default().settings();
    let mut gains = Vec::new();
    for horizon in [2, 8] {
        let block = trap_block(vec![PolicyKind::Apemo, PolicyKind::Uniform], horizon, false);
        let out = run_block(&block, &settings, RunOptions { workers: 4, ..Default::default() }).map_err(e)?;
        let (t, b): (Vec<_>, Vec<_>) = out.records.into_iter().partition(|r| r.policy == PolicyKind::Apemo);
        let r = delta_report(Metric::MeanQuality, PolicyKind::Apemo, PolicyKind::Uniform, &t, &b, &StatsConfig::default())
            .map_err(e)?;
        gains.push(r.mean_delta);
    }
    let summary = format!("gain T=2 {:+.4}, T=8 {:+.4}", gains[0], gains[1]);
    ensure(gains[1] > gains[0], || summary.clone())?;
    Ok(summary)
}

fn binomial(n: u64, k: u64) -> f64 {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * (n as u128 - i) / (i + 1);
    }
    c as f64
}

fn sign_test_oracle() -> Outcome {
    let mut cases = 0;
    for n in 1..=12u64 {
        for wins in 0..=n {
            let d: Vec<f64> = (0..n).map(|i| if i < wins { 1.0 } else { -1.0 }).collect();
            let got = sign_test(&d).map_err(e)?.p;
            let tail = wins.min(n - wins);
            let mut p = 0.0;
            for k in 0..=tail {
                p += binomial(n, k) / 2f64.powi(n as i32);
            }
            let want = (2.0 * p).min(1.0);
            ensure(got == want, || format!("n={n} wins={wins}: {got} != {want}"))?;
            cases += 1;
        }
    }
    let five = sign_test(&[1.0; 5]).map_err(e)?.p;
    ensure(five == 0.0625, || format!("(5,0) gave {five}"))?;
    Ok(format!("{cases} cases exact, (5,0) = {five}"))
}

fn bootstrap_behavior() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut covered = 0;
    for i in 0..500u64 {
        let x: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let (lo, hi) = bootstrap_ci(&x, 1000, 0.95, i).map_err(e)?;
        if lo <= 0.0 && 0.0 <= hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / 500.0;
    let constant = bootstrap_ci(&[0.3; 20], 1000, 0.95, 1).map_err(e)?;
    let summary = format!("coverage {coverage:.3}, constant interval {constant:?}");
    ensure((0.90..=0.99).contains(&coverage), || summary.clone())?;
    ensure(constant == (0.3, 0.3), || summary.clone())?;
    Ok(summary)
}

fn pareto_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..100 {
        let pts: Vec<FrontierPoint> = (0..200)
            .map(|i| {
                // Coarse grid so that ties appear.
                let g = (rng.random_range(-50.0f64..50.0)).round() / 2.0;
                let c = (rng.random_range(-20.0f64..30.0)).round() / 2.0;
                FrontierPoint::new(format!("p{i}"), g, c)
            })
            .collect::<Result<_, _>>()
            .map_err(e)?;
        let brute: Vec<&str> = pts
            .iter()
            .filter(|p| !pts.iter().any(|q| dominates(q, p)))
            .map(|p| p.label.as_str())
            .collect();
        let front = pareto_front(&pts);
        let got: Vec<&str> = front.iter().map(|p| p.label.as_str()).collect();
        ensure(got == brute, || format!("trial {trial}: front differs from brute force"))?;
        ensure(pareto_front(&front) == front, || format!("trial {trial}: not idempotent"))?;
    }
    Ok("100 trials of 200 points match brute force, idempotent".into())
}

#[allow(clippy::approx_constant)]
fn frontier_table_arithmetic() -> Outcome {
    let baseline = 0.5459;
    let s = ComparisonSummary {
        label: "Long-Horizon (T=8, vs peak-end)".into(),
        metric: Metric::MeanQuality,
        treatment_mean: baseline + 0.0791,
        baseline_mean: baseline,
        treatment_cost: 1062.8,
        baseline_cost: 1000.0,
        n: 50,
    };
    let (rows, diags) = frontier_table(&[s]);
    ensure(diags.is_empty() && rows.len() == 1, || format!("{diags:?}"))?;
    let r = &rows[0];
    let summary = format!("gain {:+.2}%, cost {:+.2}%, viable {}", r.gain_pct, r.cost_pct, r.viable);
    ensure((r.gain_pct - 14.49).abs() <= 0.01, || summary.clone())?;
    ensure((r.cost_pct - 6.28).abs() <= 0.01, || summary.clone())?;
    ensure(r.viable, || summary.clone())?;
    Ok(summary)
}

fn llm_executor(url: &str, cfg: &LlmConfig) -> Result<LlmExecutor, String> {
    let endpoint = ModelEndpoint {
        base_url: url.into(),
        max_retries: 0,
        ..ModelEndpoint::default()
    };
    let client = std::sync::Arc::new(ChatClient::new(endpoint, Dialect::default()).map_err(e)?);
    LlmExecutor::new(client, None, cfg, "Draft a migration plan for the billing database.").map_err(e)
}

fn wire_conformance() -> Outcome {
    let server = MockServer::start(MockBehavior::Echo { grade: None }).map_err(e)?;
    let echo = MockBehavior::Echo { grade: None };
    let mut requests = 0;
    let blocks = [
        (
            Topology::Single,
            vec![PolicyKind::Uniform, PolicyKind::TaskPeakEnd, PolicyKind::Apemo, PolicyKind::PlanExecuteReflect],
        ),
        (Topology::Flow, vec![PolicyKind::FlowPlain, PolicyKind::FlowTemporal, PolicyKind::Apemo]),
    ];
    for (topology, policies) in blocks {
        let cfg = LlmConfig {
            topology,
            ..LlmConfig::default()
        };
        let mut block_decoding = None;
        for policy in policies {
            for seed in [1u64, 2] {
                server.clear();
                let mut ex = Recording {
                    inner: llm_executor(&server.base_url(), &cfg)?.with_trap(Some(3)),
                    calls: Vec::new(),
                };
                let spec = TrajectorySpec {
                    policy,
                    horizon: 5,
                    budget_cap: 5 * 120,
                    seed,
                    model_id: "llama3.2:1b".into(),
                    episode_id: 0,
                };
                let traj = run_trajectory(&mut ex, spec, &SchedulerConfig::default()).map_err(e)?;
                ensure(!traj.fallback, || format!("{policy} fell back"))?;
                let bodies = server.chat_bodies();
                requests += bodies.len();

                let mut expected = Vec::new();
                for &(phase, alloc, _) in &ex.calls {
                    match (topology, phase) {
                        (Topology::Flow, Phase::Execute | Phase::Repair) => {
                            expected.extend(role_caps(&cfg.roles(), alloc).into_iter().filter(|&c| c > 0))
                        }
                        _ => expected.push(alloc),
                    }
                }
                let caps: Vec<u64> = bodies
                    .iter()
                    .map(|b| b.pointer("/options/num_predict").and_then(Value::as_u64).unwrap_or(0))
                    .collect();
                ensure(caps == expected, || format!("{topology:?}/{policy}: caps {caps:?} != scheduled {expected:?}"))?;

                for b in &bodies {
                    let mut d = b["options"].clone();
                    let obj = d.as_object_mut().ok_or("options missing")?;
                    obj.remove("num_predict");
                    obj.remove("seed");
                    let key = (b["model"].clone(), d);
                    match &block_decoding {
                        None => block_decoding = Some(key),
                        Some(k) => ensure(*k == key, || format!("{policy}: decoding differs: {key:?}"))?,
                    }
                }

                let reported: u64 = bodies
                    .iter()
                    .map(|b| chat_response(&echo, b).and_then(|r| r["eval_count"].as_u64()).unwrap_or(0))
                    .sum();
                let charged = traj.cost.policy_cost + traj.cost.repair_cost;
                ensure(reported == charged, || format!("{policy}: server reported {reported}, ledger {charged}"))?;
            }
        }
    }
    Ok(format!("{requests} requests: caps, decoding and usage exact"))
}

fn trap_definitions() -> Outcome {
    let q = [0.8, 0.8, 0.3, 0.5, 0.7, 0.7, 0.7, 0.7];
    let f = [0.1, 0.1, 0.6, 0.4, 0.2, 0.2, 0.2, 0.2];
    let traj = Trajectory::from_series(PolicyKind::Apemo, &q, &f).map_err(e)?;
    let m = trap_metrics(&traj, 3).map_err(e)?;
    ensure(m.quality_drop == q[1] - q[2], || format!("drop {}", m.quality_drop))?;
    ensure(m.quality_rebound2 == q[4] - q[2], || format!("rebound2 {}", m.quality_rebound2))?;
    ensure(m.frustration_drop2 == f[2] - f[4], || format!("frustration_drop2 {}", m.frustration_drop2))?;
    ensure(m.endpoint_quality == q[7], || format!("endpoint {}", m.endpoint_quality))?;
    ensure((m.quality_drop - 0.5).abs() < 1e-12 && (m.quality_rebound2 - 0.4).abs() < 1e-12, || {
        format!("drop {} rebound2 {}", m.quality_drop, m.quality_rebound2)
    })?;
    let flat = Trajectory::from_series(PolicyKind::Apemo, &[0.6; 8], &[0.2; 8]).map_err(e)?;
    let m = trap_metrics(&flat, 4).map_err(e)?;
    ensure(m.quality_drop == 0.0 && m.quality_rebound2 == 0.0, || "flat series shows a trap effect".into())?;
    ensure(trap_metrics(&flat, 8).is_err(), || "trap at T accepted".into())?;
    Ok("drop 0.5, rebound2 0.4, flat 0/0, trap at T rejected".into())
}

const DETERMINISM_CONFIG: &str = r#"
[[blocks]]
name = "trap"
horizon = 8
policies = ["apemo", "task_peak_end", "uniform"]
seeds = { start = 0, count = 10 }
trap = { trap_turn = 4, severity = 0.4 }

[[blocks]]
name = "long"
horizon = 8
episodes = 2
policies = ["apemo", "task_affect", "plan_execute"]
seeds = [3, 5, 8]
"#;

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(e)? {
        let p = entry.map_err(e)?.path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(e)?);
    }
    Ok(out)
}

fn pipeline(root: &Path, cfg: &Path, workers: usize) -> Result<Vec<BTreeMap<String, Vec<u8>>>, String> {
    let out = root.join("runs");
    cmd_simulate(&RunArgs {
        config: cfg.to_path_buf(),
        block: None,
        out: out.clone(),
        workers,
        resume: true,
        stats_seed: Some(11),
        quiet: true,
    })
    .map_err(e)?;
    let mut snaps = Vec::new();
    for _ in 0..2 {
        cmd_report(&ReportArgs {
            out: out.clone(),
            config: Some(cfg.to_path_buf()),
            stats_seed: Some(11),
            quiet: true,
            ..Default::default()
        })
        .map_err(e)?;
        snaps.push(snapshot(&out.join("reports"))?);
    }
    Ok(snaps)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, DETERMINISM_CONFIG).map_err(e)?;
    let a = pipeline(&tmp.path().join("a"), &cfg, 1)?;
    let b = pipeline(&tmp.path().join("b"), &cfg, 4)?;
    ensure(!a[0].is_empty(), || "no report files".into())?;
    ensure(a[0] == a[1], || "second report differs".into())?;
    ensure(a[0] == b[0] && b[0] == b[1], || "reports differ across pipelines".into())?;
    Ok(format!("{} report files byte-identical across 4 reports", a[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("budget safety", budget_safety),
        ("peak-end oracle", peak_end_oracle),
        ("policy reduction", policy_reduction),
        ("ABM endpoint direction", abm_endpoint_direction),
        ("ABM horizon ordering", horizon_ordering),
        ("sign-test oracle", sign_test_oracle),
        ("bootstrap behavior", bootstrap_behavior),
        ("Pareto oracle", pareto_oracle),
        ("frontier table arithmetic", frontier_table_arithmetic),
        ("wire-protocol conformance", wire_conformance),
        ("trap metric definitions", trap_definitions),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

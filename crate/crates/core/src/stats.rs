//! Run-level comparison statistics: paired deltas, percentile bootstrap
//! intervals and exact sign tests.
//!
//! Everything here consumes [`RunRecord`]s, never episode rows, so each run
//! contributes exactly one observation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::{no_fallback_rate, Metric, RunKey, RunRecord, SCHEMA_VERSION};
use crate::error::{ApemoError, Result};
use crate::scheduler::PolicyKind;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1_000;

/// Identity of a run up to its policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub model: String,
    pub seed: u64,
    pub horizon: usize,
    pub episodes: u32,
}

impl PairKey {
    fn of(r: &RunRecord) -> Self {
        Self {
            model: r.model.clone(),
            seed: r.seed,
            horizon: r.horizon,
            episodes: r.episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub key: PairKey,
    pub treatment: f64,
    pub baseline: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    /// Sorted by key.
    pub deltas: Vec<PairedDelta>,
    pub orphans: Vec<RunKey>,
    /// Matched pairs where the metric is undefined on either side.
    pub undefined: Vec<PairKey>,
}

impl Pairing {
    pub fn values(&self) -> Vec<f64> {
        self.deltas.iter().map(|d| d.delta).collect()
    }
}

fn index(records: &[RunRecord], side: &str) -> Result<BTreeMap<PairKey, RunRecord>> {
    let mut out = BTreeMap::new();
    for r in records {
        if out.insert(PairKey::of(r), r.clone()).is_some() {
            return Err(ApemoError::invalid(format!(
                "duplicate {side} run {}",
                r.run_key()
            )));
        }
    }
    Ok(out)
}

/// Match treatment and baseline runs on (model, seed, horizon, episodes)
/// and take `treatment - baseline` of `metric`.
pub fn pair_runs(treatment: &[RunRecord], baseline: &[RunRecord], metric: Metric) -> Result<Pairing> {
    let t = index(treatment, "treatment")?;
    let b = index(baseline, "baseline")?;
    let mut deltas = Vec::new();
    let mut undefined = Vec::new();
    let mut orphans = Vec::new();
    for (k, tr) in &t {
        match b.get(k) {
            Some(br) => match (tr.metric(metric), br.metric(metric)) {
                (Some(x), Some(y)) => deltas.push(PairedDelta {
                    key: k.clone(),
                    treatment: x,
                    baseline: y,
                    delta: x - y,
                }),
                _ => undefined.push(k.clone()),
            },
            None => orphans.push(tr.run_key()),
        }
    }
    for (k, br) in &b {
        if !t.contains_key(k) {
            orphans.push(br.run_key());
        }
    }
    orphans.sort();
    for o in &orphans {
        warn!("unpaired run {o}");
    }
    if deltas.is_empty() {
        return Err(ApemoError::invalid(format!(
            "no matched run pairs for {metric} ({} orphans, {} undefined)",
            orphans.len(),
            undefined.len()
        )));
    }
    Ok(Pairing {
        deltas,
        orphans,
        undefined,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(samples: &[f64], resamples: usize, coverage: f64, seed: u64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(ApemoError::invalid("bootstrap of an empty sample"));
    }
    if resamples < MIN_RESAMPLES {
        return Err(ApemoError::invalid(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(ApemoError::invalid(format!("coverage must be in (0,1), got {coverage}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(ApemoError::invalid("bootstrap sample contains non-finite values"));
    }
    if samples.iter().all(|x| *x == samples[0]) {
        return Ok((samples[0], samples[0]));
    }
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - coverage) / 2.0;
    let low = quantile(&means, tail);
    let high = quantile(&means, 1.0 - tail);
    Ok((low.min(high), high.max(low)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p: f64,
    /// No nonzero deltas: the test is uninformative.
    pub degenerate: bool,
}

/// `P[X <= k]` for `X ~ Binomial(n, 1/2)`.
fn binom_half_cdf(n: usize, k: usize) -> f64 {
    if k >= n {
        return 1.0;
    }
    if n <= 120 {
        let mut c: u128 = 1;
        let mut sum: u128 = 1;
        for i in 1..=k {
            c = c * (n - i + 1) as u128 / i as u128;
            sum += c;
        }
        return sum as f64 / 2f64.powi(n as i32);
    }
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut terms = vec![-ln2n];
    for i in 1..=k {
        ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        terms.push(ln_c - ln2n);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()).exp()
}

/// Exact two-sided sign test; zero deltas are dropped from `n`.
pub fn sign_test(deltas: &[f64]) -> Result<SignTest> {
    if deltas.is_empty() {
        return Err(ApemoError::invalid("sign test of an empty sample"));
    }
    let wins = deltas.iter().filter(|d| **d > 0.0).count();
    let losses = deltas.iter().filter(|d| **d < 0.0).count();
    let ties = deltas.len() - wins - losses;
    let n = wins + losses;
    if n == 0 {
        return Ok(SignTest {
            wins,
            losses,
            ties,
            p: 1.0,
            degenerate: true,
        });
    }
    let k = wins.min(losses);
    let p = (2.0 * binom_half_cdf(n, k)).min(1.0);
    Ok(SignTest {
        wins,
        losses,
        ties,
        p,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub resamples: usize,
    pub coverage: f64,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            coverage: 0.95,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub metric: Metric,
    pub treatment: PolicyKind,
    pub baseline: PolicyKind,
    pub n: usize,
    pub mean_delta: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub sign_p: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub degenerate: bool,
    pub orphans: usize,
    pub undefined: usize,
    /// Mean of the metric over the paired treatment and baseline runs.
    pub treatment_mean: f64,
    pub baseline_mean: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn delta_report(
    metric: Metric,
    treatment: PolicyKind,
    baseline: PolicyKind,
    treatment_runs: &[RunRecord],
    baseline_runs: &[RunRecord],
    cfg: &StatsConfig,
) -> Result<DeltaReport> {
    let pairing = pair_runs(treatment_runs, baseline_runs, metric)?;
    let d = pairing.values();
    let (mean_delta, sd) = mean_sd(&d);
    let (ci_low, ci_high) = bootstrap_ci(&d, cfg.resamples, cfg.coverage, cfg.seed)?;
    let s = sign_test(&d)?;
    let avg = |f: fn(&PairedDelta) -> f64| {
        pairing.deltas.iter().map(f).sum::<f64>() / pairing.deltas.len() as f64
    };
    Ok(DeltaReport {
        metric,
        treatment,
        baseline,
        n: d.len(),
        mean_delta,
        sd,
        ci_low,
        ci_high,
        sign_p: s.p,
        wins: s.wins,
        losses: s.losses,
        ties: s.ties,
        degenerate: s.degenerate,
        orphans: pairing.orphans.len(),
        undefined: pairing.undefined.len(),
        treatment_mean: avg(|p| p.treatment),
        baseline_mean: avg(|p| p.baseline),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub schema_version: String,
    pub block: String,
    pub no_fallback_rate: f64,
    /// Set when the no-fallback gate is below 1.0.
    pub directional: bool,
    pub stats_seed: u64,
    pub resamples: usize,
    pub rows: Vec<DeltaReport>,
}

pub const DIRECTIONAL_BANNER: &str = "directional evidence";

/// Deltas of `treatment` against each baseline on each metric.
pub fn block_report(
    records: &[RunRecord],
    treatment: PolicyKind,
    baselines: &[PolicyKind],
    metrics: &[Metric],
    cfg: &StatsConfig,
) -> Result<BlockReport> {
    let gate = no_fallback_rate(records)?;
    let mut sorted: Vec<RunRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.run_key().cmp(&b.run_key()).then(a.block.cmp(&b.block)));
    let mut blocks: Vec<&str> = sorted.iter().map(|r| r.block.as_str()).collect();
    blocks.dedup();
    blocks.sort_unstable();
    blocks.dedup();
    let of = |p: PolicyKind| -> Vec<RunRecord> {
        sorted.iter().filter(|r| r.policy == p).cloned().collect()
    };
    let t_runs = of(treatment);
    let mut rows = Vec::new();
    for &b in baselines {
        let b_runs = of(b);
        for &m in metrics {
            rows.push(delta_report(m, treatment, b, &t_runs, &b_runs, cfg)?);
        }
    }
    Ok(BlockReport {
        schema_version: SCHEMA_VERSION.into(),
        block: blocks.join("+"),
        no_fallback_rate: gate,
        directional: gate < 1.0,
        stats_seed: cfg.seed,
        resamples: cfg.resamples,
        rows,
    })
}

impl BlockReport {
    /// Aligned plain-text table: one row per baseline, one column per metric.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let n = self.rows.first().map_or(0, |r| r.n);
        let treatment = self.rows.first().map_or("-".to_string(), |r| r.treatment.to_string());
        let _ = writeln!(
            out,
            "block {}  treatment {}  n={}  no_fallback_rate={:.4}  stats_seed={}  resamples={}",
            self.block, treatment, n, self.no_fallback_rate, self.stats_seed, self.resamples
        );
        if self.directional {
            let _ = writeln!(
                out,
                "*** {} only: no_fallback_rate below 1.0 ***",
                DIRECTIONAL_BANNER.to_uppercase()
            );
        }
        let mut metrics: Vec<Metric> = Vec::new();
        let mut baselines: Vec<PolicyKind> = Vec::new();
        for r in &self.rows {
            if !metrics.contains(&r.metric) {
                metrics.push(r.metric);
            }
            if !baselines.contains(&r.baseline) {
                baselines.push(r.baseline);
            }
        }
        const W: usize = 28;
        let mut header = format!("{:<22}", "baseline");
        for m in &metrics {
            let _ = write!(header, "{:>W$}", m.name());
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        for b in &baselines {
            let cell = |m: &Metric| self.rows.iter().find(|r| r.baseline == *b && r.metric == *m);
            let mut l1 = format!("{:<22}", b.name());
            let mut l2 = format!("{:<22}", "");
            let mut l3 = format!("{:<22}", "");
            for m in &metrics {
                match cell(m) {
                    Some(r) => {
                        let _ = write!(l1, "{:>W$}", format!("{:+.4}", r.mean_delta));
                        let _ = write!(l2, "{:>W$}", format!("[{:.4}, {:.4}]", r.ci_low, r.ci_high));
                        let _ = write!(
                            l3,
                            "{:>W$}",
                            format!("p={:.3e} {}/{}/{}", r.sign_p, r.wins, r.losses, r.ties)
                        );
                    }
                    None => {
                        let _ = write!(l1, "{:>W$}", "-");
                        let _ = write!(l2, "{:>W$}", "");
                        let _ = write!(l3, "{:>W$}", "");
                    }
                }
            }
            let _ = writeln!(out, "{}", l1.trim_end());
            let _ = writeln!(out, "{}", l2.trim_end());
            let _ = writeln!(out, "{}", l3.trim_end());
        }
        out
    }

    /// One JSON object per row, each tagged with the block and gate.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["schema_version"] = self.schema_version.clone().into();
            v["block"] = self.block.clone().into();
            v["no_fallback_rate"] = self.no_fallback_rate.into();
            v["directional"] = self.directional.into();
            v["stats_seed"] = self.stats_seed.into();
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "block,metric,treatment,baseline,n,mean_delta,ci_low,ci_high,sign_p,wins,losses,ties,directional\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.block,
                r.metric,
                r.treatment,
                r.baseline,
                r.n,
                r.mean_delta,
                r.ci_low,
                r.ci_high,
                r.sign_p,
                r.wins,
                r.losses,
                r.ties,
                self.directional
            );
        }
        out
    }
}

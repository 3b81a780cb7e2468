//! Runtime allocation policies and the per-trajectory control loop.
//!
//! Every policy runs under the same hard cap `C_max`. Temporal policies skim a
//! fraction of the base allocation from early turns into an end reserve and
//! spend it on negative-peak repairs or ending stabilization. Non-temporal
//! baselines split the cap evenly.

use std::fmt;
use std::str::FromStr;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{ApemoError, Result};
use crate::executor::{Attempt, Executor, Phase, TurnRequest};
use crate::signals::{OutputDigest, SignalConfig, SignalTracker};
use crate::trajectory::{CostBreakdown, Trajectory, TurnRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Uniform,
    TaskAffect,
    TaskPeakEnd,
    Apemo,
    PlanExecute,
    PlanExecuteReflect,
    FlowPlain,
    FlowTemporal,
}

/// Which negative-peak conditions a policy listens to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakTrigger {
    None,
    /// Quality below threshold after a sharp drop.
    QualityDrop,
    /// Frustration signal above threshold.
    Frustration,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndingMode {
    None,
    /// Banked tokens are added to the last two turns' allocations up front.
    Static,
    /// Banked tokens fund repair re-executions of weak ending turns.
    Repair,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Uniform,
        PolicyKind::TaskAffect,
        PolicyKind::TaskPeakEnd,
        PolicyKind::Apemo,
        PolicyKind::PlanExecute,
        PolicyKind::PlanExecuteReflect,
        PolicyKind::FlowPlain,
        PolicyKind::FlowTemporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::TaskAffect => "task_affect",
            PolicyKind::TaskPeakEnd => "task_peak_end",
            PolicyKind::Apemo => "apemo",
            PolicyKind::PlanExecute => "plan_execute",
            PolicyKind::PlanExecuteReflect => "plan_execute_reflect",
            PolicyKind::FlowPlain => "flow_plain",
            PolicyKind::FlowTemporal => "flow_temporal",
        }
    }

    /// Skims early turns into the end reserve.
    pub fn skims(self) -> bool {
        matches!(
            self,
            PolicyKind::Apemo
                | PolicyKind::FlowTemporal
                | PolicyKind::TaskAffect
                | PolicyKind::TaskPeakEnd
        )
    }

    /// Pays a per-turn monitoring overhead.
    pub fn monitors(self) -> bool {
        matches!(
            self,
            PolicyKind::Apemo | PolicyKind::FlowTemporal | PolicyKind::TaskAffect
        )
    }

    pub fn peak_trigger(self) -> PeakTrigger {
        match self {
            PolicyKind::Apemo => PeakTrigger::Both,
            PolicyKind::FlowTemporal => PeakTrigger::QualityDrop,
            PolicyKind::TaskAffect => PeakTrigger::Frustration,
            _ => PeakTrigger::None,
        }
    }

    pub fn ending(self) -> EndingMode {
        match self {
            PolicyKind::Apemo => EndingMode::Repair,
            PolicyKind::TaskPeakEnd => EndingMode::Static,
            _ => EndingMode::None,
        }
    }

    pub fn plans(self) -> bool {
        matches!(self, PolicyKind::PlanExecute | PolicyKind::PlanExecuteReflect)
    }

    pub fn reflects(self) -> bool {
        self == PolicyKind::PlanExecuteReflect
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = ApemoError;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|p| p.name()).collect();
                ApemoError::config(format!(
                    "unknown policy {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairReason {
    NegativePeak,
    EndingStabilization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairDecision {
    pub trigger_turn: usize,
    pub reason: RepairReason,
    pub requested_tokens: u64,
    /// Zero when the ledger had nothing to give; the repair is then skipped.
    pub granted_tokens: u64,
    /// The re-execution beat the original and was kept.
    pub improved: bool,
}

/// Running cost accounting against the hard cap.
///
/// `spent.total() + reserve_end <= cap` holds after every method call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    cap: u64,
    spent: CostBreakdown,
    reserve_end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Policy,
    Repair,
    Overhead,
}

impl BudgetLedger {
    pub fn new(cap: u64) -> Self {
        Self {
            cap,
            spent: CostBreakdown::default(),
            reserve_end: 0,
        }
    }

    /// A ledger in an arbitrary (valid) state; used by tests and replays.
    pub fn with_state(cap: u64, spent: CostBreakdown, reserve_end: u64) -> Result<Self> {
        if spent.total() + reserve_end > cap {
            return Err(ApemoError::invalid(format!(
                "ledger state spent={} reserve={} exceeds cap {cap}",
                spent.total(),
                reserve_end
            )));
        }
        Ok(Self {
            cap,
            spent,
            reserve_end,
        })
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn spent(&self) -> CostBreakdown {
        self.spent
    }

    pub fn reserve_end(&self) -> u64 {
        self.reserve_end
    }

    pub fn remaining(&self) -> u64 {
        self.cap - self.spent.total()
    }

    /// Remaining budget not held in the end reserve.
    pub fn unreserved(&self) -> u64 {
        self.remaining() - self.reserve_end
    }

    /// Move up to `tokens` from the unreserved pool into the end reserve.
    pub fn bank(&mut self, tokens: u64) -> u64 {
        let moved = tokens.min(self.unreserved());
        self.reserve_end += moved;
        moved
    }

    /// Return up to `tokens` from the end reserve to the unreserved pool.
    pub fn release(&mut self, tokens: u64) -> u64 {
        let moved = tokens.min(self.reserve_end);
        self.reserve_end -= moved;
        moved
    }

    /// Charge against the unreserved pool. Refuses anything that would breach
    /// the cap or eat into the reserve.
    pub fn charge(&mut self, kind: CostKind, tokens: u64) -> Result<()> {
        if tokens > self.unreserved() {
            return Err(ApemoError::invalid(format!(
                "charge of {tokens} exceeds unreserved budget {}",
                self.unreserved()
            )));
        }
        match kind {
            CostKind::Policy => self.spent.policy_cost += tokens,
            CostKind::Repair => self.spent.repair_cost += tokens,
            CostKind::Overhead => self.spent.overhead_cost += tokens,
        }
        Ok(())
    }

    /// Charge as much of `tokens` as fits, returning the amount charged.
    pub fn charge_up_to(&mut self, kind: CostKind, tokens: u64) -> u64 {
        let amount = tokens.min(self.unreserved());
        self.charge(kind, amount).expect("amount bounded by unreserved");
        amount
    }

    fn refund_repair(&mut self, tokens: u64) {
        let amount = tokens.min(self.spent.repair_cost);
        self.spent.repair_cost -= amount;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionThresholds {
    pub q_threshold: f64,
    pub drop_threshold: f64,
    pub frustration_threshold: f64,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            q_threshold: 0.5,
            drop_threshold: 0.2,
            frustration_threshold: 0.7,
        }
    }
}

impl DetectionThresholds {
    /// Thresholds no trajectory can cross.
    pub fn unreachable() -> Self {
        Self {
            q_threshold: 0.0,
            drop_threshold: f64::INFINITY,
            frustration_threshold: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Fraction of the base allocation skimmed from turns `1..=T-2`.
    pub skim: f64,
    pub detection: DetectionThresholds,
    /// Ending turns below this quality get a stabilization repair.
    pub ending_threshold: f64,
    /// Cap on negative-peak repairs per trajectory (ending passes excluded).
    pub max_repairs: usize,
    /// Monitoring charge per turn for policies that watch the signal.
    pub overhead_per_turn: u64,
    /// Negative-peak repair asks for this multiple of the base allocation.
    pub repair_scale: f64,
    /// Share of the cap spent on the up-front plan (plan-execute baselines).
    pub plan_fraction: f64,
    /// Share of the cap spent on the reflection pass.
    pub reflect_fraction: f64,
    pub signals: SignalConfig,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            skim: 0.2,
            detection: DetectionThresholds::default(),
            ending_threshold: 0.75,
            max_repairs: 2,
            overhead_per_turn: 15,
            repair_scale: 1.0,
            plan_fraction: 0.1,
            reflect_fraction: 0.1,
            signals: SignalConfig::default(),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ApemoError::config(format!("scheduler.{name} must be in [0,1], got {v}")))
            }
        };
        unit("skim", self.skim)?;
        unit("plan_fraction", self.plan_fraction)?;
        unit("reflect_fraction", self.reflect_fraction)?;
        if self.plan_fraction + self.reflect_fraction > 1.0 {
            return Err(ApemoError::config(
                "scheduler.plan_fraction + scheduler.reflect_fraction must not exceed 1",
            ));
        }
        if !(self.repair_scale.is_finite() && self.repair_scale >= 0.0) {
            return Err(ApemoError::config("scheduler.repair_scale must be >= 0"));
        }
        let d = &self.detection;
        if d.q_threshold.is_nan() || d.drop_threshold.is_nan() || d.frustration_threshold.is_nan()
        {
            return Err(ApemoError::config("scheduler.detection thresholds must be numbers"));
        }
        if self.ending_threshold.is_nan() {
            return Err(ApemoError::config("scheduler.ending_threshold must be a number"));
        }
        self.signals.validate()
    }

    fn plan_tokens(&self, policy: PolicyKind, cap: u64) -> u64 {
        if policy.plans() {
            (cap as f64 * self.plan_fraction).floor() as u64
        } else {
            0
        }
    }

    fn reflect_tokens(&self, policy: PolicyKind, cap: u64) -> u64 {
        if policy.reflects() {
            (cap as f64 * self.reflect_fraction).floor() as u64
        } else {
            0
        }
    }

    fn overhead(&self, policy: PolicyKind) -> u64 {
        if policy.monitors() {
            self.overhead_per_turn
        } else {
            0
        }
    }

    /// Per-turn base allocation: the cap minus prorated overhead and any
    /// plan/reflect passes, split evenly over the horizon.
    pub fn base_allocation(&self, policy: PolicyKind, cap: u64, horizon: usize) -> u64 {
        let horizon = horizon.max(1) as u64;
        let fixed = self.plan_tokens(policy, cap)
            + self.reflect_tokens(policy, cap)
            + self.overhead(policy) * horizon;
        cap.saturating_sub(fixed) / horizon
    }

    /// Token allocation for turn `t` of `horizon`.
    ///
    /// Skimming policies bank part of the base allocation on early turns;
    /// the static peak-end policy releases the bank onto the last two turns.
    /// The result never exceeds the unreserved budget, so exhaustion yields 0.
    pub fn plan_turn_budget(
        &self,
        policy: PolicyKind,
        ledger: &mut BudgetLedger,
        t: usize,
        horizon: usize,
    ) -> u64 {
        let base = self.base_allocation(policy, ledger.cap(), horizon);
        let mut alloc = base;
        if policy.skims() && t + 2 <= horizon {
            let skimmed = (base as f64 * self.skim).floor() as u64;
            let banked = ledger.bank(skimmed.min(ledger.unreserved()));
            alloc = base - banked;
        }
        if policy.ending() == EndingMode::Static {
            if horizon >= 2 && t + 1 == horizon {
                alloc += ledger.release(ledger.reserve_end().div_ceil(2));
            } else if t == horizon {
                alloc += ledger.release(ledger.reserve_end());
            }
        }
        alloc.min(ledger.unreserved())
    }

    /// Tokens promised to the turns after `t` and to the pending reflection.
    fn future_commitment(&self, policy: PolicyKind, cap: u64, t: usize, horizon: usize) -> u64 {
        let turns_left = horizon.saturating_sub(t) as u64;
        let per_turn = self.base_allocation(policy, cap, horizon) + self.overhead(policy);
        let reflect = if policy.reflects() && t < horizon {
            self.reflect_tokens(policy, cap)
        } else {
            0
        };
        turns_left * per_turn + reflect
    }
}

/// Grant up to `want_tokens` for a repair, drawing on the reserve first.
pub fn request_repair(
    ledger: &mut BudgetLedger,
    trigger_turn: usize,
    reason: RepairReason,
    want_tokens: u64,
) -> RepairDecision {
    let available = ledger.reserve_end() + ledger.unreserved();
    let granted = want_tokens.min(available);
    ledger.release(granted);
    ledger
        .charge(CostKind::Repair, granted)
        .expect("grant bounded by remaining budget");
    RepairDecision {
        trigger_turn,
        reason,
        requested_tokens: want_tokens,
        granted_tokens: granted,
        improved: false,
    }
}

/// Spec-default detection: quality-drop and frustration conditions both armed.
pub fn detect_negative_peak(
    q_history: &[f64],
    s_history: &[f64],
    cfg: &DetectionThresholds,
) -> Option<usize> {
    detect_with(q_history, s_history, cfg, PeakTrigger::Both)
}

/// Returns the current (1-based) turn when the armed conditions hold:
/// `q_t < q_threshold && q_{t-1} - q_t >= drop_threshold`, or
/// `S_f(t) >= frustration_threshold`.
pub fn detect_with(
    q_history: &[f64],
    s_history: &[f64],
    cfg: &DetectionThresholds,
    trigger: PeakTrigger,
) -> Option<usize> {
    let t = q_history.len();
    let q = *q_history.last()?;
    let quality_peak = t >= 2 && q < cfg.q_threshold && q_history[t - 2] - q >= cfg.drop_threshold;
    let frustration_peak = s_history
        .last()
        .is_some_and(|&s| s >= cfg.frustration_threshold);
    let fired = match trigger {
        PeakTrigger::None => false,
        PeakTrigger::QualityDrop => quality_peak,
        PeakTrigger::Frustration => frustration_peak,
        PeakTrigger::Both => quality_peak || frustration_peak,
    };
    fired.then_some(t)
}

/// Identity and budget of one trajectory to run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub policy: PolicyKind,
    pub horizon: usize,
    pub budget_cap: u64,
    pub seed: u64,
    pub model_id: String,
    pub episode_id: u32,
}

struct LoopState<'e, E: Executor + ?Sized> {
    executor: &'e mut E,
    spec: TrajectorySpec,
    cfg: SchedulerConfig,
    ledger: BudgetLedger,
    fallback: bool,
}

impl<E: Executor + ?Sized> LoopState<'_, E> {
    fn side_pass(&mut self, phase: Phase, turn: usize, tokens: u64) {
        let tokens = tokens.min(self.ledger.unreserved());
        if tokens == 0 {
            return;
        }
        let req = TurnRequest {
            phase,
            ..TurnRequest::execute(turn, self.spec.horizon, tokens, self.spec.seed)
        };
        match self.executor.execute(&req) {
            Ok(out) => {
                self.ledger
                    .charge_up_to(CostKind::Policy, out.tokens_used.min(tokens));
            }
            Err(e) => {
                debug!("{phase:?} pass failed: {e}");
                self.fallback = true;
            }
        }
    }
}

/// Run one trajectory of `spec.horizon` turns against `executor`.
pub fn run_trajectory<E: Executor + ?Sized>(
    executor: &mut E,
    spec: TrajectorySpec,
    cfg: &SchedulerConfig,
) -> Result<Trajectory> {
    let horizon = spec.horizon;
    if horizon == 0 {
        return Err(ApemoError::invalid("horizon must be >= 1"));
    }
    if spec.budget_cap < horizon as u64 {
        return Err(ApemoError::invalid(format!(
            "budget cap {} is below one token per turn for horizon {horizon}",
            spec.budget_cap
        )));
    }
    cfg.validate()?;

    let policy = spec.policy;
    let cap = spec.budget_cap;
    let base = cfg.base_allocation(policy, cap, horizon);
    let mut tracker = SignalTracker::new(cfg.signals, executor.task_digest());
    let mut st = LoopState {
        executor,
        spec,
        cfg: *cfg,
        ledger: BudgetLedger::new(cap),
        fallback: false,
    };

    if policy.plans() {
        let tokens = st.cfg.plan_tokens(policy, cap);
        st.side_pass(Phase::Plan, 0, tokens);
    }

    let mut turns: Vec<TurnRecord> = Vec::with_capacity(horizon);
    let mut q_hist: Vec<f64> = Vec::with_capacity(horizon);
    let mut s_hist: Vec<f64> = Vec::with_capacity(horizon);
    let mut repairs: Vec<RepairDecision> = Vec::new();
    let mut peak_repairs = 0usize;

    for t in 1..=horizon {
        if policy.reflects() && t == horizon && horizon >= 2 {
            let tokens = st.cfg.reflect_tokens(policy, cap);
            st.side_pass(Phase::Reflect, t, tokens);
        }
        st.ledger
            .charge_up_to(CostKind::Overhead, st.cfg.overhead(policy));
        let alloc = st
            .cfg
            .plan_turn_budget(policy, &mut st.ledger, t, horizon);

        let request = TurnRequest::execute(t, horizon, alloc, st.spec.seed);
        let (mut quality, mut digest, mut trapped, mut spent, failed) =
            match st.executor.execute(&request) {
                Ok(out) => {
                    let used = st
                        .ledger
                        .charge_up_to(CostKind::Policy, out.tokens_used.min(alloc));
                    (out.quality.clamp(0.0, 1.0), out.digest, out.trapped, used, false)
                }
                Err(e) => {
                    debug!("turn {t} failed: {e}");
                    st.fallback = true;
                    (0.0, OutputDigest::default(), false, 0, true)
                }
            };
        let mut frustration = if failed {
            tracker.failure_score()
        } else {
            tracker.score(&digest)
        };

        q_hist.push(quality);
        s_hist.push(frustration);

        // Budget a repair may use without starving later turns.
        let spare = st.ledger.reserve_end()
            + st
                .ledger
                .unreserved()
                .saturating_sub(st.cfg.future_commitment(policy, cap, t, horizon));
        let mut wanted: Option<(RepairReason, u64)> = None;
        if !failed
            && peak_repairs < st.cfg.max_repairs
            && detect_with(&q_hist, &s_hist, &st.cfg.detection, policy.peak_trigger()).is_some()
        {
            let want = (base as f64 * st.cfg.repair_scale).round() as u64;
            wanted = Some((RepairReason::NegativePeak, want));
        } else if !failed
            && policy.ending() == EndingMode::Repair
            && t + 1 >= horizon
            && quality < st.cfg.ending_threshold
        {
            let want = if t < horizon { spare.div_ceil(2) } else { spare };
            wanted = Some((RepairReason::EndingStabilization, want));
        }

        let mut repaired = false;
        let mut kept = Attempt::Original;
        if let Some((reason, want)) = wanted.filter(|(_, w)| *w > 0) {
            let want = want.min(spare);
            if reason == RepairReason::NegativePeak {
                peak_repairs += 1;
            }
            let mut decision = request_repair(&mut st.ledger, t, reason, want);
            if decision.granted_tokens > 0 {
                let critique = format!(
                    "step {t} looks weak (quality {quality:.2}, frustration {frustration:.2}); revise it"
                );
                let req = TurnRequest {
                    turn: t,
                    horizon,
                    phase: Phase::Repair,
                    allocated_tokens: decision.granted_tokens,
                    prior_tokens: spent,
                    critique: Some(&critique),
                    seed: st.spec.seed,
                };
                match st.executor.execute(&req) {
                    Ok(out) => {
                        let used = out.tokens_used.min(decision.granted_tokens);
                        st.ledger.refund_repair(decision.granted_tokens - used);
                        spent += used;
                        repaired = true;
                        let rq = out.quality.clamp(0.0, 1.0);
                        if rq > quality {
                            quality = rq;
                            frustration = tracker.score(&out.digest);
                            digest = out.digest;
                            trapped |= out.trapped;
                            decision.improved = true;
                            kept = Attempt::Repair;
                            *q_hist.last_mut().expect("pushed above") = quality;
                            *s_hist.last_mut().expect("pushed above") = frustration;
                        }
                    }
                    Err(e) => {
                        debug!("repair of turn {t} failed: {e}");
                        st.ledger.refund_repair(decision.granted_tokens);
                        st.fallback = true;
                    }
                }
            }
            repairs.push(decision);
        }

        st.executor.commit(t, kept);
        tracker.commit(digest.clone(), frustration);
        turns.push(TurnRecord {
            index: t,
            quality,
            frustration,
            tokens_spent: spent,
            repaired,
            trapped,
            output_digest: digest,
        });
    }

    let traj = Trajectory {
        turns,
        policy,
        model_id: st.spec.model_id.clone(),
        seed: st.spec.seed,
        episode_id: st.spec.episode_id,
        budget_cap: cap,
        cost: st.ledger.spent(),
        fallback: st.fallback,
        repairs,
    };
    debug_assert!(traj.cost.total() <= cap);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::executor::TurnOutput;

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
        assert!("mean_step".parse::<PolicyKind>().is_err());
    }

    fn no_overhead() -> SchedulerConfig {
        SchedulerConfig {
            overhead_per_turn: 0,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_splits_evenly() {
        let cfg = no_overhead();
        let mut ledger = BudgetLedger::new(8000);
        for t in 1..=8 {
            assert_eq!(cfg.plan_turn_budget(PolicyKind::Uniform, &mut ledger, t, 8), 1000);
        }
        assert_eq!(ledger.reserve_end(), 0);
    }

    #[test]
    fn apemo_skims_early_turns_into_reserve() {
        let cfg = no_overhead();
        let mut ledger = BudgetLedger::new(8000);
        for t in 1..=2 {
            cfg.plan_turn_budget(PolicyKind::Apemo, &mut ledger, t, 8);
        }
        let before = ledger.reserve_end();
        assert_eq!(cfg.plan_turn_budget(PolicyKind::Apemo, &mut ledger, 3, 8), 800);
        assert_eq!(ledger.reserve_end() - before, 200);
        // The last two turns are not skimmed.
        assert_eq!(cfg.plan_turn_budget(PolicyKind::Apemo, &mut ledger, 7, 8), 1000);
    }

    #[test]
    fn exhausted_ledger_allocates_zero() {
        let cfg = SchedulerConfig::default();
        for p in PolicyKind::ALL {
            let mut ledger =
                BudgetLedger::with_state(1000, CostBreakdown::new(1000, 0, 0), 0).unwrap();
            assert_eq!(cfg.plan_turn_budget(p, &mut ledger, 2, 4), 0);
        }
    }

    #[test]
    fn static_peak_end_releases_bank_on_last_turns() {
        let cfg = no_overhead();
        let mut ledger = BudgetLedger::new(8000);
        let allocs: Vec<u64> = (1..=8)
            .map(|t| {
                let a = cfg.plan_turn_budget(PolicyKind::TaskPeakEnd, &mut ledger, t, 8);
                ledger.charge(CostKind::Policy, a).unwrap();
                a
            })
            .collect();
        assert_eq!(allocs, vec![800, 800, 800, 800, 800, 800, 1600, 1600]);
        assert_eq!(ledger.spent().total(), 8000);
    }

    #[test]
    fn repair_grant_rules() {
        let mut l = BudgetLedger::with_state(2000, CostBreakdown::new(1400, 0, 0), 600).unwrap();
        let d = request_repair(&mut l, 3, RepairReason::NegativePeak, 500);
        assert_eq!(d.granted_tokens, 500);
        assert_eq!(l.spent().repair_cost, 500);
        assert_eq!(l.reserve_end(), 100);

        let mut l = BudgetLedger::with_state(1000, CostBreakdown::new(1000, 0, 0), 0).unwrap();
        let d = request_repair(&mut l, 3, RepairReason::NegativePeak, 400);
        assert_eq!(d.granted_tokens, 0);

        let mut l = BudgetLedger::with_state(1000, CostBreakdown::new(600, 0, 0), 300).unwrap();
        let d = request_repair(&mut l, 3, RepairReason::EndingStabilization, 500);
        assert_eq!(d.granted_tokens, 400);
        assert_eq!(l.spent().total(), 1000);
        assert_eq!(l.reserve_end(), 0);
    }

    #[test]
    fn ledger_refuses_overdraft() {
        let mut l = BudgetLedger::new(100);
        l.bank(40);
        assert!(l.charge(CostKind::Policy, 61).is_err());
        assert!(l.charge(CostKind::Policy, 60).is_ok());
        assert_eq!(l.charge_up_to(CostKind::Overhead, 10), 0);
        assert!(BudgetLedger::with_state(10, CostBreakdown::new(8, 0, 0), 3).is_err());
    }

    #[test]
    fn detection_examples() {
        let cfg = DetectionThresholds::default();
        assert_eq!(detect_negative_peak(&[0.8, 0.8, 0.8], &[0.1, 0.1, 0.1], &cfg), None);
        assert_eq!(
            detect_negative_peak(&[0.8, 0.75, 0.35], &[0.1, 0.1, 0.2], &cfg),
            Some(3)
        );
        assert_eq!(detect_negative_peak(&[0.45, 0.44], &[0.1, 0.1], &cfg), None);
        assert_eq!(detect_negative_peak(&[0.9], &[0.8], &cfg), Some(1));
        let quality_only = detect_with(&[0.9], &[0.8], &cfg, PeakTrigger::QualityDrop);
        assert_eq!(quality_only, None);
        let unreachable = DetectionThresholds::unreachable();
        assert_eq!(detect_negative_peak(&[1.0, 0.0], &[1.0, 1.0], &unreachable), None);
    }

    /// Executor with scripted qualities; repairs always score `repair_quality`.
    struct Scripted {
        qualities: Vec<f64>,
        repair_quality: f64,
        fail_on: Option<usize>,
        calls: Vec<(Phase, usize, u64)>,
    }

    impl Executor for Scripted {
        fn task_digest(&self) -> OutputDigest {
            OutputDigest::from_text("task words here")
        }

        fn execute(&mut self, r: &TurnRequest<'_>) -> Result<TurnOutput> {
            self.calls.push((r.phase, r.turn, r.allocated_tokens));
            if Some(r.turn) == self.fail_on && r.phase == Phase::Execute {
                return Err(ApemoError::Protocol("scripted failure".into()));
            }
            let quality = match r.phase {
                Phase::Repair => self.repair_quality,
                _ => self.qualities.get(r.turn.saturating_sub(1)).copied().unwrap_or(0.5),
            };
            Ok(TurnOutput {
                digest: OutputDigest::from_text(&format!("task words step {} {:?}", r.turn, r.phase)),
                tokens_used: r.allocated_tokens,
                quality,
                trapped: false,
            })
        }

        fn commit(&mut self, _turn: usize, _kept: Attempt) {}
    }

    fn spec(policy: PolicyKind, horizon: usize, cap: u64) -> TrajectorySpec {
        TrajectorySpec {
            policy,
            horizon,
            budget_cap: cap,
            seed: 7,
            model_id: "scripted".into(),
            episode_id: 0,
        }
    }

    fn scripted(qualities: Vec<f64>) -> Scripted {
        Scripted {
            qualities,
            repair_quality: 0.9,
            fail_on: None,
            calls: vec![],
        }
    }

    #[test]
    fn single_turn_uniform() {
        let mut ex = scripted(vec![0.6]);
        let traj =
            run_trajectory(&mut ex, spec(PolicyKind::Uniform, 1, 1000), &SchedulerConfig::default())
                .unwrap();
        assert_eq!(traj.turns.len(), 1);
        assert!(traj.turns[0].tokens_spent <= 1000);
        assert!(traj.repairs.is_empty());
        traj.validate().unwrap();
    }

    #[test]
    fn apemo_repairs_scripted_negative_peak() {
        let mut ex = scripted(vec![0.8, 0.8, 0.8, 0.3, 0.8, 0.8, 0.8, 0.8]);
        let traj =
            run_trajectory(&mut ex, spec(PolicyKind::Apemo, 8, 8000), &SchedulerConfig::default())
                .unwrap();
        assert!(traj.turns[3].repaired);
        assert_eq!(traj.turns[3].quality, 0.9);
        assert!(traj.cost.repair_cost > 0);
        assert!(traj.cost.total() <= 8000);
        let r = &traj.repairs[0];
        assert_eq!((r.trigger_turn, r.reason), (4, RepairReason::NegativePeak));
        assert!(r.improved);
        // Repair cost is attributed to the repaired turn.
        assert!(traj.turns[3].tokens_spent > traj.turns[2].tokens_spent);
    }

    #[test]
    fn repair_keeps_original_on_tie() {
        let cfg = SchedulerConfig {
            ending_threshold: 0.0,
            ..Default::default()
        };
        let mut ex = scripted(vec![0.8, 0.8, 0.8, 0.3, 0.8, 0.8, 0.8, 0.8]);
        ex.repair_quality = 0.3;
        let traj = run_trajectory(&mut ex, spec(PolicyKind::Apemo, 8, 8000), &cfg).unwrap();
        assert_eq!(traj.turns[3].quality, 0.3);
        assert!(traj.turns[3].repaired);
        assert!(!traj.repairs[0].improved);
        assert!(traj.cost.repair_cost > 0, "spent repair tokens stay charged");
    }

    #[test]
    fn ending_stabilization_spends_reserve() {
        let mut ex = scripted(vec![0.6; 8]);
        let traj =
            run_trajectory(&mut ex, spec(PolicyKind::Apemo, 8, 8000), &SchedulerConfig::default())
                .unwrap();
        let endings: Vec<_> = traj
            .repairs
            .iter()
            .filter(|r| r.reason == RepairReason::EndingStabilization)
            .collect();
        assert_eq!(endings.len(), 2);
        assert_eq!(endings[0].trigger_turn, 7);
        assert_eq!(endings[1].trigger_turn, 8);
        assert!(traj.turns[6].repaired && traj.turns[7].repaired);
        traj.validate().unwrap();
    }

    #[test]
    fn baselines_never_repair() {
        for p in [
            PolicyKind::Uniform,
            PolicyKind::FlowPlain,
            PolicyKind::PlanExecute,
            PolicyKind::PlanExecuteReflect,
            PolicyKind::TaskPeakEnd,
        ] {
            let mut ex = scripted(vec![0.9, 0.2, 0.9, 0.1, 0.2, 0.2]);
            let traj = run_trajectory(&mut ex, spec(p, 6, 6000), &SchedulerConfig::default())
                .unwrap();
            assert!(traj.turns.iter().all(|t| !t.repaired), "{p}");
            assert_eq!(traj.cost.repair_cost, 0, "{p}");
        }
    }

    #[test]
    fn plan_and_reflect_passes_are_policy_cost() {
        let mut ex = scripted(vec![0.7; 4]);
        let traj = run_trajectory(
            &mut ex,
            spec(PolicyKind::PlanExecuteReflect, 4, 4000),
            &SchedulerConfig::default(),
        )
        .unwrap();
        let phases: Vec<Phase> = ex.calls.iter().map(|c| c.0).collect();
        assert_eq!(phases[0], Phase::Plan);
        assert_eq!(ex.calls[0].2, 400);
        let reflect_at = phases.iter().position(|p| *p == Phase::Reflect).unwrap();
        assert_eq!(ex.calls[reflect_at].1, 4);
        assert_eq!(traj.cost.policy_cost, 4000);
    }

    #[test]
    fn executor_failure_marks_fallback() {
        let mut ex = scripted(vec![0.7; 4]);
        ex.fail_on = Some(2);
        let traj =
            run_trajectory(&mut ex, spec(PolicyKind::Uniform, 4, 4000), &SchedulerConfig::default())
                .unwrap();
        assert!(traj.fallback);
        assert_eq!(traj.turns[1].quality, 0.0);
        assert_eq!(traj.turns.len(), 4);
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut ex = scripted(vec![]);
        let cfg = SchedulerConfig::default();
        assert!(run_trajectory(&mut ex, spec(PolicyKind::Uniform, 0, 100), &cfg).is_err());
        assert!(run_trajectory(&mut ex, spec(PolicyKind::Uniform, 8, 7), &cfg).is_err());
    }
}

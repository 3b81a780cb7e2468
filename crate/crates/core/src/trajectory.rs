//! Trajectory data model and trajectory-level scoring.
//!
//! A trajectory is an ordered run of `T` turns. Scoring treats it as one unit:
//! peak-end weighted quality, frustration burden, realized coordination cost and
//! the reuse probability derived from them, combined into a scalar objective.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{ApemoError, Result};
use crate::scheduler::{PolicyKind, RepairDecision};
use crate::signals::OutputDigest;

/// One step of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based turn number.
    pub index: usize,
    pub quality: f64,
    pub frustration: f64,
    /// Tokens charged to this turn, including any repair re-execution.
    pub tokens_spent: u64,
    pub repaired: bool,
    pub trapped: bool,
    pub output_digest: OutputDigest,
}

impl TurnRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(ApemoError::invalid(format!(
                "turn {}: quality {} outside [0,1]",
                self.index, self.quality
            )));
        }
        if !(0.0..=1.0).contains(&self.frustration) {
            return Err(ApemoError::invalid(format!(
                "turn {}: frustration {} outside [0,1]",
                self.index, self.frustration
            )));
        }
        Ok(())
    }
}

/// Token-unit decomposition of realized coordination cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub policy_cost: u64,
    pub repair_cost: u64,
    pub overhead_cost: u64,
}

impl CostBreakdown {
    pub fn new(policy_cost: u64, repair_cost: u64, overhead_cost: u64) -> Self {
        Self {
            policy_cost,
            repair_cost,
            overhead_cost,
        }
    }

    pub fn total(&self) -> u64 {
        self.policy_cost + self.repair_cost + self.overhead_cost
    }
}

impl Add for CostBreakdown {
    type Output = CostBreakdown;

    fn add(self, rhs: Self) -> Self {
        Self {
            policy_cost: self.policy_cost + rhs.policy_cost,
            repair_cost: self.repair_cost + rhs.repair_cost,
            overhead_cost: self.overhead_cost + rhs.overhead_cost,
        }
    }
}

/// `C = C_policy + C_repair + C_overhead`.
pub fn coordination_cost(b: &CostBreakdown) -> u64 {
    b.total()
}

/// A complete trajectory with its provenance and final ledger totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<TurnRecord>,
    pub policy: PolicyKind,
    pub model_id: String,
    pub seed: u64,
    pub episode_id: u32,
    pub budget_cap: u64,
    pub cost: CostBreakdown,
    /// Set when any executor call failed during the run.
    pub fallback: bool,
    pub repairs: Vec<RepairDecision>,
}

impl Trajectory {
    /// Bare trajectory from per-turn quality and frustration series, with
    /// zero cost and no provenance.
    pub fn from_series(policy: PolicyKind, qualities: &[f64], frustrations: &[f64]) -> Result<Self> {
        if qualities.len() != frustrations.len() {
            return Err(ApemoError::invalid(format!(
                "series lengths differ: {} qualities, {} frustrations",
                qualities.len(),
                frustrations.len()
            )));
        }
        let turns = qualities
            .iter()
            .zip(frustrations)
            .enumerate()
            .map(|(i, (&quality, &frustration))| TurnRecord {
                index: i + 1,
                quality,
                frustration,
                tokens_spent: 0,
                repaired: false,
                trapped: false,
                output_digest: OutputDigest::default(),
            })
            .collect();
        let traj = Self {
            turns,
            policy,
            model_id: String::new(),
            seed: 0,
            episode_id: 0,
            budget_cap: 0,
            cost: CostBreakdown::default(),
            fallback: false,
            repairs: Vec::new(),
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn horizon(&self) -> usize {
        self.turns.len()
    }

    pub fn qualities(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.quality).collect()
    }

    pub fn frustrations(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.frustration).collect()
    }

    /// Checks structural invariants: contiguous 1..T indices, bounded
    /// per-turn values and the hard budget cap.
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(ApemoError::invalid("trajectory has no turns"));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i + 1 {
                return Err(ApemoError::invalid(format!(
                    "turn indices must be 1..T without gaps; position {} has index {}",
                    i + 1,
                    turn.index
                )));
            }
            turn.validate()?;
        }
        if self.cost.total() > self.budget_cap {
            return Err(ApemoError::invalid(format!(
                "coordination cost {} exceeds budget cap {}",
                self.cost.total(),
                self.budget_cap
            )));
        }
        Ok(())
    }

    pub fn mean_quality(&self) -> Result<f64> {
        mean(&self.qualities()).ok_or_else(|| ApemoError::invalid("empty trajectory"))
    }
}

/// Coefficients of the scalar objective and the peak/end weights of `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub w_peak: f64,
    pub w_end: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            w_peak: 0.5,
            w_end: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("w_peak", self.w_peak),
            ("w_end", self.w_end),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(ApemoError::config(format!(
                    "objective.{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        if (self.w_peak + self.w_end - 1.0).abs() > 1e-9 {
            return Err(ApemoError::config(format!(
                "objective.w_peak + objective.w_end must equal 1, got {}",
                self.w_peak + self.w_end
            )));
        }
        Ok(())
    }
}

/// Peak-end weighted quality over a raw quality series.
///
/// `w_peak * max(q) + w_end * mean(q[T-1], q[T])`. A single-turn series uses
/// `q[1]` as its ending.
pub fn peak_end_of(qualities: &[f64], w: &ObjectiveWeights) -> Result<f64> {
    let last = *qualities
        .last()
        .ok_or_else(|| ApemoError::invalid("peak-end quality of an empty trajectory"))?;
    if let Some(bad) = qualities.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(ApemoError::invalid(format!("quality {bad} outside [0,1]")));
    }
    let peak = qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ending = match qualities.len() {
        1 => last,
        n => (qualities[n - 2] + last) / 2.0,
    };
    Ok(w.w_peak * peak + w.w_end * ending)
}

pub fn peak_end_quality(traj: &Trajectory, w: &ObjectiveWeights) -> Result<f64> {
    peak_end_of(&traj.qualities(), w)
}

/// Mean per-turn frustration; this is the reported `F` and the default
/// objective term.
pub fn average_frustration(traj: &Trajectory) -> Result<f64> {
    mean(&traj.frustrations()).ok_or_else(|| ApemoError::invalid("empty trajectory"))
}

/// Summed per-turn frustration.
pub fn cumulative_frustration(traj: &Trajectory) -> Result<f64> {
    if traj.turns.is_empty() {
        return Err(ApemoError::invalid("empty trajectory"));
    }
    Ok(traj.frustrations().iter().sum())
}

/// Logistic map from (quality, frustration) to a reuse probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReuseModel {
    pub k_q: f64,
    pub k_f: f64,
    pub bias: f64,
}

impl Default for ReuseModel {
    fn default() -> Self {
        Self {
            k_q: 4.0,
            k_f: 4.0,
            bias: -2.0,
        }
    }
}

impl ReuseModel {
    pub fn probability(&self, quality: f64, frustration: f64) -> f64 {
        reuse_probability(quality, frustration, self.k_q, self.k_f, self.bias)
    }
}

pub fn reuse_probability(q_value: f64, f_value: f64, k_q: f64, k_f: f64, bias: f64) -> f64 {
    logistic(k_q * q_value - k_f * f_value + bias)
}

fn logistic(x: f64) -> f64 {
    // Split by sign so neither branch overflows exp().
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `alpha*Q + beta*R - gamma*F - lambda*(C / C_max)`.
pub fn objective_value(
    q: f64,
    r: f64,
    f: f64,
    cost: u64,
    budget_cap: u64,
    w: &ObjectiveWeights,
) -> Result<f64> {
    let normalized_cost = match (cost, budget_cap) {
        (0, _) => 0.0,
        (_, 0) => {
            return Err(ApemoError::invalid(
                "cannot normalize a positive cost against a zero budget cap",
            ))
        }
        (c, cap) => c as f64 / cap as f64,
    };
    for (name, v) in [("Q", q), ("R", r), ("F", f)] {
        if !v.is_finite() {
            return Err(ApemoError::invalid(format!("{name} must be finite, got {v}")));
        }
    }
    Ok(w.alpha * q + w.beta * r - w.gamma * f - w.lambda * normalized_cost)
}

/// Reuse probability per thousand tokens of coordination cost.
pub fn reuse_per_cost(r: f64, cost: u64) -> Result<f64> {
    if cost == 0 {
        return Err(ApemoError::UndefinedRatio(
            "reuse-per-cost with zero coordination cost".into(),
        ));
    }
    Ok(r / (cost as f64 / 1000.0))
}

pub(crate) fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

//! The contract between the scheduler loop and whatever produces turn outputs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signals::OutputDigest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Up-front planning pass (plan-execute baselines).
    Plan,
    /// Regular turn execution.
    Execute,
    /// Critique-augmented re-execution of the current turn.
    Repair,
    /// One reflection pass before the final turn.
    Reflect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnRequest<'a> {
    pub turn: usize,
    pub horizon: usize,
    pub phase: Phase,
    /// Hard cap on tokens the executor may consume for this call.
    pub allocated_tokens: u64,
    /// Tokens already spent on the turn being repaired (zero otherwise).
    pub prior_tokens: u64,
    pub critique: Option<&'a str>,
    pub seed: u64,
}

impl<'a> TurnRequest<'a> {
    pub fn execute(turn: usize, horizon: usize, allocated_tokens: u64, seed: u64) -> Self {
        Self {
            turn,
            horizon,
            phase: Phase::Execute,
            allocated_tokens,
            prior_tokens: 0,
            critique: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutput {
    pub digest: OutputDigest,
    /// Tokens actually consumed, as reported by the backend.
    pub tokens_used: u64,
    pub quality: f64,
    /// The backend injected a perturbation on this turn.
    pub trapped: bool,
}

/// Which attempt of the current turn the scheduler kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attempt {
    Original,
    Repair,
}

/// Anything that can execute trajectory turns under a token allocation.
///
/// Calls for one trajectory are strictly sequential. After each `Execute`
/// (and optional `Repair`) call the scheduler reports the kept attempt via
/// [`Executor::commit`], so the backend can carry the right state forward.
pub trait Executor {
    /// Digest of the task specification, used for context-drift scoring.
    fn task_digest(&self) -> OutputDigest;

    fn execute(&mut self, request: &TurnRequest<'_>) -> Result<TurnOutput>;

    fn commit(&mut self, turn: usize, kept: Attempt);
}

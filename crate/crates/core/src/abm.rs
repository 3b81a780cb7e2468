//! Seeded agent-based simulator of trajectory dynamics.
//!
//! The latent quality process drifts, takes Gaussian noise, and can be hit by
//! an impulse trap that recovers geometrically. Compute enters twice: the
//! observed quality of a turn is the latent plus a saturating uplift of the
//! tokens spent on it, and a repair re-execution heals part of the latent
//! deficit so the fix carries into later turns.
//!
//! Every random draw comes from a stream keyed by `(seed, turn, purpose)`, so
//! two policies run on the same seed see the same noise regardless of how
//! they allocate tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ApemoError, Result};
use crate::executor::{Attempt, Executor, Phase, TurnOutput, TurnRequest};
use crate::signals::OutputDigest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbmConfig {
    pub initial_quality: f64,
    /// Per-turn change of the latent quality.
    pub drift: f64,
    pub noise_sd: f64,
    pub uplift_gain: f64,
    /// Tokens at which the uplift reaches half of `uplift_gain`.
    pub uplift_half: f64,
    /// Healing efficacy of plan/reflect passes relative to a repair.
    pub side_pass_efficacy: f64,
    /// Nominal length of a synthetic output, in tokens.
    pub output_tokens: usize,
    pub task_vocab: usize,
}

impl Default for AbmConfig {
    fn default() -> Self {
        Self {
            initial_quality: 0.7,
            drift: -0.02,
            noise_sd: 0.05,
            uplift_gain: 0.25,
            uplift_half: 800.0,
            side_pass_efficacy: 0.5,
            output_tokens: 24,
            task_vocab: 12,
        }
    }
}

impl AbmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ApemoError::config(m));
        if !(0.0..=1.0).contains(&self.initial_quality) {
            return fail(format!("abm.initial_quality must be in [0,1], got {}", self.initial_quality));
        }
        if !self.drift.is_finite() {
            return fail("abm.drift must be finite".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return fail(format!("abm.noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !(self.uplift_gain.is_finite() && self.uplift_gain >= 0.0) {
            return fail(format!("abm.uplift_gain must be >= 0, got {}", self.uplift_gain));
        }
        if !(self.uplift_half.is_finite() && self.uplift_half > 0.0) {
            return fail(format!("abm.uplift_half must be > 0, got {}", self.uplift_half));
        }
        if !(0.0..=1.0).contains(&self.side_pass_efficacy) {
            return fail("abm.side_pass_efficacy must be in [0,1]".into());
        }
        if self.output_tokens == 0 || self.task_vocab == 0 {
            return fail("abm.output_tokens and abm.task_vocab must be >= 1".into());
        }
        Ok(())
    }
}

/// Mid-trajectory perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSpec {
    pub trap_turn: usize,
    pub severity: f64,
    /// Fraction of outstanding trap damage recovered passively each turn.
    #[serde(default = "default_recovery")]
    pub recovery_rate: f64,
}

fn default_recovery() -> f64 {
    0.3
}

impl TrapSpec {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.trap_turn < 1 || self.trap_turn > horizon {
            return Err(ApemoError::config(format!(
                "trap.trap_turn must be in 1..={horizon}, got {}",
                self.trap_turn
            )));
        }
        if !(self.severity > 0.0 && self.severity <= 1.0) {
            return Err(ApemoError::config(format!(
                "trap.severity must be in (0,1], got {}",
                self.severity
            )));
        }
        if !(0.0..=1.0).contains(&self.recovery_rate) {
            return Err(ApemoError::config(format!(
                "trap.recovery_rate must be in [0,1], got {}",
                self.recovery_rate
            )));
        }
        Ok(())
    }
}

const STREAM_NOISE: u64 = 1;
const STREAM_DIGEST: u64 = 2;
const STREAM_REPAIR_DIGEST: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, turn: usize, stream: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ turn as u64) ^ stream);
    ChaCha8Rng::seed_from_u64(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmState {
    cfg: AbmConfig,
    seed: u64,
    pub latent_quality: f64,
    /// Outstanding trap damage still subject to passive recovery.
    pub trap_damage: f64,
    last_output: Option<OutputDigest>,
    prior_output: Option<OutputDigest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmObservation {
    pub quality: f64,
    pub latent: f64,
    pub digest: OutputDigest,
    pub tokens_used: u64,
    pub trapped: bool,
}

impl AbmState {
    pub fn new(cfg: AbmConfig, seed: u64) -> Self {
        Self {
            cfg,
            seed,
            latent_quality: cfg.initial_quality,
            trap_damage: 0.0,
            last_output: None,
            prior_output: None,
        }
    }

    pub fn config(&self) -> &AbmConfig {
        &self.cfg
    }

    pub fn uplift(&self, tokens: u64) -> f64 {
        let x = tokens as f64;
        self.cfg.uplift_gain * x / (x + self.cfg.uplift_half)
    }

    fn saturation(&self, tokens: u64) -> f64 {
        let x = tokens as f64;
        x / (x + self.cfg.uplift_half)
    }

    /// Advance the latent process to turn `t` and observe it under `tokens`.
    pub fn step(&mut self, tokens: u64, t: usize, trap: Option<&TrapSpec>) -> AbmObservation {
        let mut rng = stream_rng(self.seed, t, STREAM_NOISE);
        let noise = if self.cfg.noise_sd > 0.0 {
            Normal::new(0.0, self.cfg.noise_sd)
                .expect("validated sd")
                .sample(&mut rng)
        } else {
            0.0
        };
        let mut latent = (self.latent_quality + self.cfg.drift + noise).clamp(0.0, 1.0);
        let trapped = trap.is_some_and(|tr| tr.trap_turn == t);
        if let Some(tr) = trap {
            if trapped {
                let hit = tr.severity.min(latent);
                latent -= hit;
                self.trap_damage += hit;
            } else if self.trap_damage > 0.0 {
                let recovered = (tr.recovery_rate * self.trap_damage).min(1.0 - latent);
                latent += recovered;
                self.trap_damage -= tr.recovery_rate * self.trap_damage;
            }
        }
        self.latent_quality = latent.clamp(0.0, 1.0);

        self.prior_output = self.last_output.take();
        let digest = self.synthesize(t, STREAM_DIGEST);
        self.last_output = Some(digest.clone());
        AbmObservation {
            quality: (self.latent_quality + self.uplift(tokens)).clamp(0.0, 1.0),
            latent: self.latent_quality,
            digest,
            tokens_used: tokens,
            trapped,
        }
    }

    /// Pull the latent toward its initial level by the saturation of `tokens`.
    fn heal(&mut self, tokens: u64, efficacy: f64) {
        let deficit = self.cfg.initial_quality - self.latent_quality;
        if deficit > 0.0 {
            let healed = efficacy * self.saturation(tokens) * deficit;
            self.latent_quality += healed;
            self.trap_damage = (self.trap_damage - healed).max(0.0);
        }
    }

    /// Critique-augmented re-execution of turn `t` that already spent
    /// `prior_tokens`, with `granted` extra tokens.
    pub fn repair(&mut self, granted: u64, prior_tokens: u64, t: usize) -> AbmObservation {
        self.heal(granted, 1.0);
        let digest = self.synthesize(t, STREAM_REPAIR_DIGEST);
        self.last_output = Some(digest.clone());
        AbmObservation {
            quality: (self.latent_quality + self.uplift(prior_tokens + granted)).clamp(0.0, 1.0),
            latent: self.latent_quality,
            digest,
            tokens_used: granted,
            trapped: false,
        }
    }

    pub fn task_digest(&self) -> OutputDigest {
        OutputDigest::from_tokens((0..self.cfg.task_vocab).map(|i| format!("task{i}")))
    }

    /// Synthetic output whose repetition of the previous output and
    /// off-task share both grow as the latent quality falls.
    fn synthesize(&self, t: usize, stream: u64) -> OutputDigest {
        let mut rng = stream_rng(self.seed, t, stream);
        let latent = self.latent_quality;
        let degradation = 1.0 - latent;
        let n = self.cfg.output_tokens;
        let len = n + ((degradation - 0.3).max(0.0) * n as f64).round() as usize;
        let mut tokens: Vec<String> = Vec::with_capacity(len);
        if let Some(src) = self.prior_output.as_ref().filter(|d| !d.is_empty()) {
            let copied = (degradation * n as f64).round() as usize;
            tokens.extend(src.tokens().iter().cycle().take(copied).cloned());
        }
        while tokens.len() < len {
            let on_task = rng.random::<f64>() < latent;
            let tok = if on_task {
                format!("task{}", rng.random_range(0..self.cfg.task_vocab))
            } else {
                format!("w{}", rng.random_range(0..4096u32))
            };
            tokens.push(tok);
        }
        OutputDigest::from_tokens(tokens)
    }
}

/// Free-function form of [`AbmState::step`].
pub fn abm_step(
    state: &mut AbmState,
    allocated_tokens: u64,
    t: usize,
    trap: Option<&TrapSpec>,
) -> AbmObservation {
    state.step(allocated_tokens, t, trap)
}

/// [`Executor`] backed by an [`AbmState`].
#[derive(Debug, Clone)]
pub struct AbmExecutor {
    committed: AbmState,
    original: Option<AbmState>,
    repaired: Option<AbmState>,
    trap: Option<TrapSpec>,
}

pub fn make_abm_executor(cfg: AbmConfig, trap: Option<TrapSpec>, seed: u64) -> Result<AbmExecutor> {
    cfg.validate()?;
    if let Some(tr) = &trap {
        tr.validate(usize::MAX)?;
    }
    Ok(AbmExecutor {
        committed: AbmState::new(cfg, seed),
        original: None,
        repaired: None,
        trap,
    })
}

impl AbmExecutor {
    pub fn state(&self) -> &AbmState {
        &self.committed
    }
}

impl Executor for AbmExecutor {
    fn task_digest(&self) -> OutputDigest {
        self.committed.task_digest()
    }

    fn execute(&mut self, r: &TurnRequest<'_>) -> Result<TurnOutput> {
        let obs = match r.phase {
            Phase::Execute => {
                let mut s = self.committed.clone();
                let obs = s.step(r.allocated_tokens, r.turn, self.trap.as_ref());
                self.original = Some(s);
                self.repaired = None;
                obs
            }
            Phase::Repair => {
                let mut s = self
                    .original
                    .clone()
                    .ok_or_else(|| ApemoError::invalid("repair requested before execution"))?;
                let obs = s.repair(r.allocated_tokens, r.prior_tokens, r.turn);
                self.repaired = Some(s);
                obs
            }
            Phase::Plan | Phase::Reflect => {
                let eff = self.committed.cfg.side_pass_efficacy;
                self.committed.heal(r.allocated_tokens, eff);
                AbmObservation {
                    quality: self.committed.latent_quality,
                    latent: self.committed.latent_quality,
                    digest: OutputDigest::default(),
                    tokens_used: r.allocated_tokens,
                    trapped: false,
                }
            }
        };
        Ok(TurnOutput {
            digest: obs.digest,
            tokens_used: obs.tokens_used,
            quality: obs.quality,
            trapped: obs.trapped,
        })
    }

    fn commit(&mut self, _turn: usize, kept: Attempt) {
        let next = match kept {
            Attempt::Repair => self.repaired.take().or_else(|| self.original.take()),
            Attempt::Original => self.original.take(),
        };
        if let Some(s) = next {
            self.committed = s;
        }
        self.original = None;
        self.repaired = None;
    }
}

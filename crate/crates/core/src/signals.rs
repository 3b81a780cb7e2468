//! Behavioral frustration proxies computed from agent output text.
//!
//! Three bounded proxies feed the per-turn score: n-gram repetition against
//! earlier outputs, drift away from the task vocabulary, and output-length
//! anomaly against the running median.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{ApemoError, Result};

/// Tokenized text statistics for one output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutputDigest {
    tokens: Vec<String>,
}

impl OutputDigest {
    /// Lowercased alphanumeric word tokens.
    pub fn from_text(text: &str) -> Self {
        let tokens = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        Self { tokens }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct n-grams. Outputs shorter than `n` contribute the whole token
    /// sequence as a single gram so short outputs remain comparable.
    pub fn ngrams(&self, n: usize) -> HashSet<&[String]> {
        let n = n.max(1);
        if self.tokens.is_empty() {
            HashSet::new()
        } else if self.tokens.len() < n {
            HashSet::from([self.tokens.as_slice()])
        } else {
            self.tokens.windows(n).collect()
        }
    }

    pub fn vocabulary(&self) -> HashSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard similarity of the two outputs' n-gram sets.
pub fn ngram_jaccard(a: &OutputDigest, b: &OutputDigest, ngram_order: usize) -> f64 {
    jaccard(&a.ngrams(ngram_order), &b.ngrams(ngram_order))
}

/// Maximum n-gram Jaccard similarity between `current` and any earlier output.
pub fn repetition_similarity(
    current: &OutputDigest,
    history: &[OutputDigest],
    ngram_order: usize,
) -> f64 {
    let grams = current.ngrams(ngram_order);
    history
        .iter()
        .map(|h| jaccard(&grams, &h.ngrams(ngram_order)))
        .fold(0.0, f64::max)
}

/// `1 - |A ∩ B| / min(|A|, |B|)` over unigram vocabularies.
pub fn context_drift(current: &OutputDigest, task: &OutputDigest) -> Result<f64> {
    if task.is_empty() {
        return Err(ApemoError::invalid("context drift needs a non-empty task digest"));
    }
    let a = current.vocabulary();
    let b = task.vocabulary();
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return Ok(1.0);
    }
    let overlap = a.intersection(&b).count() as f64 / smaller as f64;
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// `|len - median| / median` against earlier output lengths, clamped to [0,1].
pub fn length_anomaly(current: &OutputDigest, history: &[OutputDigest]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let mut lens: Vec<usize> = history.iter().map(OutputDigest::token_count).collect();
    lens.sort_unstable();
    let mid = lens.len() / 2;
    let median = if lens.len().is_multiple_of(2) {
        (lens[mid - 1] + lens[mid]) as f64 / 2.0
    } else {
        lens[mid] as f64
    };
    let len = current.token_count() as f64;
    if median == 0.0 {
        return if len == 0.0 { 0.0 } else { 1.0 };
    }
    ((len - median).abs() / median).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProxyVector {
    pub repetition_similarity: f64,
    pub context_drift: f64,
    pub length_anomaly: f64,
}

impl ProxyVector {
    pub fn new(repetition_similarity: f64, context_drift: f64, length_anomaly: f64) -> Self {
        Self {
            repetition_similarity,
            context_drift,
            length_anomaly,
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.repetition_similarity, self.context_drift, self.length_anomaly]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    /// Weights for (repetition, drift, length anomaly).
    pub proxy_weights: [f64; 3],
    pub ngram_order: usize,
    /// Exponential smoothing factor applied to the previous score.
    pub smoothing: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            proxy_weights: [0.4, 0.4, 0.2],
            ngram_order: 2,
            smoothing: 0.3,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proxy_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ApemoError::config("signals.proxy_weights must be non-negative"));
        }
        let sum: f64 = self.proxy_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ApemoError::config(format!(
                "signals.proxy_weights must sum to 1, got {sum}"
            )));
        }
        if self.ngram_order < 1 {
            return Err(ApemoError::config("signals.ngram_order must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(ApemoError::config(format!(
                "signals.smoothing must be in [0,1), got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// Weighted proxy sum, exponentially smoothed against `prev`, clamped to [0,1].
pub fn frustration_score(p: &ProxyVector, cfg: &SignalConfig, prev: Option<f64>) -> f64 {
    let raw: f64 = p
        .as_array()
        .iter()
        .zip(cfg.proxy_weights)
        .map(|(x, w)| x.clamp(0.0, 1.0) * w)
        .sum();
    let score = match prev {
        Some(prev) => cfg.smoothing * prev.clamp(0.0, 1.0) + (1.0 - cfg.smoothing) * raw,
        None => raw,
    };
    score.clamp(0.0, 1.0)
}

/// Per-trajectory signal state: prior outputs and the last smoothed score.
#[derive(Debug, Clone)]
pub struct SignalTracker {
    cfg: SignalConfig,
    task: OutputDigest,
    history: Vec<OutputDigest>,
    prev: Option<f64>,
}

impl SignalTracker {
    pub fn new(cfg: SignalConfig, task: OutputDigest) -> Self {
        Self {
            cfg,
            task,
            history: Vec::new(),
            prev: None,
        }
    }

    pub fn proxies(&self, digest: &OutputDigest) -> ProxyVector {
        let drift = if self.task.is_empty() {
            0.0
        } else {
            context_drift(digest, &self.task).unwrap_or(1.0)
        };
        ProxyVector::new(
            repetition_similarity(digest, &self.history, self.cfg.ngram_order),
            drift,
            length_anomaly(digest, &self.history),
        )
    }

    /// Score a candidate output without committing it.
    pub fn score(&self, digest: &OutputDigest) -> f64 {
        frustration_score(&self.proxies(digest), &self.cfg, self.prev)
    }

    /// Score for a turn whose executor call failed.
    pub fn failure_score(&self) -> f64 {
        frustration_score(&ProxyVector::new(1.0, 1.0, 1.0), &self.cfg, self.prev)
    }

    pub fn commit(&mut self, digest: OutputDigest, score: f64) {
        self.history.push(digest);
        self.prev = Some(score);
    }
}

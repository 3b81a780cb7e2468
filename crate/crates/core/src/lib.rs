//! Temporal compute-budget scheduling for multi-turn agent trajectories.
//!
//! A trajectory of `T` turns runs under a hard token cap. The scheduler
//! decides how much of the cap each turn gets, watches per-turn quality and a
//! text-only frustration signal, and spends a banked reserve on repairs where
//! they matter most: negative peaks and the ending.

pub mod abm;
pub mod benchmark;
pub mod error;
pub mod executor;
pub mod frontier;
pub mod llm;
pub mod scheduler;
pub mod signals;
pub mod stats;
pub mod trajectory;

pub use error::{ApemoError, Result};

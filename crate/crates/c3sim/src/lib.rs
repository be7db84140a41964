//! Deterministic simulation engine for competition among content creators
//! on a recommendation platform.
//!
//! Creators adapt their content embeddings through local better-response
//! trial and error while the platform matches each user request to one of
//! the top-K most relevant creators via a softmax. The platform can
//! intervene through three mechanisms driven by per-group user weights:
//!
//! * **UIR** — scale post-matching rewards by the user's weight,
//! * **SMT** — map the weight to a per-user softmax temperature,
//! * **HMT** — map the weight to a per-user truncation level,
//!
//! with the weights themselves adapted epoch by epoch via a multiplicative
//! update on observed group utilities. The [`analysis`] module provides
//! brute-force oracles, a second-order monotonicity checker, and a
//! finite-difference check of the weight-update direction.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `c3sim` binary for batch experiment orchestration.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod game;
pub mod intervention;
pub mod runner;
mod serde_util;

pub use error::{Error, Result};

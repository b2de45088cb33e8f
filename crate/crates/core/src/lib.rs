//! Desk-scale red teaming of fragile instruction-following targets.
//!
//! The engine generates adversarial rewrites of a canonical task instruction
//! with a tabular autoregressive policy, scores them through a cascaded
//! multi-gate reward (structural, semantic, length, then execution feedback),
//! and trains either a diversity-aware token-level Q optimizer (DAERT) or a
//! group-relative policy-gradient baseline (GRPO). Synthetic fragile targets
//! with hidden trigger n-grams stand in for real robot policies, which keeps
//! every quantity small enough for brute-force oracles.

pub mod daert;
pub mod diversity;
pub mod env;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod reward;
pub mod semantics;
pub mod text;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;

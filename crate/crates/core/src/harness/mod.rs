//! Experiment orchestration: run configuration, training and evaluation
//! protocols, artifact persistence, and method-comparison reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{builtin_benchmark, EnvSuite, EvalParams, OptimizerChoice, RunConfig};
pub use report::{compare, render_comparison_csv, render_comparison_text, ComparisonTable};
pub use run::{evaluate_params, oracle_dump, train_run, EvalReport, RunArtifacts, TaskEval};

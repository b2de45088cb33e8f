//! Run configuration: a single TOML file with nested sections, validated as
//! a whole so every violated field is reported at once.

use crate::daert::DaertConfig;
use crate::diversity::EmbeddingConfig;
use crate::env::FragileTargetSpec;
use crate::grpo::GrpoConfig;
use crate::reward::GateConfig;
use crate::semantics::ScorerConfig;
use crate::text::Vocabulary;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

pub const SCHEMA_VERSION: u32 = 1;

/// Which optimizer drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Daert,
    Grpo,
    GrpoNokl,
}

impl OptimizerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerChoice::Daert => "daert",
            OptimizerChoice::Grpo => "grpo",
            OptimizerChoice::GrpoNokl => "grpo-nokl",
        }
    }
}

impl FromStr for OptimizerChoice {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "daert" => Ok(OptimizerChoice::Daert),
            "grpo" => Ok(OptimizerChoice::Grpo),
            "grpo-nokl" => Ok(OptimizerChoice::GrpoNokl),
            other => Err(crate::Error::Validation(vec![format!(
                "unknown optimizer {other:?}; expected daert, grpo, or grpo-nokl"
            )])),
        }
    }
}

/// Environment section: either a bundled benchmark by name or an inline
/// vocabulary + horizon + target list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub benchmark: Option<String>,
    pub vocab: Option<Vec<String>>,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub targets: Vec<FragileTargetSpec>,
}

/// Resolved environment suite.
#[derive(Debug, Clone)]
pub struct EnvSuite {
    pub vocab: Vocabulary,
    pub horizon: usize,
    pub targets: Vec<FragileTargetSpec>,
}

/// Bundled benchmark specs shipped as data files.
pub fn builtin_benchmark(name: &str) -> Option<&'static str> {
    match name {
        "single-mode" => Some(include_str!("../../benchmarks/single-mode.toml")),
        "4-mode-equal" => Some(include_str!("../../benchmarks/4-mode-equal.toml")),
        "4-mode-skewed" => Some(include_str!("../../benchmarks/4-mode-skewed.toml")),
        "noisy" => Some(include_str!("../../benchmarks/noisy.toml")),
        _ => None,
    }
}

pub fn builtin_benchmark_names() -> &'static [&'static str] {
    &["single-mode", "4-mode-equal", "4-mode-skewed", "noisy"]
}

#[derive(Debug, Clone, Deserialize)]
struct BenchmarkFile {
    vocab: Vec<String>,
    horizon: usize,
    targets: Vec<FragileTargetSpec>,
}

impl EnvironmentConfig {
    pub fn resolve(&self) -> crate::Result<EnvSuite> {
        let (vocab_words, horizon, targets) = match (&self.benchmark, &self.vocab) {
            (Some(name), None) => {
                let body = builtin_benchmark(name).ok_or_else(|| {
                    crate::Error::Validation(vec![format!(
                        "unknown benchmark {name:?}; bundled: {:?}",
                        builtin_benchmark_names()
                    )])
                })?;
                let file: BenchmarkFile = toml::from_str(body)
                    .map_err(|e| crate::Error::Validation(vec![format!("bad benchmark file: {e}")]))?;
                (file.vocab, file.horizon, file.targets)
            }
            (None, Some(words)) => {
                let horizon = self.horizon.ok_or_else(|| {
                    crate::Error::Validation(vec![
                        "environment.horizon is required with an inline vocabulary".into(),
                    ])
                })?;
                (words.clone(), horizon, self.targets.clone())
            }
            (Some(_), Some(_)) => {
                return Err(crate::Error::Validation(vec![
                    "environment.benchmark and environment.vocab are mutually exclusive".into(),
                ]))
            }
            (None, None) => {
                return Err(crate::Error::Validation(vec![
                    "environment needs either a benchmark name or an inline vocabulary".into(),
                ]))
            }
        };
        let words: Vec<&str> = vocab_words.iter().map(|s| s.as_str()).collect();
        let vocab = Vocabulary::new(&words)?;
        if horizon == 0 {
            return Err(crate::Error::Validation(vec![
                "environment.horizon must be positive".into(),
            ]));
        }
        if targets.is_empty() {
            return Err(crate::Error::Validation(vec![
                "environment needs at least one target".into(),
            ]));
        }
        Ok(EnvSuite { vocab, horizon, targets })
    }
}

/// Evaluation-protocol parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalParams {
    pub variants_per_task: usize,
    pub episodes: usize,
    /// Resample cap for gate-failing variants before a task is marked degenerate.
    pub retry_cap: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            variants_per_task: 10,
            episodes: 5,
            retry_cap: 100,
        }
    }
}

/// The whole run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub optimizer: OptimizerChoice,
    pub seeds: Vec<u64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub gates: GateConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub daert: DaertConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub evaluation: EvalParams,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_lambda() -> f64 {
    0.1
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(body: &str) -> crate::Result<Self> {
        let cfg: RunConfig = toml::from_str(body)
            .map_err(|e| crate::Error::Validation(vec![format!("config parse error: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full validation; collects every violated field before failing.
    pub fn validate(&self) -> crate::Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} unsupported; this build reads {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            errs.push("seeds must be non-empty".into());
        }
        if self.lambda < 0.0 {
            errs.push(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.workers == 0 {
            errs.push("workers must be positive".into());
        }
        if self.evaluation.variants_per_task == 0 {
            errs.push("evaluation.variants_per_task must be positive".into());
        }
        if self.evaluation.episodes == 0 {
            errs.push("evaluation.episodes must be positive".into());
        }
        if self.evaluation.retry_cap == 0 {
            errs.push("evaluation.retry_cap must be positive".into());
        }
        errs.extend(self.gates.validate());
        errs.extend(self.daert.validate());
        errs.extend(self.grpo.validate());
        match self.environment.resolve() {
            Ok(suite) => {
                for t in &suite.targets {
                    errs.extend(t.validate(&suite.vocab));
                }
            }
            Err(crate::Error::Validation(v)) => errs.extend(v),
            Err(e) => errs.push(e.to_string()),
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::Validation(errs))
        }
    }

    /// Effective GRPO config for the selected optimizer variant.
    pub fn grpo_effective(&self) -> GrpoConfig {
        let mut g = self.grpo.clone();
        if self.optimizer == OptimizerChoice::GrpoNokl {
            g.kl_enabled = false;
        }
        g
    }
}

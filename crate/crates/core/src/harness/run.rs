//! Run execution: trains the selected optimizer per seed, persists artifacts,
//! and implements the evaluation protocol (gate-valid variant sampling with
//! rejection accounting, episode-averaged success, diversity, and the
//! success-minus-λ·diversity score).

use crate::daert::{self, derive_seed, OptimizerState, RolloutCtx, StepMetrics};
use crate::diversity::{mode_coverage, pairwise_cosine_distance, pca_project, Embedder};
use crate::env::{enumerate_modes, evaluate, FragileTargetSpec};
use crate::grpo::{grpo_step, GrpoState};
use crate::harness::config::{EnvSuite, OptimizerChoice, RunConfig};
use crate::policy::PolicyParams;
use crate::reward::compose_reward;
use crate::semantics::Scorer;
use crate::text::{detokenize, tokenize, Instruction};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Paths produced by one training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_path: PathBuf,
    pub metrics_paths: Vec<PathBuf>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub eval_paths: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct MetricsHeader<'a> {
    schema_version: u32,
    optimizer: &'a str,
    seed: u64,
}

/// Per-task evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: u32,
    /// True when gate-valid variants could not be sampled within the retry cap.
    pub degenerate: bool,
    pub rejection_rate: f64,
    pub canonical_success: f64,
    pub mean_success: f64,
    pub mean_pairwise_cos: f64,
    pub mode_coverage: Option<f64>,
    pub score: f64,
    pub variants: Vec<String>,
}

/// Evaluation report for one checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub optimizer: String,
    pub seed: u64,
    pub lambda: f64,
    pub tasks: Vec<TaskEval>,
}

fn run_optimizer(
    config: &RunConfig,
    suite: &EnvSuite,
    seed: u64,
) -> crate::Result<(PolicyParams, Vec<StepMetrics>)> {
    let scorer = Scorer::new(config.scorer.clone());
    let episodes_override = Some(match config.optimizer {
        OptimizerChoice::Daert => config.daert.episodes_per_rollout,
        _ => config.grpo.episodes_per_rollout,
    });
    let ctx = RolloutCtx {
        vocab: &suite.vocab,
        gate: &config.gates,
        scorer: &scorer,
        targets: &suite.targets,
        base_seed: seed,
        episodes_override,
        workers: config.workers,
    };
    let params = PolicyParams::new(suite.vocab.size(), suite.horizon);
    let mut metrics = Vec::new();
    match config.optimizer {
        OptimizerChoice::Daert => {
            let mut state = OptimizerState::new(params);
            for _ in 0..config.daert.total_steps {
                metrics.push(daert::train_step(&mut state, &config.daert, &ctx)?);
            }
            Ok((state.params, metrics))
        }
        OptimizerChoice::Grpo | OptimizerChoice::GrpoNokl => {
            let cfg = config.grpo_effective();
            let mut state = GrpoState::new(params);
            for _ in 0..cfg.total_steps {
                metrics.push(grpo_step(&mut state, &cfg, &ctx)?);
            }
            Ok((state.params, metrics))
        }
    }
}

/// Evaluation protocol: per task, sample gate-valid variants (resampling
/// rejects up to the retry cap), test each over E episodes, and report
/// success, diversity, coverage, and the λ-weighted score. Never mutates
/// the checkpoint.
pub fn evaluate_params(
    params: &PolicyParams,
    config: &RunConfig,
    suite: &EnvSuite,
    seed: u64,
) -> crate::Result<EvalReport> {
    let scorer = Scorer::new(config.scorer.clone());
    let embedder = Embedder::new(config.embedding.clone(), &suite.vocab);
    let mut tasks = Vec::new();
    for spec in &suite.targets {
        tasks.push(evaluate_task(
            params, config, suite, spec, &scorer, &embedder, seed,
        )?);
    }
    Ok(EvalReport {
        optimizer: config.optimizer.name().to_string(),
        seed,
        lambda: config.lambda,
        tasks,
    })
}

fn evaluate_task(
    params: &PolicyParams,
    config: &RunConfig,
    suite: &EnvSuite,
    spec: &FragileTargetSpec,
    scorer: &Scorer,
    embedder: &Embedder,
    seed: u64,
) -> crate::Result<TaskEval> {
    let mut spec_eval = spec.clone();
    spec_eval.episodes = config.evaluation.episodes;
    let task_instr = tokenize(&spec.canonical, &suite.vocab);
    let canonical_success = evaluate(
        &spec_eval,
        &task_instr,
        &suite.vocab,
        derive_seed(seed, &[0xCA, spec.task_id as u64]),
    )
    .success_rate;

    let mut variants: Vec<Instruction> = Vec::new();
    let mut successes: Vec<f64> = Vec::new();
    let mut rejections = 0u64;
    let mut attempts = 0u64;
    let mut degenerate = false;
    'variants: for v in 0..config.evaluation.variants_per_task {
        for attempt in 0..config.evaluation.retry_cap {
            attempts += 1;
            let sample_seed = derive_seed(
                seed,
                &[0xEB, spec.task_id as u64, v as u64, attempt as u64],
            );
            let seq = params.sample_sequence(spec.task_id, sample_seed);
            let instr = Instruction {
                raw: detokenize(&seq.tokens, &suite.vocab),
                tokens: seq.tokens,
            };
            let env_seed = derive_seed(
                seed,
                &[0xEC, spec.task_id as u64, v as u64, attempt as u64],
            );
            let breakdown = compose_reward(&instr, &task_instr, &config.gates, scorer, || {
                Ok(crate::reward::execution_feedback(
                    evaluate(&spec_eval, &instr, &suite.vocab, env_seed).success_rate,
                ))
            })?;
            if breakdown.gates_pass() {
                successes.push(1.0 - breakdown.feedback.expect("feedback set when gates pass"));
                variants.push(instr);
                continue 'variants;
            }
            rejections += 1;
        }
        degenerate = true;
        break;
    }

    let mean_success = if successes.is_empty() {
        0.0
    } else {
        successes.iter().sum::<f64>() / successes.len() as f64
    };
    let mean_pairwise_cos = if variants.len() >= 2 {
        pairwise_cosine_distance(&variants, embedder)?
    } else {
        0.0
    };
    let coverage = match enumerate_modes(spec, &config.gates, suite.horizon, &suite.vocab) {
        Ok(modes) => mode_coverage(&variants, &modes),
        Err(crate::Error::Capability(_)) => None,
        Err(e) => return Err(e),
    };
    let score = successes.iter().sum::<f64>() - config.lambda * mean_pairwise_cos;
    Ok(TaskEval {
        task_id: spec.task_id,
        degenerate,
        rejection_rate: if attempts == 0 {
            0.0
        } else {
            rejections as f64 / attempts as f64
        },
        canonical_success,
        mean_success,
        mean_pairwise_cos,
        mode_coverage: coverage,
        score,
        variants: variants.iter().map(|i| i.raw.clone()).collect(),
    })
}

fn write_pca_csv(
    path: &Path,
    report: &EvalReport,
    config: &RunConfig,
    suite: &EnvSuite,
) -> crate::Result<()> {
    let embedder = Embedder::new(config.embedding.clone(), &suite.vocab);
    let mut out = String::from("index,x,y,method,task_id\n");
    for task in &report.tasks {
        let instrs: Vec<Instruction> = task
            .variants
            .iter()
            .map(|raw| tokenize(raw, &suite.vocab))
            .collect();
        if instrs.len() < 3 {
            continue;
        }
        let coords = pca_project(&instrs, &embedder)?;
        for (i, (x, y)) in coords.iter().enumerate() {
            out.push_str(&format!(
                "{i},{x:?},{y:?},{},{}\n",
                report.optimizer, task.task_id
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Executes the configured optimizer for every seed and persists all
/// artifacts under `out_dir`. The config snapshot is the input bytes,
/// unmodified; timestamps live only in `run-meta.json`.
pub fn train_run(config: &RunConfig, raw_config: &[u8], out_dir: &Path) -> crate::Result<RunArtifacts> {
    config.validate()?;
    let suite = config.environment.resolve()?;
    fs::create_dir_all(out_dir)?;
    let config_path = out_dir.join("config.toml");
    fs::write(&config_path, raw_config)?;

    let mut metrics_paths = Vec::new();
    let mut checkpoint_paths = Vec::new();
    let mut eval_paths = Vec::new();
    for &seed in &config.seeds {
        let (params, metrics) = run_optimizer(config, &suite, seed)?;

        let metrics_path = out_dir.join(format!("metrics-{seed}.jsonl"));
        let mut f = fs::File::create(&metrics_path)?;
        let header = MetricsHeader {
            schema_version: config.schema_version,
            optimizer: config.optimizer.name(),
            seed,
        };
        writeln!(f, "{}", serde_json::to_string(&header)?)?;
        for m in &metrics {
            writeln!(f, "{}", serde_json::to_string(m)?)?;
        }
        f.flush()?;

        let checkpoint_path = out_dir.join(format!("checkpoint-{seed}.txt"));
        params.save(fs::File::create(&checkpoint_path)?)?;

        let report = evaluate_params(&params, config, &suite, seed)?;
        let eval_path = out_dir.join(format!("eval-{seed}.json"));
        fs::write(&eval_path, serde_json::to_string_pretty(&report)?)?;
        write_pca_csv(&out_dir.join(format!("pca-{seed}.csv")), &report, config, &suite)?;

        metrics_paths.push(metrics_path);
        checkpoint_paths.push(checkpoint_path);
        eval_paths.push(eval_path);
    }

    let meta = serde_json::json!({
        "finished_unix_ms": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
        "optimizer": config.optimizer.name(),
    });
    fs::write(out_dir.join("run-meta.json"), serde_json::to_string_pretty(&meta)?)?;

    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        config_path,
        metrics_paths,
        checkpoint_paths,
        eval_paths,
    })
}

/// Dumps the brute-force mode enumeration and, when small enough, the exact
/// uniform-sampling Q table for every target in the configured environment.
pub fn oracle_dump(config: &RunConfig) -> crate::Result<String> {
    let suite = config.environment.resolve()?;
    let mut out = String::new();
    for spec in &suite.targets {
        out.push_str(&format!(
            "task {} canonical {:?} beta {} triggers {}\n",
            spec.task_id,
            spec.canonical,
            spec.beta,
            spec.triggers.len()
        ));
        let modes = enumerate_modes(spec, &config.gates, suite.horizon, &suite.vocab)?;
        for (k, mode) in modes.modes.iter().enumerate() {
            out.push_str(&format!(
                "  mode {k} trigger {:?} size {}\n",
                spec.triggers[k],
                mode.len()
            ));
            for seq in mode.iter().take(5) {
                out.push_str(&format!("    {:?}\n", detokenize(seq, &suite.vocab)));
            }
        }
        out.push_str(&format!("  drift pseudo-mode size {}\n", modes.drift.len()));
        match crate::env::uniform_q_oracle(spec, &config.gates, suite.horizon, &suite.vocab) {
            Ok(q) => {
                let mut rows: Vec<_> = q.iter().collect();
                rows.sort_by(|a, b| a.0.cmp(b.0));
                out.push_str(&format!("  uniform Q table ({} entries)\n", rows.len()));
                for ((state, token), value) in rows.iter().take(2 * suite.vocab.size()) {
                    out.push_str(&format!(
                        "    Q({} | {:?}) = {value:?}\n",
                        suite.vocab.word(*token),
                        detokenize(&state.prefix, &suite.vocab),
                    ));
                }
            }
            Err(crate::Error::Capability(msg)) => {
                out.push_str(&format!("  uniform Q table skipped: {msg}\n"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

//! Group-relative policy-gradient baseline: clipped-ratio surrogate with
//! std-normalized group advantages, an optional KL penalty to the run-initial
//! reference, and an entropy bonus. Shares the rollout and reward pipeline
//! with the DAERT optimizer.

use crate::daert::{batch_metrics, check_finite, RolloutCtx, StepMetrics};
use crate::policy::{PolicyParams, PrefixState};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// GRPO hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_ratio: f64,
    pub kl_coefficient: f64,
    pub entropy_coefficient: f64,
    pub kl_enabled: bool,
    pub total_steps: usize,
    /// Episodes per rollout during training.
    pub episodes_per_rollout: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 6,
            batch_size: 8,
            learning_rate: 0.5,
            clip_ratio: 0.2,
            kl_coefficient: 0.01,
            entropy_coefficient: 0.001,
            kl_enabled: true,
            total_steps: 2000,
            episodes_per_rollout: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            errs.push(format!("grpo.clip_ratio must lie in (0,1), got {}", self.clip_ratio));
        }
        if self.kl_coefficient < 0.0 {
            errs.push("grpo.kl_coefficient must be non-negative".into());
        }
        if self.entropy_coefficient < 0.0 {
            errs.push("grpo.entropy_coefficient must be non-negative".into());
        }
        if self.group_size < 1 {
            errs.push("grpo.group_size must be at least 1".into());
        }
        if self.batch_size < 1 {
            errs.push("grpo.batch_size must be at least 1".into());
        }
        if self.learning_rate <= 0.0 {
            errs.push("grpo.learning_rate must be positive".into());
        }
        if self.episodes_per_rollout < 1 {
            errs.push("grpo.episodes_per_rollout must be at least 1".into());
        }
        errs
    }
}

/// Mean-centered rewards divided by (group std + 1e-8). Zero-variance and
/// singleton groups yield all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Per-token surrogate entries: state, taken action, broadcast advantage.
#[derive(Debug, Clone)]
pub struct GrpoBatch {
    pub entries: Vec<(PrefixState, usize, f64)>,
}

/// Clipped surrogate + KL penalty + entropy bonus, with analytic gradients
/// over every touched logit vector.
pub fn grpo_loss_and_grad(
    batch: &GrpoBatch,
    params: &PolicyParams,
    old: &PolicyParams,
    kl_reference: &PolicyParams,
    cfg: &GrpoConfig,
) -> crate::Result<(f64, HashMap<PrefixState, Vec<f64>>)> {
    if batch.entries.is_empty() {
        return Err(crate::Error::input("empty GRPO batch"));
    }
    let vocab_size = params.vocab_size();
    let mut loss = 0.0;
    let mut grad: HashMap<PrefixState, Vec<f64>> = HashMap::new();
    for (state, action, advantage) in &batch.entries {
        let lps = params.log_probs(state);
        let probs: Vec<f64> = lps.iter().map(|x| x.exp()).collect();
        let lps_old = old.log_probs(state);
        let ratio = (lps[*action] - lps_old[*action]).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let unclipped_obj = ratio * advantage;
        let clipped_obj = clipped * advantage;
        let g = grad
            .entry(state.clone())
            .or_insert_with(|| vec![0.0; vocab_size]);

        // surrogate: −min(ratio·A, clip(ratio)·A); ties flow through the
        // unclipped branch, whose clip derivative is then identical anyway
        if unclipped_obj <= clipped_obj {
            loss -= unclipped_obj;
            for b in 0..vocab_size {
                let ind = if b == *action { 1.0 } else { 0.0 };
                g[b] -= advantage * ratio * (ind - probs[b]);
            }
        } else {
            loss -= clipped_obj;
            let inside = ratio > 1.0 - cfg.clip_ratio && ratio < 1.0 + cfg.clip_ratio;
            if inside {
                for b in 0..vocab_size {
                    let ind = if b == *action { 1.0 } else { 0.0 };
                    g[b] -= advantage * ratio * (ind - probs[b]);
                }
            }
        }

        if cfg.kl_enabled && cfg.kl_coefficient > 0.0 {
            let lps_ref = kl_reference.log_probs(state);
            let kl: f64 = probs
                .iter()
                .zip(lps.iter().zip(&lps_ref))
                .map(|(p, (lp, lr))| p * (lp - lr))
                .sum();
            loss += cfg.kl_coefficient * kl;
            for b in 0..vocab_size {
                g[b] += cfg.kl_coefficient * probs[b] * (lps[b] - lps_ref[b] - kl);
            }
        }

        if cfg.entropy_coefficient > 0.0 {
            let entropy: f64 = probs
                .iter()
                .zip(&lps)
                .map(|(p, lp)| if *p > 0.0 { -p * lp } else { 0.0 })
                .sum();
            loss -= cfg.entropy_coefficient * entropy;
            // dH/dlogit_b = −p_b(log p_b + H)
            for b in 0..vocab_size {
                g[b] += cfg.entropy_coefficient * probs[b] * (lps[b] + entropy);
            }
        }
    }
    Ok((loss, grad))
}

/// GRPO run state: current params, the per-step sampling snapshot, and the
/// fixed run-initial reference used by the KL penalty.
pub struct GrpoState {
    pub params: PolicyParams,
    pub old: PolicyParams,
    pub kl_reference: PolicyParams,
    pub step: usize,
}

impl GrpoState {
    pub fn new(params: PolicyParams) -> Self {
        let old = params.snapshot();
        let kl_reference = params.snapshot();
        GrpoState { params, old, kl_reference, step: 0 }
    }
}

/// One GRPO step over the shared reward pipeline: sample groups, normalize
/// advantages, broadcast them to all tokens of the sequence, apply one
/// gradient update. Emits the same metric row schema as DAERT.
pub fn grpo_step(
    state: &mut GrpoState,
    cfg: &GrpoConfig,
    ctx: &RolloutCtx,
) -> crate::Result<StepMetrics> {
    state.old = state.params.snapshot();
    let mut groups = Vec::with_capacity(cfg.batch_size);
    let mut total_loss = 0.0;
    let mut total_grad: HashMap<PrefixState, Vec<f64>> = HashMap::new();
    for b in 0..cfg.batch_size {
        let spec = &ctx.targets[b % ctx.targets.len()];
        let group = ctx.sample_group(
            &state.params,
            spec,
            state.step as u64,
            b as u64,
            cfg.group_size,
            true,
        )?;
        let advantages = group_advantages(&group.raw_rewards);
        let mut entries = Vec::new();
        for (seq, &adv) in group.sequences.iter().zip(&advantages) {
            for t in 0..seq.tokens.len() {
                let s = PrefixState {
                    task_id: group.task_id,
                    prefix: seq.tokens[..t].to_vec(),
                };
                entries.push((s, seq.tokens[t], adv));
            }
        }
        let batch = GrpoBatch { entries };
        let (loss, grad) =
            grpo_loss_and_grad(&batch, &state.params, &state.old, &state.kl_reference, cfg)?;
        total_loss += loss;
        for (s, g) in grad {
            let acc = total_grad
                .entry(s)
                .or_insert_with(|| vec![0.0; state.params.vocab_size()]);
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += gi;
            }
        }
        groups.push(group);
    }
    check_finite(state.step, total_loss, &total_grad)?;
    state.params.apply_gradient(&total_grad, cfg.learning_rate);
    let metrics = batch_metrics(state.step, &groups, total_loss, &state.params);
    state.step += 1;
    Ok(metrics)
}

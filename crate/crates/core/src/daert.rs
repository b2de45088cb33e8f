//! Diversity-aware optimizer: implicit token-level Q values from the
//! policy's deviation to a frozen reference, targets with uniform-average
//! successor values, group-relative reward centering, and Bellman-MSE
//! updates with exact analytic gradients.

use crate::env::{evaluate, FragileTargetSpec};
use crate::policy::{PolicyParams, PrefixState, SampledSequence};
use crate::reward::{compose_reward, execution_feedback, GateConfig, RewardBreakdown};
use crate::semantics::Scorer;
use crate::text::{detokenize, tokenize, Instruction, Vocabulary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// DAERT hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaertConfig {
    /// Exploration temperature ρ.
    pub rho: f64,
    /// Group size n.
    pub group_size: usize,
    /// Tasks per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_steps: usize,
    /// Steps between frozen-reference refreshes; 1 refreshes every step.
    pub reference_refresh: usize,
    pub centering: bool,
    /// Episodes per rollout during training; 1 keeps rewards strictly binary.
    pub episodes_per_rollout: usize,
}

impl Default for DaertConfig {
    fn default() -> Self {
        DaertConfig {
            rho: 1.0,
            group_size: 6,
            batch_size: 8,
            // small steps: the per-step reference refresh makes the update
            // multiplicative in the policy, and large steps collapse it onto
            // whichever attack happened to be sampled first
            learning_rate: 0.01,
            total_steps: 2000,
            reference_refresh: 1,
            centering: true,
            episodes_per_rollout: 1,
        }
    }
}

impl DaertConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.rho <= 0.0 {
            errs.push(format!("daert.rho must be positive, got {}", self.rho));
        }
        if self.group_size < 1 {
            errs.push("daert.group_size must be at least 1".into());
        }
        if self.batch_size < 1 {
            errs.push("daert.batch_size must be at least 1".into());
        }
        if self.learning_rate <= 0.0 {
            errs.push(format!("daert.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.reference_refresh < 1 {
            errs.push("daert.reference_refresh must be at least 1".into());
        }
        if self.episodes_per_rollout < 1 {
            errs.push("daert.episodes_per_rollout must be at least 1".into());
        }
        errs
    }
}

/// n sampled sequences for one task with raw and centered rewards.
#[derive(Debug, Clone)]
pub struct TrajectoryGroup {
    pub task_id: u32,
    pub sequences: Vec<SampledSequence>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub raw_rewards: Vec<f64>,
    pub centered_rewards: Vec<f64>,
}

/// One (state, action, target) entry; targets are fixed numbers at update
/// time, carrying no gradient dependence on the parameters.
#[derive(Debug, Clone)]
pub struct BellmanBatch {
    pub entries: Vec<(PrefixState, usize, f64)>,
}

/// Q_θ(a|s) = ρ·(log p_θ(a|s) − log p_θ_old(a|s)).
pub fn implicit_q(
    params: &PolicyParams,
    reference: &PolicyParams,
    state: &PrefixState,
    token: usize,
    rho: f64,
) -> crate::Result<f64> {
    Ok(rho * (params.log_prob(state, token)? - reference.log_prob(state, token)?))
}

/// Subtracts the group mean when centering is on; identity otherwise.
pub fn center_group(rewards: &[f64], centering: bool) -> Vec<f64> {
    if !centering || rewards.is_empty() {
        return rewards.to_vec();
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - mean).collect()
}

/// Builds the diversity-aware targets for one group:
/// Q̂(a_t|s_t) = r̃ + (1/|V|)·Σ_{a'} Q_θ(a'|s_{t+1}) for t < H−1, and
/// Q̂ = r̃ at the final step (zero successor by convention).
pub fn build_targets(
    group: &TrajectoryGroup,
    params: &PolicyParams,
    reference: &PolicyParams,
    rho: f64,
) -> crate::Result<BellmanBatch> {
    let vocab_size = params.vocab_size();
    let mut entries = Vec::new();
    for (seq, &r_tilde) in group.sequences.iter().zip(&group.centered_rewards) {
        let horizon = seq.tokens.len();
        for t in 0..horizon {
            let state = PrefixState {
                task_id: group.task_id,
                prefix: seq.tokens[..t].to_vec(),
            };
            let target = if t + 1 < horizon {
                let succ = state.child(seq.tokens[t]);
                let mut sum = 0.0;
                for a in 0..vocab_size {
                    sum += implicit_q(params, reference, &succ, a, rho)?;
                }
                r_tilde + sum / vocab_size as f64
            } else {
                r_tilde
            };
            entries.push((state, seq.tokens[t], target));
        }
    }
    Ok(BellmanBatch { entries })
}

/// Sum of squared Bellman residuals and its analytic gradient over the logit
/// vectors of every touched state, using
/// ∂log p_θ(a|s)/∂logit(b|s) = δ_{ab} − softmax_b.
pub fn bellman_loss_and_grad(
    batch: &BellmanBatch,
    params: &PolicyParams,
    reference: &PolicyParams,
    rho: f64,
) -> crate::Result<(f64, HashMap<PrefixState, Vec<f64>>)> {
    if batch.entries.is_empty() {
        return Err(crate::Error::input("empty Bellman batch"));
    }
    let vocab_size = params.vocab_size();
    let mut loss = 0.0;
    let mut grad: HashMap<PrefixState, Vec<f64>> = HashMap::new();
    for (state, action, target) in &batch.entries {
        let q = implicit_q(params, reference, state, *action, rho)?;
        let resid = q - target;
        loss += resid * resid;
        let probs = params.probs(state);
        let g = grad
            .entry(state.clone())
            .or_insert_with(|| vec![0.0; vocab_size]);
        for b in 0..vocab_size {
            let indicator = if b == *action { 1.0 } else { 0.0 };
            g[b] += 2.0 * resid * rho * (indicator - probs[b]);
        }
    }
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Rollout pipeline shared with the GRPO baseline.
// ---------------------------------------------------------------------------

/// Everything a rollout needs besides the policy: the environment suite,
/// gates, scorer, and the deterministic seed scheme.
pub struct RolloutCtx<'a> {
    pub vocab: &'a Vocabulary,
    pub gate: &'a GateConfig,
    pub scorer: &'a Scorer,
    pub targets: &'a [FragileTargetSpec],
    pub base_seed: u64,
    /// Episodes per rollout during training, overriding the spec's E.
    pub episodes_override: Option<usize>,
    pub workers: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable per-candidate seed: independent of worker count or merge order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix(base);
    for &p in parts {
        s = splitmix(s ^ p);
    }
    s
}

impl RolloutCtx<'_> {
    fn reward_one(
        &self,
        spec: &FragileTargetSpec,
        seq: &SampledSequence,
        env_seed: u64,
    ) -> crate::Result<RewardBreakdown> {
        let instr = Instruction {
            raw: detokenize(&seq.tokens, self.vocab),
            tokens: seq.tokens.clone(),
        };
        let task = tokenize(&spec.canonical, self.vocab);
        let mut spec_eval = spec.clone();
        if let Some(e) = self.episodes_override {
            spec_eval.episodes = e;
        }
        compose_reward(&instr, &task, self.gate, self.scorer, || {
            let out = evaluate(&spec_eval, &instr, self.vocab, env_seed);
            Ok(execution_feedback(out.success_rate))
        })
    }

    /// Samples one group of n sequences and scores them through the cascade.
    /// Sampling is serial in candidate order; reward evaluation may fan out
    /// across workers but is merged back in candidate order.
    pub fn sample_group(
        &self,
        params: &PolicyParams,
        spec: &FragileTargetSpec,
        step: u64,
        group_index: u64,
        n: usize,
        centering: bool,
    ) -> crate::Result<TrajectoryGroup> {
        let sequences: Vec<SampledSequence> = (0..n)
            .map(|i| {
                let seed = derive_seed(self.base_seed, &[0x5A, step, group_index, i as u64]);
                params.sample_sequence(spec.task_id, seed)
            })
            .collect();
        let breakdowns: Vec<crate::Result<RewardBreakdown>> = if self.workers > 1 {
            sequences
                .par_iter()
                .enumerate()
                .map(|(i, seq)| {
                    let env_seed =
                        derive_seed(self.base_seed, &[0xE7, step, group_index, i as u64]);
                    self.reward_one(spec, seq, env_seed)
                })
                .collect()
        } else {
            sequences
                .iter()
                .enumerate()
                .map(|(i, seq)| {
                    let env_seed =
                        derive_seed(self.base_seed, &[0xE7, step, group_index, i as u64]);
                    self.reward_one(spec, seq, env_seed)
                })
                .collect()
        };
        let breakdowns: Vec<RewardBreakdown> =
            breakdowns.into_iter().collect::<crate::Result<_>>()?;
        let raw_rewards: Vec<f64> = breakdowns.iter().map(|b| b.reward).collect();
        let centered_rewards = center_group(&raw_rewards, centering);
        Ok(TrajectoryGroup {
            task_id: spec.task_id,
            sequences,
            breakdowns,
            raw_rewards,
            centered_rewards,
        })
    }
}

/// One metrics row; both optimizers emit the same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_centered_abs: f64,
    pub loss: f64,
    /// Exact policy entropy (mean over the step's tasks); absent when the
    /// tree is too large to enumerate.
    pub entropy: Option<f64>,
    pub distinct_sequences: usize,
    pub struct_violations: usize,
    pub sem_violations: usize,
    pub len_violations: usize,
}

/// Mutable optimizer run state.
pub struct OptimizerState {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(params: PolicyParams) -> Self {
        let reference = params.snapshot();
        OptimizerState { params, reference, step: 0 }
    }
}

pub(crate) fn batch_metrics(
    step: usize,
    groups: &[TrajectoryGroup],
    loss: f64,
    params: &PolicyParams,
) -> StepMetrics {
    let mut rewards = Vec::new();
    let mut centered = Vec::new();
    let mut distinct: BTreeSet<&[usize]> = BTreeSet::new();
    let mut sv = 0;
    let mut mv = 0;
    let mut lv = 0;
    let mut task_ids: BTreeSet<u32> = BTreeSet::new();
    for g in groups {
        task_ids.insert(g.task_id);
        rewards.extend_from_slice(&g.raw_rewards);
        centered.extend_from_slice(&g.centered_rewards);
        for s in &g.sequences {
            distinct.insert(&s.tokens);
        }
        for b in &g.breakdowns {
            if b.i_struct {
                sv += 1;
            }
            if b.i_sem {
                mv += 1;
            }
            if b.i_len {
                lv += 1;
            }
        }
    }
    let entropy = {
        let mut sum = 0.0;
        let mut ok = true;
        for &t in &task_ids {
            match params.entropy(t) {
                Ok(h) => sum += h,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && !task_ids.is_empty() {
            Some(sum / task_ids.len() as f64)
        } else {
            None
        }
    };
    StepMetrics {
        step,
        mean_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
        mean_centered_abs: centered.iter().map(|r| r.abs()).sum::<f64>()
            / centered.len().max(1) as f64,
        loss,
        entropy,
        distinct_sequences: distinct.len(),
        struct_violations: sv,
        sem_violations: mv,
        len_violations: lv,
    }
}

pub(crate) fn check_finite(
    step: usize,
    loss: f64,
    grad: &HashMap<PrefixState, Vec<f64>>,
) -> crate::Result<()> {
    if !loss.is_finite() {
        return Err(crate::Error::Numeric {
            step,
            detail: format!("non-finite loss {loss}"),
        });
    }
    for g in grad.values() {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(crate::Error::Numeric {
                step,
                detail: "non-finite gradient entry".into(),
            });
        }
    }
    Ok(())
}

/// One DAERT step: rollout, gate, center, build targets, accumulate the
/// Bellman gradient across groups, then a single plain gradient update.
/// The frozen reference refreshes every `reference_refresh` steps.
pub fn train_step(
    state: &mut OptimizerState,
    cfg: &DaertConfig,
    ctx: &RolloutCtx,
) -> crate::Result<StepMetrics> {
    if state.step % cfg.reference_refresh == 0 {
        state.reference = state.params.snapshot();
    }
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
            cfg.centering,
        )?;
        let batch = build_targets(&group, &state.params, &state.reference, cfg.rho)?;
        let (loss, grad) = bellman_loss_and_grad(&batch, &state.params, &state.reference, cfg.rho)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::ScorerConfig;
    use crate::text::Vocabulary;

    #[test]
    fn implicit_q_zero_at_reference() {
        let mut p = PolicyParams::new(4, 2);
        *p.logits_mut(&PrefixState::root(0)) = vec![1.0, -2.0, 0.5, 0.0];
        let r = p.snapshot();
        for t in 0..4 {
            assert_eq!(implicit_q(&p, &r, &PrefixState::root(0), t, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn implicit_q_linear_in_rho() {
        // log p_θ = −1.0 vs log p_old = −1.5 via a direct logit offset
        let mut p = PolicyParams::new(2, 1);
        let mut r = PolicyParams::new(2, 1);
        let s = PrefixState::root(0);
        // choose logits whose log-softmax of token 0 hits the wanted values:
        // with logits (0, z), log p(0) = −ln(1 + e^z), so z = ln(1−e^lp) − lp
        let lp = -1.0f64;
        let lp_old = -1.5f64;
        *p.logits_mut(&s) = vec![0.0, (1.0 - lp.exp()).ln() - lp];
        *r.logits_mut(&s) = vec![0.0, (1.0 - lp_old.exp()).ln() - lp_old];
        let q1 = implicit_q(&p, &r, &s, 0, 1.0).unwrap();
        let q2 = implicit_q(&p, &r, &s, 0, 2.0).unwrap();
        assert!((q1 - 0.5).abs() < 1e-9, "q1 = {q1}");
        assert!((q2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn center_group_hand_values() {
        let c = center_group(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0], true);
        let expected = [2.0 / 3.0, 2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, e) in c.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn center_group_edge_cases() {
        for c in center_group(&[0.7, 0.7, 0.7], true) {
            assert!(c.abs() < 1e-12);
        }
        assert_eq!(center_group(&[0.3], true), vec![0.0]);
        assert_eq!(center_group(&[0.3, 0.9], false), vec![0.3, 0.9]);
    }

    #[test]
    fn center_group_sums_to_zero_and_shift_invariant() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c = center_group(&rewards, true);
            assert!(c.iter().sum::<f64>().abs() < 1e-12);
            let shift: Vec<f64> = rewards.iter().map(|r| r + 3.7).collect();
            let cs = center_group(&shift, true);
            for (a, b) in c.iter().zip(&cs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn toy_group(params: &PolicyParams, r_tilde: f64) -> TrajectoryGroup {
        let seq = params.sample_sequence(0, 1);
        TrajectoryGroup {
            task_id: 0,
            sequences: vec![seq],
            breakdowns: vec![],
            raw_rewards: vec![r_tilde],
            centered_rewards: vec![r_tilde],
        }
    }

    #[test]
    fn targets_at_initialization_equal_reward() {
        let p = PolicyParams::new(4, 3);
        let r = p.snapshot();
        let group = toy_group(&p, 0.5);
        let batch = build_targets(&group, &p, &r, 1.0).unwrap();
        assert_eq!(batch.entries.len(), 3);
        for (_, _, target) in &batch.entries {
            assert!((target - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn final_step_target_is_reward_exactly() {
        let mut p = PolicyParams::new(4, 2);
        *p.logits_mut(&PrefixState::root(0)) = vec![0.3, -0.3, 1.0, 0.0];
        let r = PolicyParams::new(4, 2);
        let group = toy_group(&p, -0.25);
        let batch = build_targets(&group, &p, &r, 1.0).unwrap();
        let (_, _, last) = batch.entries.last().unwrap();
        assert_eq!(*last, -0.25);
    }

    #[test]
    fn successor_average_cancels_symmetric_q() {
        // successor Q values (0.4, −0.4, 0, 0): mean 0 so Q̂ = r̃
        let mut p = PolicyParams::new(4, 2);
        let r = PolicyParams::new(4, 2);
        let seq = SampledSequence {
            task_id: 0,
            tokens: vec![1, 2],
            log_probs: vec![(0.25f64).ln(), (0.25f64).ln()],
        };
        let succ = PrefixState::root(0).child(1);
        // logits chosen so ρ(logp − logp_old) = (0.4, −0.4, 0, 0) at succ:
        // uniform reference means logp_old = log 1/4; need logp = log1/4 + q
        // which holds when logits = q up to the shared log-sum-exp... they are
        // not exactly (0.4,-0.4,0,0) as logits, so assert through implicit_q.
        *p.logits_mut(&succ) = vec![0.4, -0.4, 0.0, 0.0];
        let qs: Vec<f64> = (0..4)
            .map(|a| implicit_q(&p, &r, &succ, a, 1.0).unwrap())
            .collect();
        let mean: f64 = qs.iter().sum::<f64>() / 4.0;
        let group = TrajectoryGroup {
            task_id: 0,
            sequences: vec![seq],
            breakdowns: vec![],
            raw_rewards: vec![0.5],
            centered_rewards: vec![0.5],
        };
        let batch = build_targets(&group, &p, &r, 1.0).unwrap();
        let (_, _, first) = &batch.entries[0];
        assert!((first - (0.5 + mean)).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_at_target() {
        let p = PolicyParams::new(3, 2);
        let r = p.snapshot();
        // params = reference so Q_θ = 0 everywhere; targets of 0 give loss 0
        let batch = BellmanBatch {
            entries: vec![(PrefixState::root(0), 1, 0.0), (PrefixState::root(0).child(1), 2, 0.0)],
        };
        let (loss, grad) = bellman_loss_and_grad(&batch, &p, &r, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        for g in grad.values() {
            assert!(g.iter().all(|x| x.abs() < 1e-12));
        }
    }

    /// Central finite differences of the Bellman loss over every touched logit.
    pub(crate) fn fd_bellman_grad(
        batch: &BellmanBatch,
        params: &PolicyParams,
        reference: &PolicyParams,
        rho: f64,
        h: f64,
    ) -> HashMap<PrefixState, Vec<f64>> {
        let states: BTreeSet<PrefixState> =
            batch.entries.iter().map(|(s, _, _)| s.clone()).collect();
        let loss_of = |p: &PolicyParams| -> f64 {
            batch
                .entries
                .iter()
                .map(|(s, a, t)| {
                    let q = implicit_q(p, reference, s, *a, rho).unwrap();
                    (q - t) * (q - t)
                })
                .sum()
        };
        let mut grad = HashMap::new();
        for s in states {
            let mut g = vec![0.0; params.vocab_size()];
            for b in 0..params.vocab_size() {
                let mut plus = params.clone();
                plus.logits_mut(&s)[b] += h;
                let mut minus = params.clone();
                minus.logits_mut(&s)[b] -= h;
                g[b] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            }
            grad.insert(s, g);
        }
        grad
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let vs = rng.gen_range(2..=4);
            let h = rng.gen_range(1..=3);
            let mut p = PolicyParams::new(vs, h);
            let mut r = PolicyParams::new(vs, h);
            let seq: Vec<usize> = (0..h).map(|_| rng.gen_range(0..vs)).collect();
            for t in 0..h {
                let s = PrefixState {
                    task_id: 0,
                    prefix: seq[..t].to_vec(),
                };
                *p.logits_mut(&s) = (0..vs).map(|_| rng.gen_range(-1.0..1.0)).collect();
                *r.logits_mut(&s) = (0..vs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            }
            let group = TrajectoryGroup {
                task_id: 0,
                sequences: vec![SampledSequence {
                    task_id: 0,
                    tokens: seq,
                    log_probs: vec![],
                }],
                breakdowns: vec![],
                raw_rewards: vec![1.0],
                centered_rewards: vec![1.0],
            };
            let batch = build_targets(&group, &p, &r, 1.3).unwrap();
            let (_, grad) = bellman_loss_and_grad(&batch, &p, &r, 1.3).unwrap();
            let fd = fd_bellman_grad(&batch, &p, &r, 1.3, 1e-5);
            for (s, g) in &grad {
                for (a, (gi, fi)) in g.iter().zip(&fd[s]).enumerate() {
                    let denom = fi.abs().max(1e-8);
                    assert!(
                        (gi - fi).abs() / denom < 1e-5,
                        "state {s:?} token {a}: analytic {gi} vs fd {fi}"
                    );
                }
            }
        }
    }

    fn toy_ctx<'a>(
        vocab: &'a Vocabulary,
        gate: &'a GateConfig,
        scorer: &'a Scorer,
        targets: &'a [FragileTargetSpec],
    ) -> RolloutCtx<'a> {
        RolloutCtx {
            vocab,
            gate,
            scorer,
            targets,
            base_seed: 17,
            episodes_override: Some(1),
            workers: 1,
        }
    }

    fn toy_env() -> (Vocabulary, GateConfig, Vec<FragileTargetSpec>) {
        let vocab = Vocabulary::new(&["pick", "the", "cup", "slowly"]).unwrap();
        let gate = GateConfig {
            tau_sem: 0.3,
            ..GateConfig::default()
        };
        let spec = FragileTargetSpec {
            task_id: 0,
            canonical: "pick the cup".into(),
            beta: 0.3,
            triggers: vec![vec!["slowly".into()]],
            epsilon: 0.0,
            episodes: 1,
        };
        (vocab, gate, vec![spec])
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let (vocab, gate, targets) = toy_env();
        let scorer = Scorer::new(ScorerConfig::BuiltinTokenCosine);
        let ctx = toy_ctx(&vocab, &gate, &scorer, &targets);
        let mut cfg = DaertConfig::default();
        cfg.learning_rate = 1e-300; // effectively zero but passes validation
        let mut state = OptimizerState::new(PolicyParams::new(vocab.size(), 3));
        let before = state.params.snapshot();
        let metrics = train_step(&mut state, &cfg, &ctx).unwrap();
        let root = PrefixState::root(0);
        for t in 0..vocab.size() {
            assert!(
                (state.params.log_prob(&root, t).unwrap() - before.log_prob(&root, t).unwrap())
                    .abs()
                    < 1e-250
            );
        }
        assert_eq!(metrics.step, 0);
    }

    #[test]
    fn train_step_is_seed_deterministic() {
        let (vocab, gate, targets) = toy_env();
        let cfg = DaertConfig {
            total_steps: 5,
            ..DaertConfig::default()
        };
        let run = || {
            let scorer = Scorer::new(ScorerConfig::BuiltinTokenCosine);
            let ctx = toy_ctx(&vocab, &gate, &scorer, &targets);
            let mut state = OptimizerState::new(PolicyParams::new(vocab.size(), 3));
            (0..cfg.total_steps)
                .map(|_| train_step(&mut state, &cfg, &ctx).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (vocab, gate, targets) = toy_env();
        let cfg = DaertConfig {
            total_steps: 3,
            ..DaertConfig::default()
        };
        let run = |workers: usize| {
            let scorer = Scorer::new(ScorerConfig::BuiltinTokenCosine);
            let mut ctx = toy_ctx(&vocab, &gate, &scorer, &targets);
            ctx.workers = workers;
            let mut state = OptimizerState::new(PolicyParams::new(vocab.size(), 3));
            (0..cfg.total_steps)
                .map(|_| train_step(&mut state, &cfg, &ctx).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(4));
    }
}

//! Synthetic black-box fragile targets and brute-force oracles.
//!
//! A fragile target succeeds on instructions close to its canonical form
//! unless a hidden trigger n-gram appears, which mirrors policies that break
//! under semantically preserving rephrasings. Because the instruction space
//! is finite, ground-truth failure modes and the uniform-sampling Q fixed
//! point can be enumerated exactly.

use crate::policy::PrefixState;
use crate::reward::{compose_reward, execution_feedback, GateConfig};
use crate::semantics::{token_cosine, Scorer, ScorerConfig};
use crate::text::{detokenize, tokenize, Instruction, Vocabulary};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// A black-box target: canonical instruction, similarity band, hidden
/// trigger patterns, execution noise, and the episode count per evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FragileTargetSpec {
    pub task_id: u32,
    pub canonical: String,
    /// Similarity band β ∈ (0,1]: instructions below it always fail the task.
    pub beta: f64,
    /// Trigger n-grams as word sequences; any contiguous occurrence forces failure.
    pub triggers: Vec<Vec<String>>,
    /// Per-episode success noise ε ∈ [0, 0.5).
    #[serde(default)]
    pub epsilon: f64,
    /// Episodes per evaluation E.
    pub episodes: usize,
}

impl FragileTargetSpec {
    pub fn validate(&self, vocab: &Vocabulary) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            errs.push(format!("environment.beta must lie in (0,1], got {}", self.beta));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            errs.push(format!("environment.epsilon must lie in [0,0.5), got {}", self.epsilon));
        }
        if self.episodes == 0 {
            errs.push("environment.episodes must be positive".into());
        }
        for t in &self.triggers {
            if t.is_empty() {
                errs.push("environment trigger patterns must be non-empty".into());
            }
            for w in t {
                if vocab.lookup(&w.to_lowercase()).is_none() {
                    errs.push(format!("trigger word {w:?} absent from the vocabulary"));
                }
            }
        }
        errs
    }

    fn trigger_tokens(&self, vocab: &Vocabulary) -> Vec<Vec<usize>> {
        self.triggers
            .iter()
            .map(|t| {
                t.iter()
                    .map(|w| vocab.lookup(&w.to_lowercase()).unwrap_or(crate::text::OOV))
                    .collect()
            })
            .collect()
    }
}

/// Aggregated result of E episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
}

fn contains_subsequence(haystack: &[usize], needle: &[usize]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True iff the instruction succeeds deterministically (ε ignored): inside
/// the similarity band and free of every trigger pattern.
pub fn deterministic_success(
    spec: &FragileTargetSpec,
    instr: &Instruction,
    vocab: &Vocabulary,
) -> bool {
    if token_cosine(&spec.canonical, &instr.raw) < spec.beta {
        return false;
    }
    !spec
        .trigger_tokens(vocab)
        .iter()
        .any(|t| contains_subsequence(&instr.tokens, t))
}

/// Runs E episodes. Per episode the task succeeds iff the instruction is in
/// the similarity band, contains no trigger, and a Bernoulli(1−ε) draw passes.
pub fn evaluate(
    spec: &FragileTargetSpec,
    instr: &Instruction,
    vocab: &Vocabulary,
    seed: u64,
) -> EpisodeOutcome {
    let possible = deterministic_success(spec, instr, vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0;
    for _ in 0..spec.episodes {
        let draw: f64 = rng.gen();
        if possible && draw >= spec.epsilon {
            successes += 1;
        }
    }
    EpisodeOutcome {
        successes,
        episodes: spec.episodes,
        success_rate: successes as f64 / spec.episodes as f64,
    }
}

/// Ground-truth failure modes: for each trigger, the gate-valid in-band
/// sequences of length ≤ H that contain it. Sequences failing only the
/// similarity band form the drift pseudo-mode, excluded from coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    /// One entry per trigger pattern, in spec order.
    pub modes: Vec<BTreeSet<Vec<usize>>>,
    pub drift: BTreeSet<Vec<usize>>,
}

impl ModeSet {
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index of the first mode a token sequence belongs to, if any.
    pub fn mode_of(&self, tokens: &[usize]) -> Option<usize> {
        self.modes.iter().position(|m| m.contains(tokens))
    }
}

fn check_enumeration_limit(vocab_size: usize, horizon: usize, limit: f64) -> crate::Result<()> {
    let leaves = (vocab_size as f64).powi(horizon as i32);
    if leaves > limit {
        return Err(crate::Error::capability(format!(
            "|V|^H = {leaves} exceeds the enumeration limit {limit}"
        )));
    }
    Ok(())
}

fn for_each_sequence(
    vocab_size: usize,
    max_len: usize,
    include_shorter: bool,
    mut f: impl FnMut(&[usize]),
) {
    let mut seq: Vec<usize> = Vec::new();
    loop {
        if include_shorter || seq.len() == max_len {
            f(&seq);
        }
        // depth-first successor in the ≤ max_len sequence ordering
        if seq.len() < max_len {
            seq.push(0);
            continue;
        }
        while let Some(last) = seq.pop() {
            if last + 1 < vocab_size {
                seq.push(last + 1);
                break;
            }
        }
        if seq.is_empty() {
            return;
        }
    }
}

/// Brute-force enumeration of all length-≤H sequences into failure modes.
pub fn enumerate_modes(
    spec: &FragileTargetSpec,
    gate: &GateConfig,
    horizon: usize,
    vocab: &Vocabulary,
) -> crate::Result<ModeSet> {
    check_enumeration_limit(vocab.size(), horizon, 1e6)?;
    let triggers = spec.trigger_tokens(vocab);
    let scorer = Scorer::new(ScorerConfig::BuiltinTokenCosine);
    let canonical = tokenize(&spec.canonical, vocab);
    let mut modes: Vec<BTreeSet<Vec<usize>>> = vec![BTreeSet::new(); triggers.len()];
    let mut drift = BTreeSet::new();
    let mut err = None;
    for_each_sequence(vocab.size(), horizon, true, |seq| {
        if err.is_some() || seq.is_empty() {
            return;
        }
        let instr = Instruction {
            raw: detokenize(seq, vocab),
            tokens: seq.to_vec(),
        };
        let breakdown = match compose_reward(&instr, &canonical, gate, &scorer, || Ok(0.0)) {
            Ok(b) => b,
            Err(e) => {
                err = Some(e);
                return;
            }
        };
        if !breakdown.gates_pass() {
            return;
        }
        let in_band = token_cosine(&spec.canonical, &instr.raw) >= spec.beta;
        let hit: Vec<usize> = triggers
            .iter()
            .enumerate()
            .filter(|(_, t)| contains_subsequence(seq, t))
            .map(|(k, _)| k)
            .collect();
        if hit.is_empty() {
            if !in_band {
                drift.insert(seq.to_vec());
            }
        } else if in_band {
            for k in hit {
                modes[k].insert(seq.to_vec());
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(ModeSet { modes, drift })
}

/// Exact fixed point of the uniform-average successor recursion under
/// uniform trajectory sampling with uncentered rewards and ε = 0:
/// Q*(a|s) = Ū(s,a) + (1/|V|)·Σ_{a'} Q*(a'|s·a), zero successor sum at
/// depth H, where Ū(s,a) averages the leaf rewards below (s,a).
pub fn uniform_q_oracle(
    spec: &FragileTargetSpec,
    gate: &GateConfig,
    horizon: usize,
    vocab: &Vocabulary,
) -> crate::Result<HashMap<(PrefixState, usize), f64>> {
    check_enumeration_limit(vocab.size(), horizon, 1e5)?;
    let scorer = Scorer::new(ScorerConfig::BuiltinTokenCosine);
    let canonical = tokenize(&spec.canonical, vocab);
    let leaf_reward = |seq: &[usize]| -> crate::Result<f64> {
        let instr = Instruction {
            raw: detokenize(seq, vocab),
            tokens: seq.to_vec(),
        };
        let b = compose_reward(&instr, &canonical, gate, &scorer, || {
            let sr = if deterministic_success(spec, &instr, vocab) { 1.0 } else { 0.0 };
            Ok(execution_feedback(sr))
        })?;
        Ok(b.reward)
    };

    let mut q = HashMap::new();
    // returns (leaf reward sum, leaf count) of the subtree rooted at `prefix`
    fn descend(
        prefix: &mut Vec<usize>,
        horizon: usize,
        vocab_size: usize,
        task_id: u32,
        leaf_reward: &dyn Fn(&[usize]) -> crate::Result<f64>,
        q: &mut HashMap<(PrefixState, usize), f64>,
    ) -> crate::Result<(f64, f64)> {
        if prefix.len() == horizon {
            let r = leaf_reward(prefix)?;
            return Ok((r, 1.0));
        }
        let state = PrefixState {
            task_id,
            prefix: prefix.clone(),
        };
        let mut sum = 0.0;
        let mut count = 0.0;
        for a in 0..vocab_size {
            prefix.push(a);
            let (child_sum, child_count) =
                descend(prefix, horizon, vocab_size, task_id, leaf_reward, q)?;
            // successor Q values were filled by the recursive call
            let successor: f64 = if prefix.len() == horizon {
                0.0
            } else {
                let child_state = PrefixState {
                    task_id,
                    prefix: prefix.clone(),
                };
                (0..vocab_size)
                    .map(|a2| q[&(child_state.clone(), a2)])
                    .sum::<f64>()
                    / vocab_size as f64
            };
            prefix.pop();
            q.insert(
                (state.clone(), a),
                child_sum / child_count + successor,
            );
            sum += child_sum;
            count += child_count;
        }
        Ok((sum, count))
    }

    let mut prefix = Vec::new();
    descend(
        &mut prefix,
        horizon,
        vocab.size(),
        spec.task_id,
        &leaf_reward,
        &mut q,
    )?;
    Ok(q)
}

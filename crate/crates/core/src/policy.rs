//! Exact tabular autoregressive categorical policy over the vocabulary,
//! conditioned on a task identifier. States are materialized lazily with a
//! uniform default, so the sparse reachable prefix tree stays small while
//! log-probabilities, entropy, and gradients remain exact.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};

/// Enumeration guard for exact entropy and the oracles.
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// A prefix of a sampled sequence, together with its task conditioning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrefixState {
    pub task_id: u32,
    pub prefix: Vec<usize>,
}

impl PrefixState {
    pub fn root(task_id: u32) -> Self {
        PrefixState { task_id, prefix: Vec::new() }
    }

    pub fn child(&self, token: usize) -> Self {
        let mut prefix = self.prefix.clone();
        prefix.push(token);
        PrefixState { task_id: self.task_id, prefix }
    }
}

/// Per-prefix logits over a finite vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    horizon: usize,
    logits: HashMap<PrefixState, Vec<f64>>,
}

/// A length-H sample with its per-step log-probabilities under the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub task_id: u32,
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

impl PolicyParams {
    pub fn new(vocab_size: usize, horizon: usize) -> Self {
        assert!(vocab_size >= 2 && horizon >= 1);
        PolicyParams { vocab_size, horizon, logits: HashMap::new() }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Logit vector for a state; unvisited states read as all zeros (uniform).
    pub fn logits(&self, state: &PrefixState) -> Vec<f64> {
        self.logits
            .get(state)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.vocab_size])
    }

    /// Mutable logit vector, materializing the state on first touch.
    pub fn logits_mut(&mut self, state: &PrefixState) -> &mut Vec<f64> {
        let n = self.vocab_size;
        self.logits
            .entry(state.clone())
            .or_insert_with(|| vec![0.0; n])
    }

    pub fn probs(&self, state: &PrefixState) -> Vec<f64> {
        softmax(&self.logits(state))
    }

    /// log p(token | state) = logit(token) - log-sum-exp(logits).
    pub fn log_prob(&self, state: &PrefixState, token: usize) -> crate::Result<f64> {
        if token >= self.vocab_size {
            return Err(crate::Error::input(format!(
                "token {token} out of range for |V|={}",
                self.vocab_size
            )));
        }
        if state.prefix.len() >= self.horizon {
            return Err(crate::Error::input("prefix length must be below the horizon"));
        }
        let logits = self.logits(state);
        Ok(logits[token] - log_sum_exp(&logits))
    }

    /// Full log-probability vector for one state.
    pub fn log_probs(&self, state: &PrefixState) -> Vec<f64> {
        let logits = self.logits(state);
        let lse = log_sum_exp(&logits);
        logits.iter().map(|x| x - lse).collect()
    }

    /// Autoregressively samples H tokens; deterministic given (params, task, seed).
    pub fn sample_sequence(&self, task_id: u32, seed: u64) -> SampledSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = PrefixState::root(task_id);
        let mut tokens = Vec::with_capacity(self.horizon);
        let mut log_probs = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let lps = self.log_probs(&state);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = self.vocab_size - 1;
            for (a, lp) in lps.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    chosen = a;
                    break;
                }
            }
            tokens.push(chosen);
            log_probs.push(lps[chosen]);
            state = state.child(chosen);
        }
        SampledSequence { task_id, tokens, log_probs }
    }

    /// Deep, immutable copy; later updates to the source leave it unchanged.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    /// Exact Shannon entropy (nats) of the length-H sequence distribution for
    /// one task, computed by chain-rule recursion over the prefix tree.
    pub fn entropy(&self, task_id: u32) -> crate::Result<f64> {
        let leaves = (self.vocab_size as f64).powi(self.horizon as i32);
        if leaves > ENUMERATION_LIMIT {
            return Err(crate::Error::capability(format!(
                "|V|^H = {leaves} exceeds the enumeration limit {ENUMERATION_LIMIT}"
            )));
        }
        Ok(self.entropy_rec(&PrefixState::root(task_id), 0))
    }

    fn entropy_rec(&self, state: &PrefixState, depth: usize) -> f64 {
        if depth == self.horizon {
            return 0.0;
        }
        let lps = self.log_probs(state);
        let mut h = 0.0;
        for (a, lp) in lps.iter().enumerate() {
            let p = lp.exp();
            if p > 0.0 {
                h += p * (-lp + self.entropy_rec(&state.child(a), depth + 1));
            }
        }
        h
    }

    /// Applies one plain gradient-descent step over the touched logit vectors.
    pub fn apply_gradient(&mut self, grad: &HashMap<PrefixState, Vec<f64>>, learning_rate: f64) {
        for (state, g) in grad {
            let logits = self.logits_mut(state);
            for (l, gi) in logits.iter_mut().zip(g) {
                *l -= learning_rate * gi;
            }
        }
    }

    /// Writes the checkpoint: a header line `daert-checkpoint v1 <|V|> <H>`
    /// followed by one `task<TAB>prefix<TAB>logits` record per stored state,
    /// sorted so identical params serialize byte-identically.
    pub fn save<W: Write>(&self, w: W) -> crate::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "daert-checkpoint v1 {} {}", self.vocab_size, self.horizon)?;
        let mut states: Vec<_> = self.logits.keys().collect();
        states.sort();
        for state in states {
            let prefix = state
                .prefix
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let logits = self.logits[state]
                .iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(w, "{}\t{}\t{}", state.task_id, prefix, logits)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> crate::Result<PolicyParams> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| crate::Error::input("empty checkpoint"))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "daert-checkpoint" || parts[1] != "v1" {
            return Err(crate::Error::input(format!("bad checkpoint header: {header:?}")));
        }
        let vocab_size: usize = parts[2]
            .parse()
            .map_err(|_| crate::Error::input("bad |V| in checkpoint header"))?;
        let horizon: usize = parts[3]
            .parse()
            .map_err(|_| crate::Error::input("bad H in checkpoint header"))?;
        let mut params = PolicyParams::new(vocab_size, horizon);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(crate::Error::input(format!("bad checkpoint record: {line:?}")));
            }
            let task_id: u32 = fields[0]
                .parse()
                .map_err(|_| crate::Error::input("bad task id in checkpoint"))?;
            let prefix: Vec<usize> = if fields[1].is_empty() {
                Vec::new()
            } else {
                fields[1]
                    .split(',')
                    .map(|t| t.parse().map_err(|_| crate::Error::input("bad prefix token")))
                    .collect::<crate::Result<_>>()?
            };
            let logits: Vec<f64> = fields[2]
                .split(' ')
                .map(|x| x.parse().map_err(|_| crate::Error::input("bad logit value")))
                .collect::<crate::Result<_>>()?;
            if logits.len() != vocab_size || logits.iter().any(|x| !x.is_finite()) {
                return Err(crate::Error::input(format!("bad logit vector in record: {line:?}")));
            }
            params.logits.insert(PrefixState { task_id, prefix }, logits);
        }
        Ok(params)
    }

    /// Visited (materialized) states, for diagnostics.
    pub fn visited_states(&self) -> impl Iterator<Item = &PrefixState> {
        self.logits.keys()
    }
}

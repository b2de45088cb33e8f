//! Diversity measurement: pairwise embedding cosine distance, ground-truth
//! mode coverage against the enumerated failure modes, and a 2-D PCA export
//! for offline semantic-space plots.

use crate::env::ModeSet;
use crate::text::{Instruction, Vocabulary};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

/// Which embedding backend is active.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum EmbeddingConfig {
    /// Vocabulary token-count vectors.
    #[default]
    TokenCount,
    /// External embedder: one line of text in, one line of space-separated
    /// floats out, replies in request order.
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

struct ExternalProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Embedder handle; the token-count backend is pure.
pub struct Embedder<'a> {
    config: EmbeddingConfig,
    vocab: &'a Vocabulary,
    process: Mutex<Option<ExternalProcess>>,
}

impl<'a> Embedder<'a> {
    pub fn new(config: EmbeddingConfig, vocab: &'a Vocabulary) -> Self {
        Embedder { config, vocab, process: Mutex::new(None) }
    }

    pub fn embed(&self, instr: &Instruction) -> crate::Result<Vec<f64>> {
        match &self.config {
            EmbeddingConfig::TokenCount => Ok(instr.counts(self.vocab.size())),
            EmbeddingConfig::External { command, args } => {
                let mut guard = self.process.lock().unwrap();
                if guard.is_none() {
                    let mut child = Command::new(command)
                        .args(args)
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .spawn()
                        .map_err(|e| {
                            crate::Error::Scorer(format!("spawn embedder {command:?} failed: {e}"))
                        })?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
                    *guard = Some(ExternalProcess { child, stdin, stdout });
                }
                let proc = guard.as_mut().unwrap();
                writeln!(proc.stdin, "{}", instr.raw)
                    .map_err(|e| crate::Error::Scorer(format!("write to embedder failed: {e}")))?;
                proc.stdin
                    .flush()
                    .map_err(|e| crate::Error::Scorer(format!("flush to embedder failed: {e}")))?;
                let mut reply = String::new();
                proc.stdout
                    .read_line(&mut reply)
                    .map_err(|e| crate::Error::Scorer(format!("read from embedder failed: {e}")))?;
                let v: Vec<f64> = reply
                    .split_whitespace()
                    .map(|x| {
                        x.parse().map_err(|_| {
                            crate::Error::Scorer(format!("malformed embedder reply: {reply:?}"))
                        })
                    })
                    .collect::<crate::Result<_>>()?;
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(crate::Error::Scorer(format!(
                        "bad embedder reply: {reply:?}"
                    )));
                }
                Ok(v)
            }
        }
    }
}

/// Diversity summary serialized into the run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityReport {
    pub mean_pairwise_cosine_distance: f64,
    pub distinct_sequences: usize,
    pub mode_coverage: Option<f64>,
    pub entropy: Option<f64>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        // all-zero pairs contribute distance 1 by convention
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean over all unordered pairs of (1 − cosine similarity) of embeddings.
pub fn pairwise_cosine_distance(
    instructions: &[Instruction],
    embedder: &Embedder,
) -> crate::Result<f64> {
    if instructions.len() < 2 {
        return Err(crate::Error::input("pairwise distance needs at least 2 instructions"));
    }
    let embeddings: Vec<Vec<f64>> = instructions
        .iter()
        .map(|i| embedder.embed(i))
        .collect::<crate::Result<_>>()?;
    let n = embeddings.len();
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += cosine_distance(&embeddings[i], &embeddings[j]);
            pairs += 1.0;
        }
    }
    Ok(sum / pairs)
}

/// Fraction of oracle modes hit by at least one instruction; `None` for an
/// empty mode set (coverage undefined).
pub fn mode_coverage(instructions: &[Instruction], modes: &ModeSet) -> Option<f64> {
    if modes.is_empty() {
        return None;
    }
    let hit = modes
        .modes
        .iter()
        .filter(|m| instructions.iter().any(|i| m.contains(&i.tokens)))
        .count();
    Some(hit as f64 / modes.modes.len() as f64)
}

/// Count of distinct token sequences.
pub fn distinct_count(instructions: &[Instruction]) -> usize {
    instructions
        .iter()
        .map(|i| &i.tokens)
        .collect::<BTreeSet<_>>()
        .len()
}

const POWER_ITERATION_TOL: f64 = 1e-9;
const POWER_ITERATION_MAX: usize = 100_000;

fn power_iteration(cov: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = cov.len();
    // deterministic non-degenerate init
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64) * 0.618).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..POWER_ITERATION_MAX {
        let mut next: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| cov[i][j] * v[j]).sum())
            .collect();
        let norm = next.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return (0.0, vec![0.0; d]);
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs().min((a + b).abs()))
            .fold(0.0, f64::max);
        v = next;
        if delta < POWER_ITERATION_TOL {
            break;
        }
    }
    let lambda: f64 = (0..d)
        .map(|i| v[i] * (0..d).map(|j| cov[i][j] * v[j]).sum::<f64>())
        .sum();
    (lambda, v)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-2 PCA of mean-centered embeddings via power iteration with deflation.
/// Component sign is fixed by making the largest-magnitude loading positive.
/// Rank-0 data projects every point to the origin.
pub fn pca_of_embeddings(embeddings: &[Vec<f64>]) -> crate::Result<Vec<(f64, f64)>> {
    if embeddings.len() < 3 {
        return Err(crate::Error::input("PCA needs at least 3 points"));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(crate::Error::input("embeddings must share one dimension"));
    }
    let n = embeddings.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| embeddings.iter().map(|e| e[j]).sum::<f64>() / n)
        .collect();
    let centered: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for row in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += row[i] * row[j] / n;
            }
        }
    }
    let (l1, mut v1) = power_iteration(&cov);
    if l1 <= POWER_ITERATION_TOL {
        return Ok(vec![(0.0, 0.0); embeddings.len()]);
    }
    fix_sign(&mut v1);
    // deflate and repeat
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    let (l2, mut v2) = power_iteration(&deflated);
    if l2 > POWER_ITERATION_TOL {
        fix_sign(&mut v2);
    } else {
        v2 = vec![0.0; d];
    }
    Ok(centered
        .iter()
        .map(|row| {
            let x: f64 = row.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&v2).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect())
}

/// PCA of instruction embeddings.
pub fn pca_project(
    instructions: &[Instruction],
    embedder: &Embedder,
) -> crate::Result<Vec<(f64, f64)>> {
    let embeddings: Vec<Vec<f64>> = instructions
        .iter()
        .map(|i| embedder.embed(i))
        .collect::<crate::Result<_>>()?;
    pca_of_embeddings(&embeddings)
}

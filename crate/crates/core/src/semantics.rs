//! Semantic-fidelity scoring φ(l_task, l_attack) ∈ [0,1]: a deterministic
//! token-count cosine proxy plus a line-protocol seam for plugging an
//! external learned scorer.

use crate::text::Instruction;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// A similarity in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> crate::Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(crate::Error::input(format!("similarity {value} outside [0,1]")));
        }
        Ok(SimilarityScore(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Which scorer backend is active.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum ScorerConfig {
    #[default]
    BuiltinTokenCosine,
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

/// Scorer handle. The builtin backend is pure; the external backend owns one
/// subprocess with one in-flight request at a time, and results are cached by
/// (task raw, attack raw) pair per run.
pub struct Scorer {
    config: ScorerConfig,
    calls: AtomicU64,
    cache: Mutex<HashMap<(String, String), f64>>,
    process: Mutex<Option<ExternalProcess>>,
}

/// Cosine similarity of whitespace word-count vectors, 0 if either is empty.
/// Lowercased and order-invariant; lies in [0,1] since counts are non-negative.
pub fn token_cosine(a: &str, b: &str) -> f64 {
    let count = |s: &str| {
        let mut m: HashMap<String, f64> = HashMap::new();
        for w in s.split_whitespace() {
            *m.entry(w.to_lowercase()).or_insert(0.0) += 1.0;
        }
        m
    };
    let ca = count(a);
    let cb = count(b);
    let dot: f64 = ca
        .iter()
        .filter_map(|(w, x)| cb.get(w).map(|y| x * y))
        .sum();
    let na: f64 = ca.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

impl Scorer {
    pub fn new(config: ScorerConfig) -> Self {
        Scorer {
            config,
            calls: AtomicU64::new(0),
            cache: Mutex::new(HashMap::new()),
            process: Mutex::new(None),
        }
    }

    /// Number of score requests served so far (cache hits included).
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// φ(task, attack).
    pub fn score(&self, task: &Instruction, attack: &Instruction) -> crate::Result<SimilarityScore> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.config {
            ScorerConfig::BuiltinTokenCosine => {
                SimilarityScore::new(token_cosine(&task.raw, &attack.raw))
            }
            ScorerConfig::External { command, args } => {
                let key = (task.raw.clone(), attack.raw.clone());
                if let Some(&v) = self.cache.lock().unwrap().get(&key) {
                    return SimilarityScore::new(v);
                }
                let v = self.external_score(command, args, &task.raw, &attack.raw)?;
                self.cache.lock().unwrap().insert(key, v);
                SimilarityScore::new(v)
            }
        }
    }

    fn external_score(
        &self,
        command: &str,
        args: &[String],
        task: &str,
        attack: &str,
    ) -> crate::Result<f64> {
        let mut guard = self.process.lock().unwrap();
        if guard.is_none() {
            let mut child = Command::new(command)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| crate::Error::Scorer(format!("spawn {command:?} failed: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
            *guard = Some(ExternalProcess { child, stdin, stdout });
        }
        let proc = guard.as_mut().unwrap();
        writeln!(proc.stdin, "{task}\t{attack}")
            .map_err(|e| crate::Error::Scorer(format!("write to scorer failed: {e}")))?;
        proc.stdin
            .flush()
            .map_err(|e| crate::Error::Scorer(format!("flush to scorer failed: {e}")))?;
        let mut reply = String::new();
        proc.stdout
            .read_line(&mut reply)
            .map_err(|e| crate::Error::Scorer(format!("read from scorer failed: {e}")))?;
        let trimmed = reply.trim();
        let v: f64 = trimmed
            .parse()
            .map_err(|_| crate::Error::Scorer(format!("malformed scorer reply: {reply:?}")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(crate::Error::Scorer(format!("scorer reply {trimmed} outside [0,1]")));
        }
        Ok(v)
    }
}

/// Hard retention threshold: true iff φ ≥ τ_sem (boundary inclusive).
pub fn passes_retention(score: SimilarityScore, tau_sem: f64) -> bool {
    score.value() >= tau_sem
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokenize, Vocabulary};

    fn vocab() -> Vocabulary {
        Vocabulary::new(&["pick", "the", "cup", "red", "drop"]).unwrap()
    }

    fn scorer() -> Scorer {
        Scorer::new(ScorerConfig::BuiltinTokenCosine)
    }

    #[test]
    fn identical_instructions_score_one() {
        let v = vocab();
        let i = tokenize("pick the cup", &v);
        let s = scorer().score(&i, &i).unwrap();
        assert!((s.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_tokens_score_zero() {
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        let b = tokenize("drop red", &v);
        assert_eq!(scorer().score(&a, &b).unwrap().value(), 0.0);
    }

    #[test]
    fn hand_evaluated_count_cosine() {
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        let b = tokenize("pick the red cup", &v);
        let s = scorer().score(&a, &b).unwrap();
        assert!((s.value() - 3.0 / 12.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn builtin_is_symmetric_and_order_invariant() {
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        let b = tokenize("cup the pick red", &v);
        let sc = scorer();
        assert_eq!(sc.score(&a, &b).unwrap().value(), sc.score(&b, &a).unwrap().value());
        let shuffled = tokenize("red pick cup the", &v);
        assert_eq!(sc.score(&a, &b).unwrap().value(), sc.score(&a, &shuffled).unwrap().value());
    }

    #[test]
    fn empty_scores_zero() {
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        let e = tokenize("", &v);
        assert_eq!(scorer().score(&a, &e).unwrap().value(), 0.0);
    }

    #[test]
    fn retention_boundary_inclusive() {
        assert!(passes_retention(SimilarityScore::new(0.6).unwrap(), 0.6));
        assert!(!passes_retention(SimilarityScore::new(0.59).unwrap(), 0.6));
        assert!(passes_retention(SimilarityScore::new(1.0).unwrap(), 0.99));
    }

    #[test]
    fn call_counter_increments() {
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        let sc = scorer();
        assert_eq!(sc.call_count(), 0);
        sc.score(&a, &a).unwrap();
        sc.score(&a, &a).unwrap();
        assert_eq!(sc.call_count(), 2);
    }

    #[test]
    fn external_backend_line_protocol() {
        // Replies with the builtin cosine computed in python, one line per request.
        let code = "import sys\nfor line in sys.stdin:\n task,attack=line.rstrip('\\n').split('\\t')\n print(1.0 if task==attack else 0.25)\n sys.stdout.flush()\n";
        let sc = Scorer::new(ScorerConfig::External {
            command: "python3".into(),
            args: vec!["-c".into(), code.into()],
        });
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        let b = tokenize("drop red", &v);
        assert_eq!(sc.score(&a, &a).unwrap().value(), 1.0);
        assert_eq!(sc.score(&a, &b).unwrap().value(), 0.25);
        // cached
        assert_eq!(sc.score(&a, &b).unwrap().value(), 0.25);
    }

    #[test]
    fn external_malformed_reply_is_scorer_error() {
        let sc = Scorer::new(ScorerConfig::External {
            command: "python3".into(),
            args: vec![
                "-c".into(),
                "import sys\nfor line in sys.stdin:\n print('nonsense')\n sys.stdout.flush()\n".into(),
            ],
        });
        let v = vocab();
        let a = tokenize("pick the cup", &v);
        match sc.score(&a, &a) {
            Err(crate::Error::Scorer(msg)) => assert!(msg.contains("nonsense")),
            other => panic!("expected scorer error, got {other:?}"),
        }
    }
}

//! Tokenization, instruction representation, and the structural-validity
//! predicate shared by the reward gates and the environments.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Reserved index for words absent from the vocabulary.
pub const OOV: usize = usize::MAX;

/// Ordered set of distinct lowercase word strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary, lowercasing the input words.
    pub fn new(words: &[&str]) -> crate::Result<Self> {
        let tokens: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        if tokens.len() < 2 {
            return Err(crate::Error::input("vocabulary needs at least 2 tokens"));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(crate::Error::input("empty vocabulary token"));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(crate::Error::input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A tokenized instruction plus its raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub raw: String,
    pub tokens: Vec<usize>,
}

impl Instruction {
    /// Word count |l|.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Per-vocabulary-index token counts (OOV tokens are dropped).
    pub fn counts(&self, vocab_size: usize) -> Vec<f64> {
        let mut c = vec![0.0; vocab_size];
        for &t in &self.tokens {
            if t != OOV {
                c[t] += 1.0;
            }
        }
        c
    }
}

/// Splits on whitespace, lowercases, maps each word to its vocabulary index.
/// Words absent from the vocabulary map to the reserved [`OOV`] index.
pub fn tokenize(raw: &str, vocab: &Vocabulary) -> Instruction {
    let tokens = raw
        .split_whitespace()
        .map(|w| vocab.lookup(&w.to_lowercase()).unwrap_or(OOV))
        .collect();
    Instruction {
        raw: raw.to_string(),
        tokens,
    }
}

/// Joins token words with single spaces. OOV tokens render as `<oov>`.
pub fn detokenize(tokens: &[usize], vocab: &Vocabulary) -> String {
    tokens
        .iter()
        .map(|&t| if t == OOV { "<oov>" } else { vocab.word(t) })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Structural-validity rules checked in a fixed order: forbidden substrings,
/// then meta-prefixes (case-insensitive), then the allowed character set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuralRules {
    pub forbidden_substrings: Vec<String>,
    pub meta_prefixes: Vec<String>,
    /// Extra characters allowed beyond ASCII letters, digits, and space.
    pub allowed_punctuation: Vec<char>,
}

impl Default for StructuralRules {
    fn default() -> Self {
        StructuralRules {
            forbidden_substrings: vec!["\n".into(), "\r".into(), "\t".into()],
            meta_prefixes: vec![
                "rewrite:".into(),
                "here is".into(),
                "instruction:".into(),
                "sure,".into(),
            ],
            allowed_punctuation: vec!['.', ',', '\'', '-'],
        }
    }
}

impl StructuralRules {
    fn char_allowed(&self, c: char) -> bool {
        c.is_ascii_alphanumeric() || c == ' ' || self.allowed_punctuation.contains(&c)
    }
}

/// True iff the raw text breaks any structural rule.
pub fn structural_violation(instr: &Instruction, rules: &StructuralRules) -> bool {
    for sub in &rules.forbidden_substrings {
        if !sub.is_empty() && instr.raw.contains(sub.as_str()) {
            return true;
        }
    }
    let lower = instr.raw.to_lowercase();
    for prefix in &rules.meta_prefixes {
        if lower.starts_with(&prefix.to_lowercase()) {
            return true;
        }
    }
    instr.raw.chars().any(|c| !rules.char_allowed(c))
}

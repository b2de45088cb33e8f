//! Cascaded multi-gate reward: structural, semantic, and length gates
//! composed with execution feedback. Gates short-circuit in the fixed order
//! struct → sem → len, so the scorer runs only for structurally valid
//! candidates and the environment only for fully gate-valid ones.

use crate::semantics::{passes_retention, Scorer, SimilarityScore};
use crate::text::{structural_violation, Instruction, StructuralRules};
use serde::{Deserialize, Serialize};

/// Gate constants and rule references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateConfig {
    /// Fixed structural penalty, negative.
    pub r_struct: f64,
    /// Semantic retention threshold in (0,1).
    pub tau_sem: f64,
    /// Length penalty slope, positive.
    pub eta: f64,
    /// Word-count limit.
    pub l_max: usize,
    #[serde(default)]
    pub rules: StructuralRules,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            r_struct: -0.2,
            tau_sem: 0.6,
            eta: 1.0,
            l_max: 50,
            rules: StructuralRules::default(),
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.r_struct >= 0.0 {
            errs.push(format!("gates.r_struct must be negative, got {}", self.r_struct));
        }
        if !(self.tau_sem > 0.0 && self.tau_sem < 1.0) {
            errs.push(format!("gates.tau_sem must lie in (0,1), got {}", self.tau_sem));
        }
        if self.eta <= 0.0 {
            errs.push(format!("gates.eta must be positive, got {}", self.eta));
        }
        if self.l_max < 1 {
            errs.push("gates.l_max must be at least 1".into());
        }
        errs
    }
}

/// Gate indicators, per-gate penalties, feedback, and the final scalar R.
/// Exactly one branch contributes: struct penalty, semantic penalty, length
/// penalty, or execution feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub i_struct: bool,
    pub i_sem: bool,
    pub i_len: bool,
    pub r_sem: f64,
    pub r_len: f64,
    /// Similarity φ; absent when the structural gate already failed.
    pub phi: Option<f64>,
    /// Execution feedback f ∈ [0,1]; absent for gate-failing instructions.
    pub feedback: Option<f64>,
    pub reward: f64,
}

impl RewardBreakdown {
    pub fn gates_pass(&self) -> bool {
        !self.i_struct && !self.i_sem && !self.i_len
    }
}

/// r_sem = −max(0, τ_sem − φ); zero iff φ ≥ τ_sem.
pub fn semantic_penalty(phi: SimilarityScore, tau_sem: f64) -> f64 {
    -(tau_sem - phi.value()).max(0.0)
}

/// r_len = 0 if length ≤ L_max, else −η·(length/L_max − 1).
pub fn length_penalty(length: usize, l_max: usize, eta: f64) -> f64 {
    if length <= l_max {
        0.0
    } else {
        -eta * (length as f64 / l_max as f64 - 1.0)
    }
}

/// f = 1 − success_rate: 1 means the attack succeeded (the target failed).
pub fn execution_feedback(success_rate: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&success_rate));
    1.0 - success_rate
}

/// Evaluates the cascade for one candidate. `feedback` is invoked only when
/// all three gates pass; callers hand in the environment query as a closure
/// so gate-failing instructions never touch the simulator.
pub fn compose_reward<F>(
    instr: &Instruction,
    task: &Instruction,
    cfg: &GateConfig,
    scorer: &Scorer,
    feedback: F,
) -> crate::Result<RewardBreakdown>
where
    F: FnOnce() -> crate::Result<f64>,
{
    if structural_violation(instr, &cfg.rules) {
        return Ok(RewardBreakdown {
            i_struct: true,
            i_sem: false,
            i_len: false,
            r_sem: 0.0,
            r_len: 0.0,
            phi: None,
            feedback: None,
            reward: cfg.r_struct,
        });
    }
    let phi = scorer.score(task, instr)?;
    if !passes_retention(phi, cfg.tau_sem) {
        let r_sem = semantic_penalty(phi, cfg.tau_sem);
        return Ok(RewardBreakdown {
            i_struct: false,
            i_sem: true,
            i_len: false,
            r_sem,
            r_len: 0.0,
            phi: Some(phi.value()),
            feedback: None,
            reward: r_sem,
        });
    }
    if instr.len() > cfg.l_max {
        let r_len = length_penalty(instr.len(), cfg.l_max, cfg.eta);
        return Ok(RewardBreakdown {
            i_struct: false,
            i_sem: false,
            i_len: true,
            r_sem: 0.0,
            r_len,
            phi: Some(phi.value()),
            feedback: None,
            reward: r_len,
        });
    }
    let f = feedback()?;
    Ok(RewardBreakdown {
        i_struct: false,
        i_sem: false,
        i_len: false,
        r_sem: 0.0,
        r_len: 0.0,
        phi: Some(phi.value()),
        feedback: Some(f),
        reward: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{Scorer, ScorerConfig, SimilarityScore};
    use crate::text::{tokenize, Vocabulary};

    fn vocab() -> Vocabulary {
        Vocabulary::new(&["pick", "the", "cup", "red", "drop", "box"]).unwrap()
    }

    fn scorer() -> Scorer {
        Scorer::new(ScorerConfig::BuiltinTokenCosine)
    }

    #[test]
    fn semantic_penalty_values() {
        let tau = 0.6;
        let s = |v| SimilarityScore::new(v).unwrap();
        assert!((semantic_penalty(s(0.4), tau) + 0.2).abs() < 1e-12);
        assert_eq!(semantic_penalty(s(0.6), tau), 0.0);
        assert!((semantic_penalty(s(0.0), tau) + 0.6).abs() < 1e-12);
    }

    #[test]
    fn length_penalty_values() {
        assert_eq!(length_penalty(50, 50, 1.0), 0.0);
        assert!((length_penalty(75, 50, 1.0) + 0.5).abs() < 1e-12);
        assert_eq!(length_penalty(0, 50, 1.0), 0.0);
    }

    #[test]
    fn execution_feedback_complement() {
        assert_eq!(execution_feedback(1.0), 0.0);
        assert_eq!(execution_feedback(0.0), 1.0);
        assert!((execution_feedback(0.4) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn struct_violation_short_circuits() {
        let v = vocab();
        let cfg = GateConfig::default();
        let sc = scorer();
        let task = tokenize("pick the cup", &v);
        let bad = tokenize("pick\nthe cup", &v);
        let env_calls = std::cell::Cell::new(0);
        let b = compose_reward(&bad, &task, &cfg, &sc, || {
            env_calls.set(env_calls.get() + 1);
            Ok(0.0)
        })
        .unwrap();
        assert!(b.i_struct);
        assert_eq!(b.reward, -0.2);
        assert_eq!(b.phi, None);
        assert_eq!(b.feedback, None);
        // cascade economy: neither the scorer nor the environment ran
        assert_eq!(sc.call_count(), 0);
        assert_eq!(env_calls.get(), 0);
    }

    #[test]
    fn all_gates_pass_feedback_one() {
        let v = vocab();
        let cfg = GateConfig::default();
        let task = tokenize("pick the cup", &v);
        let b = compose_reward(&task.clone(), &task, &cfg, &scorer(), || Ok(1.0)).unwrap();
        assert!(b.gates_pass());
        assert_eq!(b.reward, 1.0);
        assert_eq!(b.feedback, Some(1.0));
    }

    #[test]
    fn semantic_gate_short_circuits_length() {
        let v = vocab();
        let mut cfg = GateConfig::default();
        cfg.l_max = 1; // would trip the length gate if it were consulted
        let task = tokenize("pick the cup", &v);
        let drift = tokenize("drop red box", &v); // φ = 0
        let env_calls = std::cell::Cell::new(0);
        let b = compose_reward(&drift, &task, &cfg, &scorer(), || {
            env_calls.set(env_calls.get() + 1);
            Ok(0.0)
        })
        .unwrap();
        assert!(b.i_sem);
        assert!(!b.i_len);
        assert!((b.reward + 0.6).abs() < 1e-12);
        assert_eq!(env_calls.get(), 0);
    }

    #[test]
    fn length_gate_penalty() {
        let v = vocab();
        let mut cfg = GateConfig::default();
        cfg.l_max = 2;
        let task = tokenize("pick the cup", &v);
        // identical text passes the semantic gate but is 3 > 2 words long
        let b = compose_reward(&task.clone(), &task, &cfg, &scorer(), || Ok(0.0)).unwrap();
        assert!(b.i_len);
        assert!((b.reward + (3.0 / 2.0 - 1.0)).abs() < 1e-12);
        assert_eq!(b.feedback, None);
    }

    #[test]
    fn reward_monotone_in_success_rate() {
        let v = vocab();
        let cfg = GateConfig::default();
        let task = tokenize("pick the cup", &v);
        let mut last = f64::INFINITY;
        for sr in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let b = compose_reward(&task.clone(), &task, &cfg, &scorer(), || {
                Ok(execution_feedback(sr))
            })
            .unwrap();
            assert!(b.reward <= last);
            last = b.reward;
        }
    }

    #[test]
    fn config_validation_lists_every_violation() {
        let cfg = GateConfig {
            r_struct: 0.1,
            tau_sem: 1.5,
            eta: 0.0,
            l_max: 0,
            rules: Default::default(),
        };
        assert_eq!(cfg.validate().len(), 4);
        assert!(GateConfig::default().validate().is_empty());
    }
}

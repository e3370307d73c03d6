//! Scheme evaluation: model metrics, the simulated compression environment
//! and the client for external evaluator processes.

pub mod external;
mod sim;

use serde::{Deserialize, Serialize};

use crate::catalog::{Scheme, StrategyIdx};
use crate::error::{Error, Result};

pub use sim::{simulate_step, token_value, SimulatedEvaluator};

/// Size, cost and quality of a (possibly compressed) model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: f64,
    pub flops: f64,
    pub accuracy: f64,
    /// Sum of fine-tune multipliers spent by the strategies applied so far.
    #[serde(default)]
    pub consumed_finetune: f64,
}

impl ModelState {
    pub fn new(params: f64, flops: f64, accuracy: f64) -> Self {
        ModelState { params, flops, accuracy, consumed_finetune: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.params.is_finite()
            && self.flops.is_finite()
            && self.params > 0.0
            && self.flops > 0.0
            && (0.0..=1.0).contains(&self.accuracy)
            && self.consumed_finetune >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("model state violates invariants: {self:?}")))
        }
    }
}

/// Reduction rates of parameters and FLOPs, and accuracy increase rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub pr: f64,
    pub fr: f64,
    pub ar: f64,
}

/// `PR = (P(M) - P(S[M])) / P(M)`, `FR` likewise, `AR = (A(S[M]) - A(M)) / A(M)`.
pub fn compute_metrics(before: &ModelState, after: &ModelState) -> MetricsDelta {
    MetricsDelta {
        pr: (before.params - after.params) / before.params,
        fr: (before.flops - after.flops) / before.flops,
        ar: (after.accuracy - before.accuracy) / before.accuracy,
    }
}

/// Settings of the simulated environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub seed: u64,
    pub base_state: ModelState,
    /// Resolves `*n` epoch tokens for backends that train for real.
    pub pretrain_epochs: u32,
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain_epochs < 1 {
            return Err(Error::Config("pretrain_epochs must be at least 1".into()));
        }
        self.base_state.validate()
    }
}

/// Anything that can apply a compression scheme to the base model.
///
/// Implementations must be side-effect free: the same scheme always yields
/// the same state, so evaluations may run concurrently.
pub trait Evaluator: Sync {
    fn base_state(&self) -> ModelState;

    fn evaluate(&self, scheme: &Scheme) -> Result<ModelState>;

    /// State of `prefix -> next`, given the already known state of `prefix`.
    fn extend(&self, prefix: &Scheme, prefix_state: &ModelState, next: StrategyIdx) -> Result<ModelState> {
        let _ = prefix_state;
        self.evaluate(&prefix.child(next))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub state: ModelState,
    pub delta: MetricsDelta,
}

/// Applies `scheme` to the evaluator's base model and measures it against that base.
pub fn evaluate_scheme<E: Evaluator + ?Sized>(scheme: &Scheme, evaluator: &E) -> Result<Evaluation> {
    let base = evaluator.base_state();
    let state = if scheme.is_start() { base } else { evaluator.evaluate(scheme)? };
    Ok(Evaluation { state, delta: compute_metrics(&base, &state) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_deltas() {
        let m = ModelState::new(900_000.0, 2.7e8, 0.9104);
        assert_eq!(compute_metrics(&m, &m), MetricsDelta { pr: 0.0, fr: 0.0, ar: 0.0 });
    }

    #[test]
    fn simple_reduction() {
        let before = ModelState::new(100.0, 10.0, 0.5);
        let after = ModelState::new(61.0, 10.0, 0.5);
        assert_eq!(compute_metrics(&before, &after).pr, 0.39);
    }

    #[test]
    fn resnet56_legr_row() {
        let before = ModelState::new(0.90e6, 0.27e9, 0.9104);
        let after = ModelState::new(0.54e6, 0.20e9, 0.9069);
        let d = compute_metrics(&before, &after);
        assert!((d.pr - 0.400).abs() < 0.001);
        assert!((d.ar + 0.0038).abs() < 0.001);
    }

    #[test]
    fn state_validation() {
        assert!(ModelState::new(1.0, 1.0, 1.0).validate().is_ok());
        assert!(ModelState::new(1.0, 1.0, 1.7).validate().is_err());
        assert!(ModelState::new(0.0, 1.0, 0.5).validate().is_err());
        assert!(ModelState::new(1.0, f64::NAN, 0.5).validate().is_err());
    }
}

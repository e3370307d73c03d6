//! Deterministic simulated compression environment.
//!
//! Each strategy removes a fraction `gamma` (its HP2 ratio) of the current
//! parameters, damages accuracy by a strategy-specific amount and recovers
//! part of it through fine-tuning with diminishing returns. The two
//! strategy-specific uniforms come from
//! `splitmix64(seed ^ fnv1a64(canonical_id) [^ GOLDEN_GAMMA])`, so any
//! implementation can reproduce the numbers exactly.

use crate::catalog::{Catalog, HpId, Scheme, Strategy, StrategyIdx};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, splitmix64, unit_float, GOLDEN_GAMMA};

use super::{Evaluator, EvaluatorConfig, ModelState};

/// Numeric value of a multiplier (`*0.3`) or ratio (`x0.20`) token.
pub fn token_value(token: &str) -> Option<f64> {
    token
        .strip_prefix('*')
        .or_else(|| token.strip_prefix('x'))
        .unwrap_or(token)
        .parse()
        .ok()
}

pub fn simulate_step(state: &ModelState, strategy: &Strategy, cfg: &EvaluatorConfig) -> Result<ModelState> {
    let gamma = strategy
        .token(HpId(2))
        .and_then(token_value)
        .ok_or_else(|| Error::Internal(format!("strategy {} has no parameter-reduction ratio", strategy)))?;
    let ft = strategy
        .token(HpId(1))
        .or_else(|| strategy.token(HpId(9)))
        .and_then(token_value)
        .unwrap_or(0.0);

    let id_hash = fnv1a64(strategy.canonical_id.as_bytes());
    let u = unit_float(splitmix64(cfg.seed ^ id_hash));
    let u2 = unit_float(splitmix64(cfg.seed ^ id_hash ^ GOLDEN_GAMMA));

    let params = state.params * (1.0 - gamma);
    let flops = state.flops * (1.0 - gamma * (0.8 + 0.4 * u2).clamp(0.0, 1.0));
    let damage = gamma * (0.08 + 0.12 * u);
    let recovery = (0.04 * ft / (1.0 + state.consumed_finetune)).min(0.9 * damage);
    let accuracy = (state.accuracy * (1.0 - damage + recovery)).clamp(0.0, 1.0);

    Ok(ModelState {
        params,
        flops,
        accuracy,
        consumed_finetune: state.consumed_finetune + ft,
    })
}

/// In-process evaluator backed by [`simulate_step`].
#[derive(Debug, Clone)]
pub struct SimulatedEvaluator<'a> {
    catalog: &'a Catalog,
    cfg: EvaluatorConfig,
}

impl<'a> SimulatedEvaluator<'a> {
    pub fn new(catalog: &'a Catalog, cfg: EvaluatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SimulatedEvaluator { catalog, cfg })
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.cfg
    }

    pub fn step(&self, state: &ModelState, next: StrategyIdx) -> Result<ModelState> {
        simulate_step(state, self.catalog.strategy(next), &self.cfg)
    }
}

impl Evaluator for SimulatedEvaluator<'_> {
    fn base_state(&self) -> ModelState {
        self.cfg.base_state
    }

    fn evaluate(&self, scheme: &Scheme) -> Result<ModelState> {
        scheme.steps().iter().enumerate().try_fold(self.cfg.base_state, |state, (i, &s)| {
            self.step(&state, s).map_err(|e| Error::Evaluation { step: i, message: e.to_string() })
        })
    }

    fn extend(&self, _prefix: &Scheme, prefix_state: &ModelState, next: StrategyIdx) -> Result<ModelState> {
        self.step(prefix_state, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{compute_metrics, evaluate_scheme};

    fn cfg(seed: u64, params: f64) -> EvaluatorConfig {
        EvaluatorConfig { seed, base_state: ModelState::new(params, 2.7e8, 0.9104), pretrain_epochs: 200 }
    }

    #[test]
    fn token_values() {
        assert_eq!(token_value("x0.20"), Some(0.20));
        assert_eq!(token_value("*0.3"), Some(0.3));
        assert_eq!(token_value("0.9"), Some(0.9));
        assert_eq!(token_value("l2_bn"), None);
    }

    #[test]
    fn parameter_rule_is_multiplicative() {
        let catalog = Catalog::full();
        let s = catalog.strategy(catalog.lookup("C4|HP2=x0.04|HP9=*0.1|HP10=1").unwrap());
        let c = cfg(1, 1000.0);
        let next = simulate_step(&c.base_state, s, &c).unwrap();
        assert_eq!(next.params, 960.0);
        assert_eq!(next.consumed_finetune, 0.1);
    }

    #[test]
    fn deterministic() {
        let catalog = Catalog::full();
        let s = &catalog.strategies()[77];
        let c = cfg(5, 9e5);
        assert_eq!(simulate_step(&c.base_state, s, &c).unwrap(), simulate_step(&c.base_state, s, &c).unwrap());
    }

    #[test]
    fn two_twenty_percent_steps() {
        let catalog = Catalog::full();
        let a = catalog.lookup("C3|HP1=*0.3|HP2=x0.20|HP6=0.9").unwrap();
        let b = catalog.lookup("C3|HP1=*0.1|HP2=x0.20|HP6=0.7").unwrap();
        let sim = SimulatedEvaluator::new(&catalog, cfg(3, 9e5)).unwrap();
        let eval = evaluate_scheme(&Scheme::from_steps(vec![a, b]), &sim).unwrap();
        assert!((eval.delta.pr - 0.36).abs() < 1e-12);
        assert_eq!(eval.delta, compute_metrics(&sim.base_state(), &eval.state));
    }

    #[test]
    fn empty_scheme_is_identity() {
        let catalog = Catalog::full();
        let sim = SimulatedEvaluator::new(&catalog, cfg(3, 9e5)).unwrap();
        let eval = evaluate_scheme(&Scheme::start(), &sim).unwrap();
        assert_eq!(eval.state, sim.base_state());
        assert_eq!(eval.delta, Default::default());
    }

    #[test]
    fn extend_agrees_with_fold() {
        let catalog = Catalog::full();
        let sim = SimulatedEvaluator::new(&catalog, cfg(8, 9e5)).unwrap();
        let prefix = Scheme::from_steps(vec![StrategyIdx(10), StrategyIdx(4000)]);
        let ps = sim.evaluate(&prefix).unwrap();
        let next = StrategyIdx(123);
        assert_eq!(sim.extend(&prefix, &ps, next).unwrap(), sim.evaluate(&prefix.child(next)).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        let catalog = Catalog::full();
        let mut c = cfg(1, 9e5);
        c.pretrain_epochs = 0;
        assert!(SimulatedEvaluator::new(&catalog, c).is_err());
    }
}

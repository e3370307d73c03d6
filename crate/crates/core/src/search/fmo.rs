//! Step-outcome predictor.
//!
//! Given an evaluated prefix scheme and a candidate next strategy, predicts the
//! accuracy-increase rate and parameter-reduction rate of the appended step,
//! both relative to the prefix's model state. The prefix is summarised by an
//! exponentially decayed mean of its strategy embeddings.

use rand::Rng;

use crate::embedding::nn::{Adam, TwoHeadRegressor};
use crate::embedding::StrategyEmbeddings;
use crate::error::{Error, Result};
use crate::evaluation::ModelState;

pub const HIDDEN: [usize; 2] = [64, 32];
/// params / P(M), flops / F(M), accuracy, depth / L.
pub const STATE_FEATURES: usize = 4;

/// Measured effect of appending one strategy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepOutcome {
    pub ar_step: f64,
    pub pr_step: f64,
}

impl StepOutcome {
    pub fn between(prefix: &ModelState, next: &ModelState) -> Self {
        let ar_step = if prefix.accuracy > 0.0 { (next.accuracy - prefix.accuracy) / prefix.accuracy } else { 0.0 };
        StepOutcome { ar_step, pr_step: (prefix.params - next.params) / prefix.params }
    }
}

pub fn state_features(state: &ModelState, base: &ModelState, depth: usize, max_len: usize) -> [f64; STATE_FEATURES] {
    [
        state.params / base.params,
        state.flops / base.flops,
        state.accuracy,
        depth as f64 / max_len.max(1) as f64,
    ]
}

/// `sum_i lambda^(t-i) e_i / sum_i lambda^(t-i)`; zeros for an empty prefix.
pub fn aggregate_prefix(prefix: &[&[f64]], lambda: f64, dim: usize) -> Vec<f64> {
    let mut h = vec![0.0; dim];
    let mut norm = 0.0;
    let mut w = 1.0;
    for e in prefix.iter().rev() {
        for (a, b) in h.iter_mut().zip(e.iter()) {
            *a += w * b;
        }
        norm += w;
        w *= lambda;
    }
    if norm > 0.0 {
        for a in &mut h {
            *a /= norm;
        }
    }
    h
}

/// One training example with its input already assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub input: Vec<f64>,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fmo {
    pub lambda: f64,
    pub regressor: TwoHeadRegressor,
    dim: usize,
}

impl Fmo {
    fn sizes(dim: usize) -> [usize; 4] {
        [2 * dim + STATE_FEATURES, HIDDEN[0], HIDDEN[1], 2]
    }

    pub fn new<R: Rng + ?Sized>(dim: usize, lambda: f64, rng: &mut R) -> Self {
        Fmo { lambda, regressor: TwoHeadRegressor::new(&Self::sizes(dim), rng), dim }
    }

    pub fn zeros(dim: usize, lambda: f64) -> Self {
        Fmo { lambda, regressor: TwoHeadRegressor::zeros(&Self::sizes(dim)), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, prefix: &[&[f64]], candidate: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        if candidate.len() != self.dim || prefix.iter().any(|e| e.len() != self.dim) {
            return Err(Error::Input(format!("predictor expects embeddings of dim {}", self.dim)));
        }
        if state.len() != STATE_FEATURES {
            return Err(Error::Input(format!("predictor expects {STATE_FEATURES} state features, got {}", state.len())));
        }
        let mut x = aggregate_prefix(prefix, self.lambda, self.dim);
        x.extend_from_slice(candidate);
        x.extend_from_slice(state);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite predictor input".into()));
        }
        Ok(x)
    }

    /// `(ar_step_hat, pr_step_hat)`.
    pub fn predict(&self, prefix: &[&[f64]], candidate: &[f64], state: &[f64]) -> Result<(f64, f64)> {
        Ok(self.regressor.predict(&self.input(prefix, candidate, state)?))
    }

    pub fn mean_loss(&self, samples: &[StepSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .iter()
            .map(|s| self.regressor.loss(&s.input, (s.outcome.ar_step, s.outcome.pr_step)))
            .sum();
        total / samples.len() as f64
    }

    /// Gradient of the mean loss over `samples` with respect to the network parameters.
    pub fn loss_grad(&self, samples: &[&StepSample]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.regressor.net.params().len()];
        let weight = 1.0 / samples.len().max(1) as f64;
        let mut loss = 0.0;
        for s in samples {
            loss += weight * self.regressor.loss_grad(&s.input, (s.outcome.ar_step, s.outcome.pr_step), weight, &mut grad).0;
        }
        (loss, grad)
    }

    /// Precomputes the candidate half of the first layer for every strategy.
    pub fn scorer<'a>(&'a self, table: &StrategyEmbeddings) -> Result<Scorer<'a>> {
        if table.dim() != self.dim {
            return Err(Error::Input(format!("embedding table has dim {}, predictor expects {}", table.dim(), self.dim)));
        }
        let (w, _) = self.regressor.net.layer(0);
        let fan_in = 2 * self.dim + STATE_FEATURES;
        let mut candidate_terms = Vec::with_capacity(table.len() * HIDDEN[0]);
        for s in 0..table.len() {
            let e = table.get(crate::catalog::StrategyIdx(s as u32));
            for row in w.chunks_exact(fan_in) {
                candidate_terms.push(crate::embedding::nn::dot(&row[self.dim..2 * self.dim], e));
            }
        }
        Ok(Scorer { fmo: self, candidate_terms })
    }
}

/// Batched prediction for many candidates sharing one prefix.
pub struct Scorer<'a> {
    fmo: &'a Fmo,
    candidate_terms: Vec<f64>,
}

impl Scorer<'_> {
    /// First-layer pre-activation contributed by the prefix and state.
    pub fn prefix_term(&self, prefix: &[&[f64]], state: &[f64]) -> Vec<f64> {
        let dim = self.fmo.dim;
        let h = aggregate_prefix(prefix, self.fmo.lambda, dim);
        let (w, b) = self.fmo.regressor.net.layer(0);
        let fan_in = 2 * dim + STATE_FEATURES;
        w.chunks_exact(fan_in)
            .zip(b)
            .map(|(row, bias)| {
                bias + crate::embedding::nn::dot(&row[..dim], &h) + crate::embedding::nn::dot(&row[2 * dim..], state)
            })
            .collect()
    }

    pub fn predict(&self, prefix_term: &[f64], candidate: crate::catalog::StrategyIdx) -> (f64, f64) {
        let width = prefix_term.len();
        let c = &self.candidate_terms[candidate.index() * width..(candidate.index() + 1) * width];
        let z: Vec<f64> = prefix_term.iter().zip(c).map(|(a, b)| (a + b).max(0.0)).collect();
        TwoHeadRegressor::squash(&self.fmo.regressor.net.forward_from(1, &z))
    }
}

/// Online trainer: one Adam step per call on the new outcomes plus a replay
/// minibatch of equal size drawn uniformly from earlier outcomes.
#[derive(Debug, Clone)]
pub struct FmoTrainer {
    opt: Adam,
    pub replay: bool,
}

impl FmoTrainer {
    pub fn new(fmo: &Fmo, lr: f64, replay: bool) -> Self {
        FmoTrainer { opt: Adam::new(fmo.regressor.net.params().len(), lr), replay }
    }

    /// Returns the post-step mean loss over the batch that was trained on.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        fmo: &mut Fmo,
        new: &[StepSample],
        past: &[StepSample],
        rng: &mut R,
    ) -> Result<f64> {
        if new.is_empty() {
            return Err(Error::Data("predictor update needs at least one outcome".into()));
        }
        let mut batch: Vec<&StepSample> = new.iter().collect();
        if self.replay && !past.is_empty() {
            batch.extend((0..new.len()).map(|_| &past[rng.gen_range(0..past.len())]));
        }
        let (_, grad) = fmo.loss_grad(&batch);
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { triple: 0, parameter: format!("predictor weight {i}") });
        }
        self.opt.step(fmo.regressor.net.params_mut(), &grad);
        Ok(fmo.loss_grad(&batch).0)
    }
}

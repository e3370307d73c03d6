//! Experience regressor: maps a strategy embedding plus task features to the
//! predicted `(AR, PR)` of that strategy on the task. Training updates both
//! the network and the strategy embeddings it reads.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::experience::{ResolvedRecord, TaskFeatures, TASK_FEATURES};
use super::nn::{Adam, TwoHeadRegressor};
use super::transr::EmbeddingStore;
use crate::error::{Error, Result};
use crate::kg::{EntityIdx, KnowledgeGraph};

pub const HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct NnExp {
    pub regressor: TwoHeadRegressor,
    dim: usize,
}

impl NnExp {
    fn sizes(dim: usize) -> [usize; 4] {
        [dim + TASK_FEATURES, HIDDEN[0], HIDDEN[1], 2]
    }

    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        NnExp { regressor: TwoHeadRegressor::new(&Self::sizes(dim), rng), dim }
    }

    pub fn zeros(dim: usize) -> Self {
        NnExp { regressor: TwoHeadRegressor::zeros(&Self::sizes(dim)), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `concat(embedding, normalized task features)`.
    pub fn input(&self, embedding: &[f64], task: &TaskFeatures) -> Result<Vec<f64>> {
        if embedding.len() != self.dim {
            return Err(Error::Input(format!("embedding has dim {}, expected {}", embedding.len(), self.dim)));
        }
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite strategy embedding".into()));
        }
        task.validate()?;
        let mut x = Vec::with_capacity(self.dim + TASK_FEATURES);
        x.extend_from_slice(embedding);
        x.extend_from_slice(&task.normalized());
        Ok(x)
    }

    /// `(ar_hat, pr_hat)` with `ar_hat` in `(-1, 1)` and `pr_hat` in `(0, 1)`.
    pub fn predict(&self, embedding: &[f64], task: &TaskFeatures) -> Result<(f64, f64)> {
        Ok(self.regressor.predict(&self.input(embedding, task)?))
    }

    /// Mean squared error over `records`, reading embeddings from `store`.
    pub fn mean_loss(&self, store: &EmbeddingStore, kg: &KnowledgeGraph, records: &[ResolvedRecord]) -> Result<f64> {
        if records.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for r in records {
            let x = self.input(store.entity(kg.strategy_entity(r.strategy)), &r.task)?;
            total += self.regressor.loss(&x, (r.ar, r.pr));
        }
        Ok(total / records.len() as f64)
    }
}

/// Optimiser state for the experience phase; persists across epochs.
#[derive(Debug, Clone)]
pub struct ExperienceTrainer {
    pub batch_size: usize,
    lr: f64,
    net_opt: Adam,
    embedding_opt: BTreeMap<EntityIdx, Adam>,
}

impl ExperienceTrainer {
    pub fn new(model: &NnExp, lr: f64, batch_size: usize) -> Self {
        ExperienceTrainer {
            batch_size: batch_size.max(1),
            lr,
            net_opt: Adam::new(model.regressor.net.params().len(), lr),
            embedding_opt: BTreeMap::new(),
        }
    }

    /// One shuffled minibatch pass; returns the post-epoch mean loss.
    pub fn epoch<R: Rng + ?Sized>(
        &mut self,
        model: &mut NnExp,
        store: &mut EmbeddingStore,
        kg: &KnowledgeGraph,
        records: &[ResolvedRecord],
        rng: &mut R,
    ) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::Data("experience epoch needs at least one record".into()));
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(rng);
        let n_params = model.regressor.net.params().len();
        for batch in order.chunks(self.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; n_params];
            let mut emb_grads: BTreeMap<EntityIdx, Vec<f64>> = BTreeMap::new();
            for &i in batch {
                let r = &records[i];
                let entity = kg.strategy_entity(r.strategy);
                let x = model.input(store.entity(entity), &r.task)?;
                let (_, dx) = model.regressor.loss_grad(&x, (r.ar, r.pr), weight, &mut grad);
                let g = emb_grads.entry(entity).or_insert_with(|| vec![0.0; model.dim]);
                for (a, b) in g.iter_mut().zip(&dx[..model.dim]) {
                    *a += b;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { triple: batch[0], parameter: "nnexp".into() });
            }
            self.net_opt.step(model.regressor.net.params_mut(), &grad);
            for (entity, g) in emb_grads {
                let dim = model.dim;
                let lr = self.lr;
                self.embedding_opt
                    .entry(entity)
                    .or_insert_with(|| Adam::new(dim, lr))
                    .step(store.entity_mut(entity), &g);
            }
        }
        model.mean_loss(store, kg, records)
    }
}

//! TransR knowledge-graph embeddings.
//!
//! A triple `(h, r, t)` is scored by `|W_r e_h + e_r - W_r e_t|^2`, lower being
//! more plausible. Training minimises the margin hinge
//! `max(0, margin + score(pos) - score(neg))` with one corrupted triple per
//! positive, using lazily updated Adam moments per parameter block.

use rand::seq::SliceRandom;
use rand::Rng;

use super::nn::{dot, Adam};
use crate::error::{Error, Result};
use crate::kg::{EntityIdx, KnowledgeGraph, Relation, Triple};

pub const DEFAULT_DIM: usize = 32;

/// Entity vectors (dim `d`), relation vectors (dim `k`) and per-relation `k x d` projections.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rel_dim: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
    projections: Vec<f64>,
}

impl EmbeddingStore {
    /// Vectors uniform in `[-0.1, 0.1]`, projections initialised to the identity.
    pub fn new<R: Rng + ?Sized>(n_entities: usize, dim: usize, rel_dim: usize, rng: &mut R) -> Self {
        let entities = (0..n_entities * dim).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        let relations = (0..Relation::ALL.len() * rel_dim).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        let mut projections = vec![0.0; Relation::ALL.len() * rel_dim * dim];
        for r in 0..Relation::ALL.len() {
            for i in 0..rel_dim.min(dim) {
                projections[r * rel_dim * dim + i * dim + i] = 1.0;
            }
        }
        EmbeddingStore { dim, rel_dim, entities, relations, projections }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rel_dim(&self) -> usize {
        self.rel_dim
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len() / self.dim
    }

    pub fn entity(&self, e: EntityIdx) -> &[f64] {
        &self.entities[e.index() * self.dim..(e.index() + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, e: EntityIdx) -> &mut [f64] {
        &mut self.entities[e.index() * self.dim..(e.index() + 1) * self.dim]
    }

    pub fn relation(&self, r: Relation) -> &[f64] {
        &self.relations[r.index() * self.rel_dim..(r.index() + 1) * self.rel_dim]
    }

    pub fn relation_mut(&mut self, r: Relation) -> &mut [f64] {
        &mut self.relations[r.index() * self.rel_dim..(r.index() + 1) * self.rel_dim]
    }

    /// Row-major `k x d` projection of relation `r`.
    pub fn projection(&self, r: Relation) -> &[f64] {
        let n = self.rel_dim * self.dim;
        &self.projections[r.index() * n..(r.index() + 1) * n]
    }

    pub fn projection_mut(&mut self, r: Relation) -> &mut [f64] {
        let n = self.rel_dim * self.dim;
        &mut self.projections[r.index() * n..(r.index() + 1) * n]
    }

    /// Scales every entity vector with norm above 1 back onto the unit sphere.
    pub fn project_to_unit_ball(&mut self) {
        for row in self.entities.chunks_exact_mut(self.dim) {
            let norm = dot(row, row).sqrt();
            if norm > 1.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    fn check(&self, e: EntityIdx) -> Result<()> {
        if e.index() < self.n_entities() {
            Ok(())
        } else {
            Err(Error::Lookup { kind: "entity", key: format!("#{}", e.0) })
        }
    }

    /// Translation residual `W_r (e_h - e_t) + e_r`.
    fn residual(&self, t: &Triple) -> (Vec<f64>, Vec<f64>) {
        let diff: Vec<f64> = self.entity(t.head).iter().zip(self.entity(t.tail)).map(|(a, b)| a - b).collect();
        let w = self.projection(t.relation);
        let v = self
            .relation(t.relation)
            .iter()
            .zip(w.chunks_exact(self.dim))
            .map(|(r, row)| r + dot(row, &diff))
            .collect();
        (v, diff)
    }

    /// `|W_r e_h + e_r - W_r e_t|^2`.
    pub fn score(&self, t: &Triple) -> Result<f64> {
        self.check(t.head)?;
        self.check(t.tail)?;
        let (v, _) = self.residual(t);
        Ok(dot(&v, &v))
    }
}

/// Gradient of the hinge loss of one (positive, negative) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransrGrad {
    pub relation: Relation,
    pub entities: Vec<(EntityIdx, Vec<f64>)>,
    pub d_relation: Vec<f64>,
    pub d_projection: Vec<f64>,
}

impl TransrGrad {
    fn zero(store: &EmbeddingStore, relation: Relation) -> Self {
        TransrGrad {
            relation,
            entities: Vec::with_capacity(4),
            d_relation: vec![0.0; store.rel_dim],
            d_projection: vec![0.0; store.rel_dim * store.dim],
        }
    }

    fn entity_slot(&mut self, e: EntityIdx, dim: usize) -> &mut Vec<f64> {
        let pos = match self.entities.iter().position(|(id, _)| *id == e) {
            Some(p) => p,
            None => {
                self.entities.push((e, vec![0.0; dim]));
                self.entities.len() - 1
            }
        };
        &mut self.entities[pos].1
    }

    /// Adds `sign * d score(t)`.
    fn accumulate(&mut self, store: &EmbeddingStore, t: &Triple, sign: f64) {
        let (v, diff) = store.residual(t);
        let g: Vec<f64> = v.iter().map(|x| 2.0 * sign * x).collect();
        let w = store.projection(t.relation);
        let d = store.dim;
        let mut wt_g = vec![0.0; d];
        for (o, &go) in g.iter().enumerate() {
            self.d_relation[o] += go;
            let row = &w[o * d..(o + 1) * d];
            let grow = &mut self.d_projection[o * d..(o + 1) * d];
            for i in 0..d {
                grow[i] += go * diff[i];
                wt_g[i] += go * row[i];
            }
        }
        for (x, y) in self.entity_slot(t.head, d).iter_mut().zip(&wt_g) {
            *x += y;
        }
        for (x, y) in self.entity_slot(t.tail, d).iter_mut().zip(&wt_g) {
            *x -= y;
        }
    }

    /// Name of the first non-finite component, if any.
    fn non_finite(&self) -> Option<String> {
        if self.d_relation.iter().any(|x| !x.is_finite()) {
            return Some(format!("relation[{}]", self.relation));
        }
        if self.d_projection.iter().any(|x| !x.is_finite()) {
            return Some(format!("projection[{}]", self.relation));
        }
        self.entities
            .iter()
            .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
            .map(|(e, _)| format!("entity[#{}]", e.0))
    }
}

/// Hinge loss of a pair and its gradient (`None` when the hinge is inactive).
pub fn hinge_loss_grad(
    store: &EmbeddingStore,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
) -> Result<(f64, Option<TransrGrad>)> {
    debug_assert_eq!(pos.relation, neg.relation);
    let loss = margin + store.score(pos)? - store.score(neg)?;
    if loss <= 0.0 {
        return Ok((0.0, None));
    }
    let mut grad = TransrGrad::zero(store, pos.relation);
    grad.accumulate(store, pos, 1.0);
    grad.accumulate(store, neg, -1.0);
    Ok((loss, Some(grad)))
}

/// Optimiser state for TransR training; persists across epochs.
#[derive(Debug, Clone)]
pub struct TransrTrainer {
    pub lr: f64,
    pub margin: f64,
    entity_opt: Vec<Adam>,
    relation_opt: Vec<Adam>,
    projection_opt: Vec<Adam>,
}

impl TransrTrainer {
    pub fn new(store: &EmbeddingStore, lr: f64, margin: f64) -> Result<Self> {
        if !(lr > 0.0) || !(margin > 0.0) {
            return Err(Error::Config(format!("TransR needs lr > 0 and margin > 0 (got {lr}, {margin})")));
        }
        Ok(TransrTrainer {
            lr,
            margin,
            entity_opt: (0..store.n_entities()).map(|_| Adam::new(store.dim, lr)).collect(),
            relation_opt: Relation::ALL.iter().map(|_| Adam::new(store.rel_dim, lr)).collect(),
            projection_opt: Relation::ALL.iter().map(|_| Adam::new(store.rel_dim * store.dim, lr)).collect(),
        })
    }

    /// One shuffled pass over the graph's triples; returns the mean hinge loss.
    pub fn epoch<R: Rng + ?Sized>(&mut self, store: &mut EmbeddingStore, kg: &KnowledgeGraph, rng: &mut R) -> Result<f64> {
        let triples = kg.triples();
        if triples.is_empty() {
            return Ok(0.0);
        }
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for &i in &order {
            let pos = triples[i];
            // Relations with no false triple of the same typing carry no ranking signal.
            let neg = match kg.corrupt(&pos, rng) {
                Ok(neg) => neg,
                Err(Error::Saturated { .. }) => continue,
                Err(e) => return Err(e),
            };
            let (loss, grad) = hinge_loss_grad(store, &pos, &neg, self.margin)?;
            total += loss;
            let Some(grad) = grad else { continue };
            if let Some(parameter) = grad.non_finite() {
                return Err(Error::NonFiniteGradient { triple: i, parameter });
            }
            let r = grad.relation.index();
            self.relation_opt[r].step(store.relation_mut(grad.relation), &grad.d_relation);
            self.projection_opt[r].step(store.projection_mut(grad.relation), &grad.d_projection);
            for (e, g) in &grad.entities {
                self.entity_opt[e.index()].step(store.entity_mut(*e), g);
            }
        }
        store.project_to_unit_ball();
        Ok(total / triples.len() as f64)
    }
}

//! Progressive multi-objective search over compression schemes.
//!
//! The search tree is rooted at START. Each round samples evaluated schemes
//! (current front members first), predicts the outcome of every unexplored
//! one-strategy extension, keeps the predicted Pareto front (accuracy up,
//! parameters down), evaluates those extensions and trains the predictor on
//! the observed outcomes.

pub mod fmo;
pub mod oracle;
pub mod pareto;

use std::collections::HashMap;

use fixedbitset::FixedBitSet;
use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Scheme, StrategyIdx};
use crate::embedding::StrategyEmbeddings;
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, Evaluator, ModelState};
use crate::rng;

pub use fmo::{Fmo, FmoTrainer, StepOutcome, StepSample};
pub use pareto::{crowding_distance, dominates, hypervolume, pareto_front, truncate_by_crowding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Minimum parameter-reduction rate of reported schemes.
    pub gamma: f64,
    pub max_len: usize,
    /// Number of rounds; the run may stop earlier on budget or exhaustion.
    pub rounds: usize,
    /// Maximum number of evaluations, START included.
    pub budget: Option<usize>,
    pub sample_size: usize,
    pub cap: usize,
    pub lambda: f64,
    pub lr: f64,
    /// Mix a replay minibatch from past outcomes into each predictor update.
    pub replay: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            gamma: 0.3,
            max_len: 5,
            rounds: 50,
            budget: None,
            sample_size: 8,
            cap: 16,
            lambda: 0.7,
            lr: 0.001,
            replay: true,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.max_len < 1 {
            return Err(Error::Config("max scheme length must be at least 1".into()));
        }
        if self.sample_size < 1 || self.cap < 1 {
            return Err(Error::Config("sample size and cap must be at least 1".into()));
        }
        if self.budget == Some(0) {
            return Err(Error::Config("evaluation budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub scheme: String,
    pub accuracy: f64,
    pub params: f64,
    pub flops: f64,
    pub pr: f64,
    pub fr: f64,
    pub ar: f64,
    pub predicted_ar_step: Option<f64>,
    pub predicted_pr_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub scheme: Scheme,
    pub accuracy: f64,
    pub params: f64,
    pub flops: f64,
    pub pr: f64,
    pub fr: f64,
    pub ar: f64,
}

impl ParetoPoint {
    pub fn new(scheme: Scheme, state: &ModelState, base: &ModelState) -> Self {
        let d = compute_metrics(base, state);
        ParetoPoint {
            scheme,
            accuracy: state.accuracy,
            params: state.params,
            flops: state.flops,
            pr: d.pr,
            fr: d.fr,
            ar: d.ar,
        }
    }

    pub fn objectives(&self) -> (f64, f64) {
        (self.accuracy, self.params)
    }
}

/// Pareto front of `points` after dropping those with `pr < gamma`, sorted by
/// decreasing accuracy then increasing params.
pub fn constrained_front(points: &[ParetoPoint], gamma: f64) -> Vec<ParetoPoint> {
    let eligible: Vec<&ParetoPoint> = points.iter().filter(|p| p.pr >= gamma).collect();
    let objectives: Vec<(f64, f64)> = eligible.iter().map(|p| p.objectives()).collect();
    let mut front: Vec<ParetoPoint> = pareto_front(&objectives).into_iter().map(|i| eligible[i].clone()).collect();
    front.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(a.params.total_cmp(&b.params))
            .then(a.scheme.cmp(&b.scheme))
    });
    front
}

/// Predicted `(ACC, PAR)` after appending a strategy with predicted step outcome.
pub fn predicted_objectives(state: &ModelState, ar_step: f64, pr_step: f64) -> (f64, f64) {
    (state.accuracy * (1.0 + ar_step), state.params * (1.0 - pr_step))
}

#[derive(Debug, Clone)]
struct Node {
    scheme: Scheme,
    state: ModelState,
    /// Strategies not yet expanded from this scheme.
    options: FixedBitSet,
}

/// A candidate extension with its predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub parent: usize,
    pub strategy: StrategyIdx,
    pub ar_step: f64,
    pub pr_step: f64,
    pub acc: f64,
    pub par: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundStatus {
    Continue,
    BudgetExhausted,
    SpaceExhausted,
}

pub struct ProgressiveSearch<'a, E: Evaluator + ?Sized> {
    catalog: &'a Catalog,
    embeddings: &'a StrategyEmbeddings,
    evaluator: &'a E,
    cfg: SearchConfig,
    base: ModelState,
    nodes: Vec<Node>,
    index: HashMap<Scheme, usize>,
    /// Nodes with at least one unexplored option, with positions for O(1) removal.
    open: Vec<usize>,
    open_pos: Vec<Option<usize>>,
    /// Unconstrained Pareto front of the history, as node indices.
    front: Vec<usize>,
    fmo: Fmo,
    trainer: FmoTrainer,
    samples: Vec<StepSample>,
    rng: ChaCha8Rng,
    round: usize,
    trace: Vec<TraceRecord>,
    partial: bool,
    predictor_losses: Vec<f64>,
}

impl<'a, E: Evaluator + ?Sized> ProgressiveSearch<'a, E> {
    /// Seeds the history with START; this counts as one evaluation.
    pub fn new(
        catalog: &'a Catalog,
        embeddings: &'a StrategyEmbeddings,
        evaluator: &'a E,
        cfg: SearchConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if embeddings.len() != catalog.len() {
            return Err(Error::Input(format!(
                "embedding table covers {} strategies, catalog has {}",
                embeddings.len(),
                catalog.len()
            )));
        }
        let mut rng = rng::stream(cfg.seed, "search");
        let fmo = Fmo::new(embeddings.dim(), cfg.lambda, &mut rng);
        let trainer = FmoTrainer::new(&fmo, cfg.lr, cfg.replay);
        let base = evaluator.base_state();
        base.validate()?;
        let mut search = ProgressiveSearch {
            catalog,
            embeddings,
            evaluator,
            cfg,
            base,
            nodes: Vec::new(),
            index: HashMap::new(),
            open: Vec::new(),
            open_pos: Vec::new(),
            front: Vec::new(),
            fmo,
            trainer,
            samples: Vec::new(),
            rng,
            round: 0,
            trace: Vec::new(),
            partial: false,
            predictor_losses: Vec::new(),
        };
        search.insert(Scheme::start(), base, None)?;
        Ok(search)
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    pub fn base_state(&self) -> &ModelState {
        &self.base
    }

    pub fn evaluations(&self) -> usize {
        self.nodes.len()
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn fmo(&self) -> &Fmo {
        &self.fmo
    }

    pub fn predictor_losses(&self) -> &[f64] {
        &self.predictor_losses
    }

    /// Every evaluated scheme with its state, in evaluation order.
    pub fn history(&self) -> impl Iterator<Item = (&Scheme, &ModelState)> {
        self.nodes.iter().map(|n| (&n.scheme, &n.state))
    }

    pub fn options(&self, scheme: &Scheme) -> Option<&FixedBitSet> {
        self.index.get(scheme).map(|&i| &self.nodes[i].options)
    }

    pub fn points(&self) -> Vec<ParetoPoint> {
        self.nodes.iter().map(|n| ParetoPoint::new(n.scheme.clone(), &n.state, &self.base)).collect()
    }

    /// Constrained Pareto front over the whole history.
    pub fn final_front(&self) -> Vec<ParetoPoint> {
        constrained_front(&self.points(), self.cfg.gamma)
    }

    /// Hypervolume of the unconstrained history front.
    pub fn history_hypervolume(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.front.iter().map(|&i| (self.nodes[i].state.accuracy, self.nodes[i].state.params)).collect();
        hypervolume(&pts, self.base.params)
    }

    fn remaining_budget(&self) -> usize {
        self.cfg.budget.map_or(usize::MAX, |b| b.saturating_sub(self.nodes.len()))
    }

    fn insert(&mut self, scheme: Scheme, state: ModelState, predicted: Option<StepOutcome>) -> Result<usize> {
        let id = self.nodes.len();
        if self.index.insert(scheme.clone(), id).is_some() {
            return Err(Error::Internal(format!("scheme {} evaluated twice", self.catalog.scheme_label(&scheme))));
        }
        let mut options = FixedBitSet::with_capacity(self.catalog.len());
        if scheme.len() < self.cfg.max_len {
            options.insert_range(..);
        }
        let d = compute_metrics(&self.base, &state);
        self.trace.push(TraceRecord {
            round: self.round,
            scheme: self.catalog.scheme_label(&scheme),
            accuracy: state.accuracy,
            params: state.params,
            flops: state.flops,
            pr: d.pr,
            fr: d.fr,
            ar: d.ar,
            predicted_ar_step: predicted.map(|p| p.ar_step),
            predicted_pr_step: predicted.map(|p| p.pr_step),
        });
        let open = !options.is_clear();
        self.nodes.push(Node { scheme, state, options });
        self.open_pos.push(None);
        if open {
            self.open_pos[id] = Some(self.open.len());
            self.open.push(id);
        }
        self.update_front(id);
        Ok(id)
    }

    fn update_front(&mut self, id: usize) {
        let obj = |n: &Node| (n.state.accuracy, n.state.params);
        let p = obj(&self.nodes[id]);
        if self.front.iter().any(|&j| dominates(obj(&self.nodes[j]), p)) {
            return;
        }
        let nodes = &self.nodes;
        self.front.retain(|&j| !dominates(p, obj(&nodes[j])));
        self.front.push(id);
    }

    fn expand(&mut self, parent: usize, s: StrategyIdx) -> Result<()> {
        let options = &mut self.nodes[parent].options;
        if !options.contains(s.index()) {
            return Err(Error::Internal(format!("strategy {} already expanded from node {parent}", s.0)));
        }
        options.set(s.index(), false);
        if options.is_clear() {
            let pos = self.open_pos[parent].take().expect("open node has a position");
            self.open.swap_remove(pos);
            if let Some(&moved) = self.open.get(pos) {
                self.open_pos[moved] = Some(pos);
            }
        }
        Ok(())
    }

    /// Up to `K` open schemes: front members (most recent first), then uniform
    /// among the other open schemes. Returned in ascending node order.
    pub fn sample_schemes(&mut self) -> Vec<usize> {
        let k = self.cfg.sample_size;
        let mut front_open: Vec<usize> = self.front.iter().copied().filter(|&i| self.open_pos[i].is_some()).collect();
        front_open.sort_unstable_by(|a, b| b.cmp(a));
        front_open.truncate(k);
        let mut chosen = front_open;
        let need = k - chosen.len();
        if need > 0 {
            let taken: std::collections::HashSet<usize> = chosen.iter().copied().collect();
            let rest_len = self.open.len() - self.front.iter().filter(|&&i| self.open_pos[i].is_some()).count();
            if rest_len <= need.max(4 * k) {
                let mut rest: Vec<usize> = self.open.iter().copied().filter(|i| !taken.contains(i) && !self.front.contains(i)).collect();
                rest.sort_unstable();
                rest.shuffle(&mut self.rng);
                chosen.extend(rest.into_iter().take(need));
            } else {
                let mut picked = std::collections::HashSet::new();
                while picked.len() < need {
                    let i = self.open[self.rng.gen_range(0..self.open.len())];
                    if !taken.contains(&i) && !self.front.contains(&i) && picked.insert(i) {
                        chosen.push(i);
                    }
                }
            }
        }
        chosen.sort_unstable();
        chosen
    }

    fn prefix_embeddings(&self, scheme: &Scheme) -> Vec<&[f64]> {
        scheme.steps().iter().map(|&s| self.embeddings.get(s)).collect()
    }

    fn features(&self, node: &Node) -> [f64; fmo::STATE_FEATURES] {
        fmo::state_features(&node.state, &self.base, node.scheme.len(), self.cfg.max_len)
    }

    /// Predicted outcomes of every unexplored extension of `sampled`, in
    /// (node, strategy) order.
    pub fn candidates(&self, sampled: &[usize]) -> Result<Vec<Candidate>> {
        let scorer = self.fmo.scorer(self.embeddings)?;
        let per_node: Vec<Vec<Candidate>> = sampled
            .par_iter()
            .map(|&parent| {
                let node = &self.nodes[parent];
                let term = scorer.prefix_term(&self.prefix_embeddings(&node.scheme), &self.features(node));
                node.options
                    .ones()
                    .map(|s| {
                        let strategy = StrategyIdx(s as u32);
                        let (ar_step, pr_step) = scorer.predict(&term, strategy);
                        let (acc, par) = predicted_objectives(&node.state, ar_step, pr_step);
                        Candidate { parent, strategy, ar_step, pr_step, acc, par }
                    })
                    .collect()
            })
            .collect();
        Ok(per_node.into_iter().flatten().collect())
    }

    /// Predicted Pareto front of `candidates`, capped at `B` by crowding distance.
    pub fn select_pareto_options(&self, candidates: &[Candidate]) -> Vec<Candidate> {
        select_pareto_options(candidates, self.cfg.cap)
    }

    /// Runs one round. Evaluations run in parallel and are merged in candidate order.
    pub fn step_round(&mut self) -> Result<RoundStatus> {
        if self.open.is_empty() {
            return Ok(RoundStatus::SpaceExhausted);
        }
        if self.remaining_budget() == 0 {
            self.partial = true;
            return Ok(RoundStatus::BudgetExhausted);
        }
        self.round += 1;
        let sampled = self.sample_schemes();
        let candidates = self.candidates(&sampled)?;
        let mut chosen = self.select_pareto_options(&candidates);
        let mut status = RoundStatus::Continue;
        if chosen.len() > self.remaining_budget() {
            chosen.truncate(self.remaining_budget());
            self.partial = true;
            status = RoundStatus::BudgetExhausted;
        }
        debug!("round {}: {} sampled, {} candidates, {} selected", self.round, sampled.len(), candidates.len(), chosen.len());

        let results: Vec<Result<ModelState>> = chosen
            .par_iter()
            .map(|c| {
                let node = &self.nodes[c.parent];
                self.evaluator.extend(&node.scheme, &node.state, c.strategy)
            })
            .collect();

        let mut new_samples = Vec::with_capacity(chosen.len());
        for (c, result) in chosen.iter().zip(results) {
            let state = result?;
            let parent = &self.nodes[c.parent];
            let input = self.fmo.input(&self.prefix_embeddings(&parent.scheme), self.embeddings.get(c.strategy), &self.features(parent))?;
            let outcome = StepOutcome::between(&parent.state, &state);
            let scheme = parent.scheme.child(c.strategy);
            self.expand(c.parent, c.strategy)?;
            self.insert(scheme, state, Some(StepOutcome { ar_step: c.ar_step, pr_step: c.pr_step }))?;
            new_samples.push(StepSample { input, outcome });
        }
        if !new_samples.is_empty() {
            let loss = self.trainer.train(&mut self.fmo, &new_samples, &self.samples, &mut self.rng)?;
            self.predictor_losses.push(loss);
            self.samples.extend(new_samples);
        }
        Ok(status)
    }

    /// Runs rounds until the configured count, the budget or the space runs out.
    pub fn run(&mut self) -> Result<()> {
        while self.round < self.cfg.rounds {
            match self.step_round()? {
                RoundStatus::Continue => {}
                RoundStatus::BudgetExhausted | RoundStatus::SpaceExhausted => break,
            }
        }
        Ok(())
    }

    /// Full consistency check of the history and option sets.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Internal(m));
        if self.index.len() != self.nodes.len() || self.trace.len() != self.nodes.len() {
            return fail("history, index and trace sizes disagree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if self.index.get(&node.scheme) != Some(&i) {
                return fail(format!("node {i} is not indexed"));
            }
            if let Some((last, prefix)) = node.scheme.steps().split_last() {
                let parent = self.index.get(&Scheme::from_steps(prefix.to_vec()));
                match parent {
                    Some(&p) if p < i && !self.nodes[p].options.contains(last.index()) => {}
                    _ => return fail(format!("node {i} has no consistent parent")),
                }
            }
            for s in 0..self.catalog.len() {
                let expected = node.scheme.len() < self.cfg.max_len
                    && !self.index.contains_key(&node.scheme.child(StrategyIdx(s as u32)));
                if node.options.contains(s) != expected {
                    return fail(format!("option {s} of node {i} is inconsistent"));
                }
            }
            if (self.open_pos[i].is_some()) != !node.options.is_clear() {
                return fail(format!("open set disagrees for node {i}"));
            }
        }
        let objectives: Vec<(f64, f64)> = self.nodes.iter().map(|n| (n.state.accuracy, n.state.params)).collect();
        let mut front = self.front.clone();
        front.sort_unstable();
        if front != pareto_front(&objectives) {
            return fail("incremental front differs from recomputed front".into());
        }
        Ok(())
    }
}

/// Predicted Pareto front (ACC up, PAR down) of `candidates`, keeping at most
/// `cap` by crowding distance. Order follows `candidates`.
pub fn select_pareto_options(candidates: &[Candidate], cap: usize) -> Vec<Candidate> {
    let pts: Vec<(f64, f64)> = candidates.iter().map(|c| (c.acc, c.par)).collect();
    let front = pareto_front(&pts);
    let front_pts: Vec<(f64, f64)> = front.iter().map(|&i| pts[i]).collect();
    truncate_by_crowding(&front_pts, cap).into_iter().map(|k| candidates[front[k]]).collect()
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub front: Vec<ParetoPoint>,
    pub trace: Vec<TraceRecord>,
    pub hypervolume: f64,
    pub evaluations: usize,
    pub rounds: usize,
    pub partial: bool,
    pub base_state: ModelState,
}

pub fn run_search<E: Evaluator + ?Sized>(
    catalog: &Catalog,
    embeddings: &StrategyEmbeddings,
    evaluator: &E,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    let mut search = ProgressiveSearch::new(catalog, embeddings, evaluator, cfg.clone())?;
    search.run()?;
    let front = search.final_front();
    let pts: Vec<(f64, f64)> = front.iter().map(|p| p.objectives()).collect();
    Ok(SearchResult {
        hypervolume: hypervolume(&pts, search.base.params),
        evaluations: search.evaluations(),
        rounds: search.rounds_completed(),
        partial: search.is_partial(),
        base_state: search.base,
        trace: search.trace,
        front,
    })
}

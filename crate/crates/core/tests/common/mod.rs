//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::HashSet;

use compsearch::catalog::{Catalog, CatalogFilter, Scheme, StrategyIdx};
use compsearch::embedding::transr::hinge_loss_grad;
use compsearch::embedding::{
    experience, learn_embeddings, EmbeddingConfig, EmbeddingStore, ExperienceTrainer, NnExp, StrategyEmbeddings,
};
use compsearch::evaluation::{Evaluator, EvaluatorConfig, ModelState, SimulatedEvaluator};
use compsearch::kg::{EntityKind, KnowledgeGraph, Relation, Triple};
use compsearch::rng;
use compsearch::search::fmo::{state_features, Fmo, FmoTrainer, StepOutcome, StepSample};
use compsearch::search::{oracle, run_search, SearchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn resnet56() -> ModelState {
    ModelState::new(9e5, 2.7e8, 0.9104)
}

pub fn tiny_catalog() -> Catalog {
    Catalog::build(Some(&CatalogFilter::methods(&["C3", "C4"]))).unwrap()
}

/// Max relative error between the TransR hinge gradient and central
/// differences, over every parameter the pair touches.
pub fn transr_gradient_error(kg: &KnowledgeGraph, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(kg.entities().len(), 32, 32, &mut rng);
    // move projections away from the identity so every block matters
    for r in Relation::ALL {
        for w in store.projection_mut(r) {
            *w += rng.gen_range(-0.3..0.3);
        }
    }
    let pos = kg.triples()[rng.gen_range(0..kg.triples().len())];
    let neg = kg.corrupt(&pos, &mut rng).unwrap();
    // a large margin keeps the hinge active
    let margin = 10.0;
    let loss = |s: &EmbeddingStore| hinge_loss_grad(s, &pos, &neg, margin).unwrap().0;
    let grad = hinge_loss_grad(&store, &pos, &neg, margin).unwrap().1.expect("active hinge");

    let mut worst: f64 = 0.0;
    let mut check = |store: &mut EmbeddingStore, get: &dyn Fn(&mut EmbeddingStore) -> &mut [f64], analytic: &[f64]| {
        for i in 0..analytic.len() {
            let orig = get(store)[i];
            get(store)[i] = orig + FD_STEP;
            let up = loss(store);
            get(store)[i] = orig - FD_STEP;
            let down = loss(store);
            get(store)[i] = orig;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
        }
    };
    let r = pos.relation;
    check(&mut store, &|s| s.relation_mut(r), &grad.d_relation);
    check(&mut store, &|s| s.projection_mut(r), &grad.d_projection);
    for (e, g) in &grad.entities {
        let e = *e;
        check(&mut store, &move |s| s.entity_mut(e), g);
    }
    worst
}

/// Max relative error of the experience regressor's parameter and input gradients.
pub fn nnexp_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = NnExp::new(32, &mut rng);
    let emb: Vec<f64> = (0..32).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let task = experience::random_task(&mut rng);
    let x = model.input(&emb, &task).unwrap();
    let target = (rng.gen_range(-0.2..0.1), rng.gen_range(0.0..0.6));
    let mut grad = vec![0.0; model.regressor.net.params().len()];
    let (_, dx) = model.regressor.loss_grad(&x, target, 1.0, &mut grad);

    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = model.regressor.net.params()[i];
        model.regressor.net.params_mut()[i] = orig + FD_STEP;
        let up = model.regressor.loss(&x, target);
        model.regressor.net.params_mut()[i] = orig - FD_STEP;
        let down = model.regressor.loss(&x, target);
        model.regressor.net.params_mut()[i] = orig;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    // the embedding part of the input receives gradients during training
    for i in 0..32 {
        let mut xp = x.clone();
        xp[i] += FD_STEP;
        let mut xm = x.clone();
        xm[i] -= FD_STEP;
        let numeric = (model.regressor.loss(&xp, target) - model.regressor.loss(&xm, target)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dx[i], numeric));
    }
    worst
}

/// Max relative error of the step predictor's mean-loss gradient on a small batch.
pub fn fmo_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fmo = Fmo::new(32, 0.7, &mut rng);
    let samples: Vec<StepSample> = (0..4)
        .map(|_| {
            let depth = rng.gen_range(0..4);
            let prefix: Vec<Vec<f64>> = (0..depth).map(|_| (0..32).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
            let refs: Vec<&[f64]> = prefix.iter().map(Vec::as_slice).collect();
            let cand: Vec<f64> = (0..32).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let state = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.5..0.95), depth as f64 / 5.0];
            StepSample {
                input: fmo.input(&refs, &cand, &state).unwrap(),
                outcome: StepOutcome { ar_step: rng.gen_range(-0.1..0.02), pr_step: rng.gen_range(0.0..0.5) },
            }
        })
        .collect();
    let batch: Vec<&StepSample> = samples.iter().collect();
    let (_, grad) = fmo.loss_grad(&batch);
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = fmo.regressor.net.params()[i];
        fmo.regressor.net.params_mut()[i] = orig + FD_STEP;
        let up = fmo.loss_grad(&batch).0;
        fmo.regressor.net.params_mut()[i] = orig - FD_STEP;
        let down = fmo.loss_grad(&batch).0;
        fmo.regressor.net.params_mut()[i] = orig;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Mean filtered rank of true R2 tails among 99 sampled corruptions, after
/// training on the graph with 500 held-out R2 triples removed.
pub fn link_prediction_mean_rank(seed: u64, train_epochs: usize) -> f64 {
    let catalog = Catalog::full();
    let kg = KnowledgeGraph::build(&catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, "link-prediction"));
    let mut r2: Vec<usize> = (0..kg.triples().len()).filter(|&i| kg.triples()[i].relation == Relation::R2).collect();
    rand::seq::SliceRandom::shuffle(r2.as_mut_slice(), &mut rng);
    let held: HashSet<usize> = r2.into_iter().take(500).collect();
    let train = kg.without(&held);

    let mut rec_rng = rng::stream(seed, "records");
    let records = experience::synthesize_records(&catalog, 1000, rng::derive_seed(seed, "evaluator"), &mut rec_rng).unwrap();
    let cfg = EmbeddingConfig { train_epochs, seed, ..Default::default() };
    let learned = learn_embeddings(&catalog, &train, &records, &cfg).unwrap();

    let pool = kg.pool(EntityKind::HpSetting);
    let mut held: Vec<usize> = held.into_iter().collect();
    held.sort_unstable();
    let mut total = 0.0;
    for &i in &held {
        let t = kg.triples()[i];
        let true_score = learned.store.score(&t).unwrap();
        let mut rank = 1;
        let mut drawn = 0;
        while drawn < 99 {
            let tail = pool[rng.gen_range(0..pool.len())];
            let c = Triple { tail, ..t };
            if kg.contains(&c) {
                continue;
            }
            drawn += 1;
            if learned.store.score(&c).unwrap() < true_score {
                rank += 1;
            }
        }
        total += rank as f64;
    }
    total / held.len() as f64
}

/// `(initial, final)` mean loss of the experience regressor over 1000
/// synthetic records and `epochs` epochs, embeddings trained jointly.
pub fn nnexp_fit(seed: u64, epochs: usize) -> (f64, f64) {
    let catalog = Catalog::full();
    let kg = KnowledgeGraph::build(&catalog);
    let mut rng = rng::stream(seed, "nnexp");
    let mut store = EmbeddingStore::new(kg.entities().len(), 32, 32, &mut rng);
    let mut model = NnExp::new(32, &mut rng);
    let mut rec_rng = rng::stream(seed, "records");
    let records = experience::synthesize_records(&catalog, 1000, seed, &mut rec_rng).unwrap();
    let resolved = experience::resolve_all(&records, &catalog).unwrap();
    let initial = model.mean_loss(&store, &kg, &resolved).unwrap();
    let mut trainer = ExperienceTrainer::new(&model, 0.001, 32);
    let mut last = initial;
    for _ in 0..epochs {
        last = trainer.epoch(&mut model, &mut store, &kg, &resolved, &mut rng).unwrap();
    }
    (initial, last)
}

/// Step outcomes of random one-strategy extensions of random schemes.
pub fn synthetic_step_samples(catalog: &Catalog, table: &StrategyEmbeddings, fmo: &Fmo, n: usize, seed: u64) -> Vec<StepSample> {
    let base = resnet56();
    let sim = SimulatedEvaluator::new(catalog, EvaluatorConfig { seed, base_state: base, pretrain_epochs: 200 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, "steps"));
    let max_len = 5;
    (0..n)
        .map(|_| {
            let depth = rng.gen_range(0..max_len);
            let prefix =
                Scheme::from_steps((0..depth).map(|_| StrategyIdx(rng.gen_range(0..catalog.len() as u32))).collect());
            let next = StrategyIdx(rng.gen_range(0..catalog.len() as u32));
            let state = sim.evaluate(&prefix).unwrap();
            let after = sim.extend(&prefix, &state, next).unwrap();
            let prefix_emb: Vec<&[f64]> = prefix.steps().iter().map(|&s| table.get(s)).collect();
            let features = state_features(&state, &base, depth, max_len);
            StepSample {
                input: fmo.input(&prefix_emb, table.get(next), &features).unwrap(),
                outcome: StepOutcome::between(&state, &after),
            }
        })
        .collect()
}

/// `(initial, final)` loss of the step predictor trained for `steps` updates on 500 outcomes.
pub fn fmo_fit(seed: u64, steps: usize) -> (f64, f64) {
    let catalog = Catalog::full();
    let kg = KnowledgeGraph::build(&catalog);
    let mut rng = rng::stream(seed, "search");
    let store = EmbeddingStore::new(kg.entities().len(), 32, 32, &mut rng);
    let table = StrategyEmbeddings::from_store(&catalog, &kg, &store);
    let mut fmo = Fmo::new(32, 0.7, &mut rng);
    let samples = synthetic_step_samples(&catalog, &table, &fmo, 500, seed);
    let initial = fmo.mean_loss(&samples);
    let mut trainer = FmoTrainer::new(&fmo, 0.001, false);
    let mut last = initial;
    for _ in 0..steps {
        last = trainer.train(&mut fmo, &samples, &[], &mut rng).unwrap();
    }
    (initial, last)
}

/// Everything needed to run searches on the 125-strategy, L=2 space.
pub struct TinyBench {
    pub catalog: Catalog,
    pub kg: KnowledgeGraph,
    pub evaluator_cfg: EvaluatorConfig,
    pub oracle_hv: f64,
    pub oracle_size: usize,
}

impl TinyBench {
    pub fn new(evaluator_seed: u64, gamma: f64) -> Self {
        let catalog = tiny_catalog();
        let kg = KnowledgeGraph::build(&catalog);
        let evaluator_cfg = EvaluatorConfig { seed: evaluator_seed, base_state: resnet56(), pretrain_epochs: 200 };
        let sim = SimulatedEvaluator::new(&catalog, evaluator_cfg).unwrap();
        let o = oracle::enumerate(&catalog, &sim, 2, gamma, oracle::DEFAULT_LIMIT).unwrap();
        TinyBench { catalog, kg, evaluator_cfg, oracle_hv: o.hypervolume, oracle_size: o.evaluations }
    }

    pub fn embeddings(&self, seed: u64, kg_training: bool, exp_training: bool) -> StrategyEmbeddings {
        let mut r = rng::stream(seed, "records");
        let records = experience::synthesize_records(&self.catalog, 1000, self.evaluator_cfg.seed, &mut r).unwrap();
        let cfg = EmbeddingConfig { seed, kg_training, exp_training, ..Default::default() };
        learn_embeddings(&self.catalog, &self.kg, &records, &cfg).unwrap().table
    }

    /// Hypervolume ratio against the exhaustive front.
    pub fn search_ratio(&self, table: &StrategyEmbeddings, seed: u64, budget: usize, gamma: f64) -> f64 {
        let sim = SimulatedEvaluator::new(&self.catalog, self.evaluator_cfg).unwrap();
        let cfg = SearchConfig { gamma, max_len: 2, rounds: usize::MAX, budget: Some(budget), seed, ..Default::default() };
        run_search(&self.catalog, table, &sim, &cfg).unwrap().hypervolume / self.oracle_hv
    }
}

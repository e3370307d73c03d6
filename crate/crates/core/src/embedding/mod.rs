//! Strategy embedding learning.
//!
//! Each outer iteration runs one TransR epoch over the knowledge graph and
//! then one experience epoch, which refines the strategy vectors in place
//! through the experience regressor. The result is a table with one vector
//! per catalog strategy.

pub mod experience;
pub mod nn;
pub mod nnexp;
pub mod transr;

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, StrategyIdx};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::rng;

pub use experience::{ExperienceRecord, ResolvedRecord, TaskFeatures};
pub use nnexp::{ExperienceTrainer, NnExp};
pub use transr::{EmbeddingStore, TransrTrainer};

pub const TABLE_VERSION: &str = "strategy-embeddings/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub train_epochs: usize,
    pub transr_lr: f64,
    pub margin: f64,
    pub exp_lr: f64,
    pub exp_batch: usize,
    /// Run the TransR phase; when off, vectors keep their random initialisation.
    pub kg_training: bool,
    /// Run the experience phase.
    pub exp_training: bool,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: transr::DEFAULT_DIM,
            train_epochs: 50,
            transr_lr: 0.01,
            margin: 1.0,
            exp_lr: 0.001,
            exp_batch: 32,
            kg_training: true,
            exp_training: true,
            seed: 0,
        }
    }
}

/// One vector per catalog strategy, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEmbeddings {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    version: String,
    dim: usize,
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl StrategyEmbeddings {
    pub fn from_store(catalog: &Catalog, kg: &KnowledgeGraph, store: &EmbeddingStore) -> Self {
        let mut vectors = Vec::with_capacity(catalog.len() * store.dim());
        for s in catalog.indices() {
            vectors.extend_from_slice(store.entity(kg.strategy_entity(s)));
        }
        StrategyEmbeddings {
            dim: store.dim(),
            ids: catalog.strategies().iter().map(|s| s.canonical_id.clone()).collect(),
            vectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, s: StrategyIdx) -> &[f64] {
        &self.vectors[s.index() * self.dim..(s.index() + 1) * self.dim]
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = TableFile {
            version: TABLE_VERSION.to_string(),
            dim: self.dim,
            embeddings: self
                .ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), self.vectors[i * self.dim..(i + 1) * self.dim].to_vec()))
                .collect(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    /// Loads a table and orders it by `catalog`; every strategy must be present.
    pub fn load_json(path: &Path, catalog: &Catalog) -> Result<Self> {
        let file: TableFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.version != TABLE_VERSION {
            return Err(Error::Data(format!("unsupported embedding table version `{}`", file.version)));
        }
        let mut vectors = Vec::with_capacity(catalog.len() * file.dim);
        for s in catalog.strategies() {
            let v = file.embeddings.get(&s.canonical_id).ok_or_else(|| {
                Error::Data(format!("embedding table lacks strategy `{}`", s.canonical_id))
            })?;
            if v.len() != file.dim {
                return Err(Error::Data(format!("embedding for `{}` has wrong length", s.canonical_id)));
            }
            vectors.extend_from_slice(v);
        }
        Ok(StrategyEmbeddings {
            dim: file.dim,
            ids: catalog.strategies().iter().map(|s| s.canonical_id.clone()).collect(),
            vectors,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LearnedEmbeddings {
    pub store: EmbeddingStore,
    pub nnexp: NnExp,
    pub table: StrategyEmbeddings,
    pub transr_losses: Vec<f64>,
    pub experience_losses: Vec<f64>,
}

/// Alternates TransR and experience epochs for `cfg.train_epochs` rounds.
pub fn learn_embeddings(
    catalog: &Catalog,
    kg: &KnowledgeGraph,
    records: &[ExperienceRecord],
    cfg: &EmbeddingConfig,
) -> Result<LearnedEmbeddings> {
    let resolved = experience::resolve_all(records, catalog)?;
    let mut kg_rng = rng::stream(cfg.seed, "kg");
    let mut exp_rng = rng::stream(cfg.seed, "nnexp");

    let mut store = EmbeddingStore::new(kg.entities().len(), cfg.dim, cfg.dim, &mut kg_rng);
    let mut nnexp = NnExp::new(cfg.dim, &mut exp_rng);
    let mut transr = TransrTrainer::new(&store, cfg.transr_lr, cfg.margin)?;
    let mut exp_trainer = ExperienceTrainer::new(&nnexp, cfg.exp_lr, cfg.exp_batch);

    let run_exp = cfg.exp_training && !resolved.is_empty();
    if cfg.exp_training && resolved.is_empty() && cfg.train_epochs > 0 {
        warn!("no experience records: skipping the experience phase");
    }

    let mut transr_losses = Vec::new();
    let mut experience_losses = Vec::new();
    for epoch in 0..cfg.train_epochs {
        if cfg.kg_training {
            transr_losses.push(transr.epoch(&mut store, kg, &mut kg_rng)?);
        }
        if run_exp {
            experience_losses.push(exp_trainer.epoch(&mut nnexp, &mut store, kg, &resolved, &mut exp_rng)?);
        }
        if epoch % 10 == 9 || epoch + 1 == cfg.train_epochs {
            info!(
                "embedding epoch {}: transr {:?}, experience {:?}",
                epoch + 1,
                transr_losses.last(),
                experience_losses.last()
            );
        }
    }

    let table = StrategyEmbeddings::from_store(catalog, kg, &store);
    Ok(LearnedEmbeddings { store, nnexp, table, transr_losses, experience_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogFilter;

    fn tiny() -> (Catalog, KnowledgeGraph) {
        let catalog = Catalog::build(Some(&CatalogFilter::methods(&["C3"]))).unwrap();
        let kg = KnowledgeGraph::build(&catalog);
        (catalog, kg)
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let (catalog, kg) = tiny();
        let cfg = EmbeddingConfig { train_epochs: 0, dim: 8, seed: 3, ..Default::default() };
        let learned = learn_embeddings(&catalog, &kg, &[], &cfg).unwrap();
        let mut r = rng::stream(3, "kg");
        let fresh = EmbeddingStore::new(kg.entities().len(), 8, 8, &mut r);
        assert_eq!(learned.store, fresh);
        assert_eq!(learned.table.len(), 50);
    }

    #[test]
    fn empty_experience_is_pure_transr() {
        let (catalog, kg) = tiny();
        let cfg = EmbeddingConfig { train_epochs: 3, dim: 8, seed: 3, ..Default::default() };
        let learned = learn_embeddings(&catalog, &kg, &[], &cfg).unwrap();
        assert_eq!(learned.transr_losses.len(), 3);
        assert!(learned.experience_losses.is_empty());
    }

    #[test]
    fn deterministic_and_fixed_dimension() {
        let (catalog, kg) = tiny();
        let mut r = rng::stream(1, "records");
        let records = experience::synthesize_records(&catalog, 40, 1, &mut r).unwrap();
        let cfg = EmbeddingConfig { train_epochs: 3, seed: 5, ..Default::default() };
        let a = learn_embeddings(&catalog, &kg, &records, &cfg).unwrap();
        let b = learn_embeddings(&catalog, &kg, &records, &cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.table.dim(), 32);
        assert_eq!(a.experience_losses.len(), 3);
    }

    #[test]
    fn table_json_round_trip() {
        let (catalog, kg) = tiny();
        let cfg = EmbeddingConfig { train_epochs: 1, seed: 5, ..Default::default() };
        let learned = learn_embeddings(&catalog, &kg, &[], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        learned.table.save_json(&path).unwrap();
        assert_eq!(StrategyEmbeddings::load_json(&path, &catalog).unwrap(), learned.table);
        assert!(StrategyEmbeddings::load_json(&path, &Catalog::full()).is_err());
    }
}

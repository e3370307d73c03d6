//! Domain knowledge graph over the catalog.
//!
//! Five entity kinds (strategy, method, hyperparameter, hyperparameter
//! setting, technique) and five forward relations:
//!
//! | relation | head → tail |
//! |----------|-------------|
//! | R1 | strategy → method |
//! | R2 | strategy → setting |
//! | R3 | method → hyperparameter |
//! | R4 | method → technique |
//! | R5 | hyperparameter → setting |

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::catalog::{Catalog, StrategyIdx};
use crate::error::{Error, Result};

const MAX_CORRUPTION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Strategy,
    Method,
    Hyperparameter,
    HpSetting,
    Technique,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Strategy,
        EntityKind::Method,
        EntityKind::Hyperparameter,
        EntityKind::HpSetting,
        EntityKind::Technique,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            EntityKind::Strategy => "E1",
            EntityKind::Method => "E2",
            EntityKind::Hyperparameter => "E3",
            EntityKind::HpSetting => "E4",
            EntityKind::Technique => "E5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entity {
    pub kind: EntityKind,
    pub key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityIdx(pub u32);

impl EntityIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl Relation {
    pub const ALL: [Relation; 5] = [Relation::R1, Relation::R2, Relation::R3, Relation::R4, Relation::R5];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(head kind, tail kind)` required by this relation.
    pub fn signature(self) -> (EntityKind, EntityKind) {
        use EntityKind::*;
        match self {
            Relation::R1 => (Strategy, Method),
            Relation::R2 => (Strategy, HpSetting),
            Relation::R3 => (Method, Hyperparameter),
            Relation::R4 => (Method, Technique),
            Relation::R5 => (Hyperparameter, HpSetting),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityIdx,
    pub relation: Relation,
    pub tail: EntityIdx,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    index: HashMap<(EntityKind, String), EntityIdx>,
    triples: Vec<Triple>,
    truth: HashSet<Triple>,
    pools: [Vec<EntityIdx>; 5],
    strategy_entities: Vec<EntityIdx>,
}

impl KnowledgeGraph {
    /// Builds the graph for `catalog`. Pure: identical catalogs give identical graphs.
    pub fn build(catalog: &Catalog) -> Self {
        let mut entities = Vec::new();
        for s in catalog.strategies() {
            entities.push(Entity { kind: EntityKind::Strategy, key: s.canonical_id.clone() });
        }
        for m in catalog.methods() {
            entities.push(Entity { kind: EntityKind::Method, key: m.id.to_string() });
        }
        for h in catalog.hyperparameters() {
            entities.push(Entity { kind: EntityKind::Hyperparameter, key: h.id.to_string() });
        }
        for h in catalog.hyperparameters() {
            for v in &h.values {
                entities.push(Entity { kind: EntityKind::HpSetting, key: format!("{}={v}", h.id) });
            }
        }
        let mut techniques: Vec<(u32, String)> = catalog
            .methods()
            .iter()
            .flat_map(|m| m.techniques.iter())
            .map(|t| (t.trim_start_matches("TE").parse().unwrap_or(u32::MAX), t.clone()))
            .collect();
        techniques.sort();
        techniques.dedup();
        for (_, t) in techniques {
            entities.push(Entity { kind: EntityKind::Technique, key: t });
        }

        let index: HashMap<(EntityKind, String), EntityIdx> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.kind, e.key.clone()), EntityIdx(i as u32)))
            .collect();
        let id = |kind: EntityKind, key: String| index[&(kind, key)];

        let mut triples = Vec::new();
        for s in catalog.strategies() {
            let head = id(EntityKind::Strategy, s.canonical_id.clone());
            triples.push(Triple { head, relation: Relation::R1, tail: id(EntityKind::Method, s.method.to_string()) });
        }
        for s in catalog.strategies() {
            let head = id(EntityKind::Strategy, s.canonical_id.clone());
            for (hp, token) in &s.assignment {
                triples.push(Triple {
                    head,
                    relation: Relation::R2,
                    tail: id(EntityKind::HpSetting, format!("{hp}={token}")),
                });
            }
        }
        for m in catalog.methods() {
            let head = id(EntityKind::Method, m.id.to_string());
            for hp in &m.hyperparameters {
                triples.push(Triple { head, relation: Relation::R3, tail: id(EntityKind::Hyperparameter, hp.to_string()) });
            }
        }
        for m in catalog.methods() {
            let head = id(EntityKind::Method, m.id.to_string());
            for t in &m.techniques {
                triples.push(Triple { head, relation: Relation::R4, tail: id(EntityKind::Technique, t.clone()) });
            }
        }
        for h in catalog.hyperparameters() {
            let head = id(EntityKind::Hyperparameter, h.id.to_string());
            for v in &h.values {
                triples.push(Triple {
                    head,
                    relation: Relation::R5,
                    tail: id(EntityKind::HpSetting, format!("{}={v}", h.id)),
                });
            }
        }

        Self::from_parts(entities, triples).expect("catalog graph is well-typed")
    }

    /// Assembles a graph from explicit entities and triples, checking relation typing.
    pub fn from_parts(entities: Vec<Entity>, triples: Vec<Triple>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entities.len());
        let mut pools: [Vec<EntityIdx>; 5] = Default::default();
        let mut strategy_entities = Vec::new();
        for (i, e) in entities.iter().enumerate() {
            let idx = EntityIdx(i as u32);
            if index.insert((e.kind, e.key.clone()), idx).is_some() {
                return Err(Error::Data(format!("duplicate entity {} `{}`", e.kind.label(), e.key)));
            }
            pools[e.kind.slot()].push(idx);
            if e.kind == EntityKind::Strategy {
                strategy_entities.push(idx);
            }
        }
        for t in &triples {
            let (hk, tk) = t.relation.signature();
            let head = entities.get(t.head.index());
            let tail = entities.get(t.tail.index());
            match (head, tail) {
                (Some(h), Some(tl)) if h.kind == hk && tl.kind == tk => {}
                _ => return Err(Error::Data(format!("triple {t:?} violates the signature of {}", t.relation))),
            }
        }
        let truth = triples.iter().copied().collect();
        Ok(KnowledgeGraph { entities, index, triples, truth, pools, strategy_entities })
    }

    /// Same entities, with the triples at `removed` positions dropped.
    pub fn without(&self, removed: &HashSet<usize>) -> Self {
        let triples: Vec<Triple> = self
            .triples
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, t)| *t)
            .collect();
        let truth = triples.iter().copied().collect();
        KnowledgeGraph {
            entities: self.entities.clone(),
            index: self.index.clone(),
            triples,
            truth,
            pools: self.pools.clone(),
            strategy_entities: self.strategy_entities.clone(),
        }
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, idx: EntityIdx) -> &Entity {
        &self.entities[idx.index()]
    }

    pub fn find(&self, kind: EntityKind, key: &str) -> Option<EntityIdx> {
        self.index.get(&(kind, key.to_string())).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.truth.contains(t)
    }

    pub fn pool(&self, kind: EntityKind) -> &[EntityIdx] {
        &self.pools[kind.slot()]
    }

    /// Entity of a catalog strategy. Valid for graphs built from a catalog.
    pub fn strategy_entity(&self, s: StrategyIdx) -> EntityIdx {
        self.strategy_entities[s.index()]
    }

    pub fn strategy_entities(&self) -> &[EntityIdx] {
        &self.strategy_entities
    }

    pub fn count(&self, relation: Relation) -> usize {
        self.triples.iter().filter(|t| t.relation == relation).count()
    }

    /// Negative sample for `t`: head or tail (coin flip) replaced by a uniformly
    /// drawn entity of the same kind, never a true triple of this graph.
    pub fn corrupt<R: Rng + ?Sized>(&self, t: &Triple, rng: &mut R) -> Result<Triple> {
        let (hk, tk) = t.relation.signature();
        for _ in 0..MAX_CORRUPTION_ATTEMPTS {
            let mut c = *t;
            if rng.gen::<bool>() {
                let pool = self.pool(hk);
                c.head = pool[rng.gen_range(0..pool.len())];
            } else {
                let pool = self.pool(tk);
                c.tail = pool[rng.gen_range(0..pool.len())];
            }
            if !self.truth.contains(&c) {
                return Ok(c);
            }
        }
        Err(Error::Saturated {
            relation: t.relation.to_string(),
            head: self.entity(t.head).key.clone(),
            tail: self.entity(t.tail).key.clone(),
            attempts: MAX_CORRUPTION_ATTEMPTS,
        })
    }

    /// Tab-separated `head \t relation \t tail` lines.
    pub fn export_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(out, "{}\t{}\t{}", self.entity(t.head).key, t.relation, self.entity(t.tail).key)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relation_counts_full_catalog() {
        let kg = KnowledgeGraph::build(&Catalog::full());
        assert_eq!(kg.count(Relation::R1), 4525);
        assert_eq!(kg.count(Relation::R2), 24025);
        assert_eq!(kg.count(Relation::R3), 26);
        assert_eq!(kg.count(Relation::R4), 10);
        assert_eq!(kg.count(Relation::R5), 59);
        assert_eq!(kg.pool(EntityKind::Technique).len(), 8);
        assert!(kg.find(EntityKind::Technique, "TE8").is_none());
    }

    #[test]
    fn strategy_incidence() {
        let kg = KnowledgeGraph::build(&Catalog::full());
        let s = kg.find(EntityKind::Strategy, "C3|HP1=*0.3|HP2=x0.20|HP6=0.9").unwrap();
        let r1 = kg.triples().iter().filter(|t| t.head == s && t.relation == Relation::R1).count();
        let r2 = kg.triples().iter().filter(|t| t.head == s && t.relation == Relation::R2).count();
        assert_eq!((r1, r2), (1, 3));
    }

    #[test]
    fn signatures_hold() {
        let kg = KnowledgeGraph::build(&Catalog::full());
        for t in kg.triples() {
            let (hk, tk) = t.relation.signature();
            assert_eq!(kg.entity(t.head).kind, hk);
            assert_eq!(kg.entity(t.tail).kind, tk);
        }
    }

    #[test]
    fn corruption_preserves_typing_and_is_false() {
        let kg = KnowledgeGraph::build(&Catalog::full());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = kg.triples()[0];
        for _ in 0..1000 {
            let c = kg.corrupt(&t, &mut rng).unwrap();
            assert_eq!(c.relation, t.relation);
            assert_eq!(kg.entity(c.head).kind, EntityKind::Strategy);
            assert_eq!(kg.entity(c.tail).kind, EntityKind::Method);
            assert!(!kg.contains(&c));
        }
    }

    #[test]
    fn saturated_relation_errors() {
        let entities = vec![
            Entity { kind: EntityKind::Hyperparameter, key: "HP1".into() },
            Entity { kind: EntityKind::HpSetting, key: "HP1=a".into() },
            Entity { kind: EntityKind::HpSetting, key: "HP1=b".into() },
        ];
        let triples = vec![
            Triple { head: EntityIdx(0), relation: Relation::R5, tail: EntityIdx(1) },
            Triple { head: EntityIdx(0), relation: Relation::R5, tail: EntityIdx(2) },
        ];
        let kg = KnowledgeGraph::from_parts(entities, triples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = kg.corrupt(&kg.triples()[0], &mut rng).unwrap_err();
        assert!(matches!(err, Error::Saturated { .. }));
    }

    #[test]
    fn from_parts_rejects_bad_signature() {
        let entities = vec![
            Entity { kind: EntityKind::Method, key: "C1".into() },
            Entity { kind: EntityKind::HpSetting, key: "HP1=a".into() },
        ];
        let triples = vec![Triple { head: EntityIdx(0), relation: Relation::R5, tail: EntityIdx(1) }];
        assert!(KnowledgeGraph::from_parts(entities, triples).is_err());
    }

    #[test]
    fn build_is_pure() {
        let catalog = Catalog::full();
        let a = KnowledgeGraph::build(&catalog);
        let b = KnowledgeGraph::build(&catalog);
        assert_eq!(a.triples(), b.triples());
        assert_eq!(a.entities(), b.entities());
    }

    #[test]
    fn tsv_export() {
        let catalog = Catalog::build(Some(&crate::catalog::CatalogFilter::methods(&["C3"]))).unwrap();
        let kg = KnowledgeGraph::build(&catalog);
        let mut buf = Vec::new();
        kg.export_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), kg.triples().len());
        assert_eq!(text.lines().next().unwrap(), "C3|HP1=*0.1|HP2=x0.04|HP6=0.7\tR1\tC3");
        assert!(text.contains("HP6\tR5\tHP6=0.9"));
    }
}

//! The compression-strategy catalog and the tree-shaped scheme space built on it.
//!
//! Six compression methods, each with a fixed list of hyperparameters. A
//! strategy is one method together with a full hyperparameter assignment; a
//! scheme is an ordered sequence of strategies. Value tokens are kept as
//! verbatim strings and only interpreted numerically by the evaluator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HpId(pub u8);

impl fmt::Display for HpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HP{}", self.0)
    }
}

impl FromStr for HpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix("HP")
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| (1..=16).contains(n))
            .map(HpId)
            .ok_or_else(|| Error::Lookup {
                kind: "hyperparameter",
                key: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MethodId(pub u8);

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('C')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| (1..=6).contains(n))
            .map(MethodId)
            .ok_or_else(|| Error::Lookup {
                kind: "method",
                key: s.to_string(),
            })
    }
}

/// Position of a strategy in its catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StrategyIdx(pub u32);

impl StrategyIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperparameterDef {
    pub id: HpId,
    pub description: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodDef {
    pub id: MethodId,
    pub name: String,
    pub techniques: Vec<String>,
    pub hyperparameters: Vec<HpId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub method: MethodId,
    /// One `(hyperparameter, token)` pair per method hyperparameter, sorted by id.
    pub assignment: Vec<(HpId, String)>,
    pub canonical_id: String,
}

impl Strategy {
    pub fn new(method: MethodId, mut assignment: Vec<(HpId, String)>) -> Self {
        assignment.sort_by_key(|(hp, _)| *hp);
        let mut canonical_id = method.to_string();
        for (hp, token) in &assignment {
            canonical_id.push('|');
            canonical_id.push_str(&format!("{hp}={token}"));
        }
        Strategy {
            method,
            assignment,
            canonical_id,
        }
    }

    pub fn token(&self, hp: HpId) -> Option<&str> {
        self.assignment
            .iter()
            .find(|(id, _)| *id == hp)
            .map(|(_, t)| t.as_str())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_id)
    }
}

// (id, description, value tokens). "×" is written "x"; ratios use two decimals.
const HYPERPARAMETERS: [(u8, &str, &[&str]); 16] = [
    (1, "fine tune epochs", &["*0.1", "*0.2", "*0.3", "*0.4", "*0.5"]),
    (2, "decrease ratio of parameter", &["x0.04", "x0.12", "x0.20", "x0.36", "x0.40"]),
    (3, "LMA's segment number", &["6", "8", "10"]),
    (4, "temperature factor", &["1", "3", "6", "10"]),
    (5, "alpha factor", &["0.05", "0.3", "0.5", "0.99"]),
    (6, "channel's maximum pruning ratio", &["0.7", "0.9"]),
    (7, "evolution epochs", &["*0.4", "*0.5", "*0.6", "*0.7"]),
    (8, "filter's evaluation criteria", &["l1_weight", "l2_weight", "l2_bn", "l2_bn_param"]),
    (9, "back-propagation epochs", &["*0.1", "*0.2", "*0.3", "*0.4", "*0.5"]),
    (10, "update frequency", &["1", "3", "5"]),
    (11, "global evaluation criteria", &["P1", "P2", "P3"]),
    (12, "global evaluation criteria", &["l1norm", "k34", "skew_kur"]),
    (13, "optimization epochs", &["*0.3", "*0.4", "*0.5"]),
    (14, "MSE loss's factor", &["1", "3", "5"]),
    (15, "auxiliary MSE loss's factor", &["0.5", "1", "1.5", "3", "5"]),
    (16, "auxiliary loss", &["NLL", "CE", "MSE"]),
];

// (id, name, techniques, hyperparameters)
const METHODS: [(u8, &str, &[&str], &[u8]); 6] = [
    (1, "LMA", &["TE1"], &[1, 2, 3, 4, 5]),
    (2, "LeGR", &["TE2", "TE3"], &[1, 2, 6, 7, 8]),
    (3, "NS", &["TE4", "TE3"], &[1, 2, 6]),
    (4, "SFP", &["TE5"], &[2, 9, 10]),
    (5, "HOS", &["TE6", "TE7", "TE3"], &[1, 2, 11, 12, 13, 14]),
    (6, "LFB", &["TE9"], &[1, 2, 15, 16]),
];

/// Whitelist restricting the catalog to a subset of methods and value tokens.
///
/// ```json
/// {"methods": ["C3","C4"], "hp_values": {"HP2": ["x0.04","x0.20"]}}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFilter {
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    #[serde(default)]
    pub hp_values: BTreeMap<String, Vec<String>>,
}

impl CatalogFilter {
    pub fn methods(ids: &[&str]) -> Self {
        CatalogFilter {
            methods: Some(ids.iter().map(|s| s.to_string()).collect()),
            hp_values: BTreeMap::new(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("catalog filter {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    hyperparameters: Vec<HyperparameterDef>,
    methods: Vec<MethodDef>,
    strategies: Vec<Strategy>,
    by_id: HashMap<String, StrategyIdx>,
}

impl Catalog {
    /// The complete, unfiltered catalog (4,525 strategies).
    pub fn full() -> Self {
        Self::build(None).expect("compiled-in catalog is valid")
    }

    pub fn build(filter: Option<&CatalogFilter>) -> Result<Self> {
        let mut hp_defs: Vec<HyperparameterDef> = HYPERPARAMETERS
            .iter()
            .map(|(id, description, values)| HyperparameterDef {
                id: HpId(*id),
                description: description.to_string(),
                values: values.iter().map(|v| v.to_string()).collect(),
            })
            .collect();
        let mut methods: Vec<MethodDef> = METHODS
            .iter()
            .map(|(id, name, techniques, hps)| MethodDef {
                id: MethodId(*id),
                name: name.to_string(),
                techniques: techniques.iter().map(|t| t.to_string()).collect(),
                hyperparameters: hps.iter().map(|&h| HpId(h)).collect(),
            })
            .collect();

        if let Some(filter) = filter {
            if let Some(keep) = &filter.methods {
                let mut wanted = HashSet::new();
                for key in keep {
                    let id: MethodId = key
                        .parse()
                        .map_err(|_| Error::Config(format!("unknown method `{key}` in catalog filter")))?;
                    if !wanted.insert(id) {
                        return Err(Error::Config(format!("duplicate method `{key}` in catalog filter")));
                    }
                }
                methods.retain(|m| wanted.contains(&m.id));
            }
            for (key, tokens) in &filter.hp_values {
                let id: HpId = key
                    .parse()
                    .map_err(|_| Error::Config(format!("unknown hyperparameter `{key}` in catalog filter")))?;
                let def = &mut hp_defs[id.0 as usize - 1];
                let mut seen = HashSet::new();
                for token in tokens {
                    if !seen.insert(token.as_str()) {
                        return Err(Error::Config(format!(
                            "duplicate value token `{token}` for {key} in catalog filter"
                        )));
                    }
                    if !def.values.contains(token) {
                        return Err(Error::Config(format!(
                            "unknown value token `{token}` for {key} in catalog filter"
                        )));
                    }
                }
                if seen.is_empty() {
                    return Err(Error::Config(format!("empty value list for {key} in catalog filter")));
                }
                def.values.retain(|v| seen.contains(v.as_str()));
            }
        }

        let used: HashSet<HpId> = methods
            .iter()
            .flat_map(|m| m.hyperparameters.iter().copied())
            .collect();
        hp_defs.retain(|h| used.contains(&h.id));

        let mut strategies = Vec::new();
        for method in &methods {
            let defs: Vec<&HyperparameterDef> = method
                .hyperparameters
                .iter()
                .map(|id| hp_defs.iter().find(|h| h.id == *id).expect("retained"))
                .collect();
            // Odometer over value indices, first hyperparameter most significant.
            let mut digits = vec![0usize; defs.len()];
            'odometer: loop {
                let assignment = defs
                    .iter()
                    .zip(&digits)
                    .map(|(def, &i)| (def.id, def.values[i].clone()))
                    .collect();
                strategies.push(Strategy::new(method.id, assignment));

                let mut pos = defs.len();
                loop {
                    if pos == 0 {
                        break 'odometer;
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < defs[pos].values.len() {
                        break;
                    }
                    digits[pos] = 0;
                }
            }
        }

        let mut by_id = HashMap::with_capacity(strategies.len());
        for (i, s) in strategies.iter().enumerate() {
            if by_id.insert(s.canonical_id.clone(), StrategyIdx(i as u32)).is_some() {
                return Err(Error::Internal(format!("duplicate canonical id {}", s.canonical_id)));
            }
        }

        Ok(Catalog {
            hyperparameters: hp_defs,
            methods,
            strategies,
            by_id,
        })
    }

    pub fn from_filter_path(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::build(Some(&CatalogFilter::from_path(p)?)),
            None => Ok(Self::full()),
        }
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    pub fn strategy(&self, idx: StrategyIdx) -> &Strategy {
        &self.strategies[idx.index()]
    }

    pub fn indices(&self) -> impl DoubleEndedIterator<Item = StrategyIdx> + ExactSizeIterator {
        (0..self.strategies.len() as u32).map(StrategyIdx)
    }

    pub fn methods(&self) -> &[MethodDef] {
        &self.methods
    }

    pub fn hyperparameters(&self) -> &[HyperparameterDef] {
        &self.hyperparameters
    }

    pub fn method(&self, id: MethodId) -> Option<&MethodDef> {
        self.methods.iter().find(|m| m.id == id)
    }

    pub fn hyperparameter(&self, id: HpId) -> Option<&HyperparameterDef> {
        self.hyperparameters.iter().find(|h| h.id == id)
    }

    pub fn lookup(&self, canonical_id: &str) -> Result<StrategyIdx> {
        self.by_id.get(canonical_id).copied().ok_or_else(|| Error::Lookup {
            kind: "strategy",
            key: canonical_id.to_string(),
        })
    }

    /// Reconstructs a strategy from its canonical id, validating every field
    /// against this catalog's method and hyperparameter definitions.
    pub fn parse_strategy(&self, canonical_id: &str) -> Result<Strategy> {
        let bad = || Error::Lookup {
            kind: "strategy",
            key: canonical_id.to_string(),
        };
        let mut parts = canonical_id.split('|');
        let method_id: MethodId = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let method = self.method(method_id).ok_or_else(bad)?;
        let mut assignment = Vec::new();
        for part in parts {
            let (hp, token) = part.split_once('=').ok_or_else(bad)?;
            let hp: HpId = hp.parse().map_err(|_| bad())?;
            let def = self.hyperparameter(hp).ok_or_else(bad)?;
            if !def.values.iter().any(|v| v == token) {
                return Err(bad());
            }
            assignment.push((hp, token.to_string()));
        }
        let mut ids: Vec<HpId> = assignment.iter().map(|(h, _)| *h).collect();
        ids.sort();
        if ids != method.hyperparameters {
            return Err(bad());
        }
        Ok(Strategy::new(method_id, assignment))
    }

    /// Per-method strategy counts, in catalog order.
    pub fn counts_by_method(&self) -> Vec<(MethodId, usize)> {
        self.methods
            .iter()
            .map(|m| (m.id, self.strategies.iter().filter(|s| s.method == m.id).count()))
            .collect()
    }

    pub fn scheme_ids(&self, scheme: &Scheme) -> Vec<String> {
        scheme
            .steps()
            .iter()
            .map(|&i| self.strategy(i).canonical_id.clone())
            .collect()
    }

    pub fn scheme_from_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Scheme> {
        ids.iter()
            .map(|id| self.lookup(id.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(Scheme::from_steps)
    }

    /// Human-readable scheme label: `START` or canonical ids joined by `>`.
    pub fn scheme_label(&self, scheme: &Scheme) -> String {
        if scheme.is_start() {
            "START".to_string()
        } else {
            self.scheme_ids(scheme).join(">")
        }
    }

    pub fn parse_scheme_label(&self, label: &str) -> Result<Scheme> {
        if label == "START" {
            return Ok(Scheme::start());
        }
        let ids: Vec<&str> = label.split('>').collect();
        self.scheme_from_ids(&ids)
    }
}

/// An ordered sequence of strategies; the empty scheme is the START node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scheme {
    steps: Vec<StrategyIdx>,
}

impl Scheme {
    pub fn start() -> Self {
        Scheme::default()
    }

    pub fn from_steps(steps: Vec<StrategyIdx>) -> Self {
        Scheme { steps }
    }

    pub fn steps(&self) -> &[StrategyIdx] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_start(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<StrategyIdx> {
        self.steps.last().copied()
    }

    pub fn child(&self, next: StrategyIdx) -> Scheme {
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.extend_from_slice(&self.steps);
        steps.push(next);
        Scheme { steps }
    }
}

/// Children of `scheme` in the search tree, one per strategy in `options`.
/// Schemes already at `max_len` are leaves.
pub fn scheme_children(
    scheme: &Scheme,
    options: impl IntoIterator<Item = StrategyIdx>,
    max_len: usize,
) -> Vec<(Scheme, StrategyIdx)> {
    if scheme.len() >= max_len {
        return Vec::new();
    }
    options.into_iter().map(|s| (scheme.child(s), s)).collect()
}

/// Number of schemes of length at most `max_len` over `n_strategies`:
/// `sum_{l=0}^{max_len} n^l`.
pub fn space_size(n_strategies: u64, max_len: u32) -> BigUint {
    let n = BigUint::from(n_strategies);
    let mut term = BigUint::from(1u32);
    let mut total = BigUint::from(0u32);
    for _ in 0..=max_len {
        total += &term;
        term *= &n;
    }
    total
}

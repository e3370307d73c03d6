//! Exhaustive enumeration of a small scheme space.

use num_bigint::BigUint;

use super::{constrained_front, hypervolume, ParetoPoint};
use crate::catalog::{space_size, Catalog, Scheme};
use crate::error::{Error, Result};
use crate::evaluation::{Evaluator, ModelState};

pub const DEFAULT_LIMIT: u64 = 100_000;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub evaluations: usize,
    pub front: Vec<ParetoPoint>,
    pub hypervolume: f64,
    pub base_state: ModelState,
}

/// Evaluates every scheme of length at most `max_len` and returns the
/// constrained front. Refuses spaces larger than `limit`.
pub fn enumerate<E: Evaluator + ?Sized>(
    catalog: &Catalog,
    evaluator: &E,
    max_len: usize,
    gamma: f64,
    limit: u64,
) -> Result<OracleResult> {
    let size = space_size(catalog.len() as u64, max_len as u32);
    if size > BigUint::from(limit) {
        return Err(Error::Config(format!(
            "search space holds {size} schemes (sum of {}^l for l = 0..={max_len}), above the oracle limit of {limit}",
            catalog.len()
        )));
    }
    let base = evaluator.base_state();
    let mut points = Vec::new();
    let mut stack = vec![(Scheme::start(), base)];
    while let Some((scheme, state)) = stack.pop() {
        if scheme.len() < max_len {
            for s in catalog.indices().rev() {
                let next = evaluator.extend(&scheme, &state, s)?;
                stack.push((scheme.child(s), next));
            }
        }
        points.push(ParetoPoint::new(scheme, &state, &base));
    }
    let front = constrained_front(&points, gamma);
    let pts: Vec<(f64, f64)> = front.iter().map(|p| p.objectives()).collect();
    Ok(OracleResult { evaluations: points.len(), hypervolume: hypervolume(&pts, base.params), front, base_state: base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogFilter;
    use crate::evaluation::{EvaluatorConfig, SimulatedEvaluator};

    fn sim(catalog: &Catalog) -> SimulatedEvaluator<'_> {
        let cfg = EvaluatorConfig { seed: 1, base_state: ModelState::new(9e5, 2.7e8, 0.9104), pretrain_epochs: 200 };
        SimulatedEvaluator::new(catalog, cfg).unwrap()
    }

    #[test]
    fn length_zero_is_start_only() {
        let catalog = Catalog::full();
        let r = enumerate(&catalog, &sim(&catalog), 0, 0.0, DEFAULT_LIMIT).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.front.len(), 1);
    }

    #[test]
    fn refuses_full_space() {
        let catalog = Catalog::full();
        let err = enumerate(&catalog, &sim(&catalog), 5, 0.3, DEFAULT_LIMIT).unwrap_err();
        assert!(err.to_string().contains(&space_size(4525, 5).to_string()), "{err}");
    }

    #[test]
    fn small_space_count() {
        let catalog = Catalog::build(Some(&CatalogFilter::methods(&["C3"]))).unwrap();
        let r = enumerate(&catalog, &sim(&catalog), 2, 0.3, DEFAULT_LIMIT).unwrap();
        assert_eq!(r.evaluations, 1 + 50 + 2500);
        assert!(r.front.iter().all(|p| p.pr >= 0.3));
    }
}

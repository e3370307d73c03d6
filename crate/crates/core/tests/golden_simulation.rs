//! Simulator trajectory frozen from the scalar reference in `oracles/sim_reference.py`.

use compsearch::catalog::Catalog;
use compsearch::evaluation::{simulate_step, EvaluatorConfig, ModelState};

const ID: &str = "C3|HP1=*0.3|HP2=x0.20|HP6=0.9";

// (params, flops, accuracy, consumed_finetune) after each application.
const GOLDEN: [[u64; 4]; 3] = [
    [0x4125f90000000000, 0x41a9bfcc00000000, 0x3fec5ad72521edbf, 0x3fd3333333333333],
    [0x4121940000000000, 0x41a4997000000000, 0x3feb84e69d37c79c, 0x3fe3333333333333],
    [0x411c200000000000, 0x41a07ac000000000, 0x3feaa912d766a122, 0x3feccccccccccccc],
];

#[test]
fn seed_42_trajectory_is_bit_exact() {
    let catalog = Catalog::full();
    let s = catalog.strategy(catalog.lookup(ID).unwrap());
    let cfg = EvaluatorConfig { seed: 42, base_state: ModelState::new(9e5, 2.7e8, 0.9104), pretrain_epochs: 200 };
    let mut state = cfg.base_state;
    for expected in GOLDEN {
        state = simulate_step(&state, s, &cfg).unwrap();
        let got = [state.params, state.flops, state.accuracy, state.consumed_finetune].map(f64::to_bits);
        assert_eq!(got, expected, "state {state:?}");
    }
}

#[test]
fn params_never_increase() {
    let catalog = Catalog::full();
    let cfg = EvaluatorConfig { seed: 5, base_state: ModelState::new(9e5, 2.7e8, 0.9104), pretrain_epochs: 200 };
    let mut state = cfg.base_state;
    for i in (0..catalog.len()).step_by(97) {
        let next = simulate_step(&state, &catalog.strategies()[i], &cfg).unwrap();
        assert!(next.params < state.params);
        assert!(next.flops <= state.flops);
        assert!((0.0..=1.0).contains(&next.accuracy));
        state = next;
    }
}

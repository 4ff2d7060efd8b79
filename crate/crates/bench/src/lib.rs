//! Fixtures shared by the benchmarks in `benches/`.

use relaypc::presets::{desk, tiny};
use relaypc::{Anchor, Dltpc, DltpcConfig, Environment, LearningRate};

/// Desk-scale environment started at its full-buffer, full-battery state.
pub fn desk_env(seed: u64) -> Environment {
    let (p, m) = desk(0.4);
    let batteries = p.battery_capacity.clone();
    Environment::new(p.clone(), m, seed, p.buffer_capacity, batteries)
        .expect("desk preset is valid")
}

/// Learner for [`desk_env`] with a constant step and a mid-buffer anchor.
pub fn desk_learner(seed: u64) -> Dltpc {
    let (p, m) = desk(0.4);
    let mut cfg = DltpcConfig::new(&p);
    cfg.anchor = Anchor::uniform(&p, 2, 0);
    cfg.schedule = LearningRate::Constant { value: 0.001 };
    Dltpc::new(&p, m.num_bins(), cfg, seed).expect("desk learner is valid")
}

/// Anchor at the full state of the tiny instance.
pub fn tiny_anchor() -> Anchor {
    Anchor::full(&tiny().0)
}

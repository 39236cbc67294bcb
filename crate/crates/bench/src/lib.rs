//! Shared instance builders for the benchmarks.

use evcoord_core::model::{self, CumulativeBounds};
use evcoord_core::{oracles, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HORIZON: usize = 168;

/// `count` S1 instances from generated EVs with some trip demand.
pub fn s1_instances(count: usize, seed: u64) -> Result<Vec<(CumulativeBounds, Vec<f64>)>> {
    oracles::sampled_s1_instances(count, HORIZON, 1.0, seed)
}

/// Bounds paired with targets well outside the power box, so the greedy
/// projection has to move most slots.
pub fn projection_targets(count: usize, seed: u64) -> Result<Vec<(CumulativeBounds, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(s1_instances(count, seed)?
        .into_iter()
        .map(|(b, _)| {
            let target = (0..b.horizon()).map(|_| rng.random_range(-20.0..30.0)).collect();
            (b, target)
        })
        .collect())
}

/// Consensus-step instances `(target, capacity, ϱ)`.
pub fn feeder_instances(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| oracles::random_feeder_instance(&mut rng, HORIZON))
        .collect()
}

/// Largest constraint violation over a batch, so the benchmarked work cannot
/// be optimised away.
pub fn worst_violation(schedules: &[Vec<f64>], bounds: &[&CumulativeBounds]) -> f64 {
    schedules
        .iter()
        .zip(bounds)
        .map(|(p, b)| model::max_violation(p, b))
        .fold(0.0, f64::max)
}

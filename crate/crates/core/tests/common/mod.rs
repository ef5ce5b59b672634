#![allow(dead_code)]

use std::sync::Arc;

use nhmart::random::{random_function, random_lattice, RandomShape};
use nhmart::{Lattice, StepFunction};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lattice_from_seed(seed: u64, max_depth: usize) -> Arc<Lattice> {
    let mut r = rng(seed);
    let roots = 1 + (seed % 2) as usize;
    Arc::new(random_lattice(
        &mut r,
        RandomShape {
            roots,
            max_depth,
            ..Default::default()
        },
    ))
}

/// Random lattice plus a random function on it.
pub fn pair_from_seed(seed: u64, max_depth: usize) -> (Arc<Lattice>, StepFunction) {
    let lat = lattice_from_seed(seed, max_depth);
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let f = random_function(&lat, &mut r);
    (lat, f)
}

pub fn seeds() -> impl Strategy<Value = u64> {
    any::<u64>()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

//! Random lattices and functions for property tests and the CLI.

use std::sync::Arc;

use rand::Rng;

use crate::lattice::{Lattice, NodeSpec};
use crate::mfunc::StepFunction;
use crate::num::Real;

/// Shape of [`random_lattice`].
#[derive(Clone, Copy, Debug)]
pub struct RandomShape {
    pub roots: usize,
    pub max_depth: usize,
    pub max_children: usize,
    /// Probability that a node above `max_depth` is split.
    pub split: f64,
}

impl Default for RandomShape {
    fn default() -> Self {
        RandomShape {
            roots: 1,
            max_depth: 6,
            max_children: 4,
            split: 0.6,
        }
    }
}

/// Random forest with uneven child measures; the first node always splits.
pub fn random_lattice<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: RandomShape) -> Lattice<T> {
    let mut specs: Vec<NodeSpec<T>> = Vec::new();
    let mut stack: Vec<(i64, usize, f64)> = Vec::new();
    for _ in 0..shape.roots.max(1) {
        let id = specs.len() as i64;
        let m = rng.gen_range(0.5..2.0);
        specs.push(NodeSpec::new(id, None, T::lit(m)));
        stack.push((id, 0, m));
    }
    let mut first = true;
    while let Some((id, depth, m)) = stack.pop() {
        if depth >= shape.max_depth || !(first || rng.gen_bool(shape.split)) {
            continue;
        }
        first = false;
        let k = rng.gen_range(2..=shape.max_children.max(2));
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut children = Vec::with_capacity(k);
        for wi in w {
            let cid = specs.len() as i64;
            let cm = m * wi / total;
            specs.push(NodeSpec::new(cid, Some(id), T::lit(cm)));
            children.push((cid, depth + 1, cm));
        }
        stack.extend(children.into_iter().rev());
    }
    Lattice::assemble(&specs).expect("random lattice is valid")
}

/// Leaf values uniform in `[-1, 1]`.
pub fn random_function<T: Real, R: Rng + ?Sized>(lat: &Arc<Lattice<T>>, rng: &mut R) -> StepFunction<T> {
    let v = (0..lat.num_leaves()).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    StepFunction::new(lat.clone(), v).expect("finite")
}

/// Nonnegative leaf values with occasional large spikes.
pub fn random_nonnegative<T: Real, R: Rng + ?Sized>(lat: &Arc<Lattice<T>>, rng: &mut R) -> StepFunction<T> {
    let v = (0..lat.num_leaves())
        .map(|_| {
            let x: f64 = rng.gen_range(0.0..1.0);
            T::lit(if rng.gen_bool(0.1) { x * 100.0 } else { x })
        })
        .collect();
    StepFunction::new(lat.clone(), v).expect("finite")
}

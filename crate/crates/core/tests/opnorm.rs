mod common;

use std::sync::Arc;

use nalgebra::DMatrix;
use nhmart::gspace::carleson_operator;
use nhmart::opnorm::{indicator_lower, norm_2, norm_p};
use nhmart::paraprod::{assemble, commutator};
use nhmart::{uniform_radic, CoefSequence, Lattice, LinearOp, Matrix, NodeSpec, ParaKind, StepFunction};
use proptest::prelude::*;
use rand::Rng;

/// Root with `n` children of random measure.
fn flat_lattice(rng: &mut impl Rng, n: usize) -> Arc<Lattice> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut specs = vec![NodeSpec::new(0, None, total)];
    specs.extend(w.iter().enumerate().map(|(i, &m)| NodeSpec::new(i as i64 + 1, Some(0), m)));
    Arc::new(Lattice::assemble(&specs).unwrap())
}

fn random_op(rng: &mut impl Rng, lat: &Arc<Lattice>) -> LinearOp {
    let n = lat.num_leaves();
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    LinearOp::new(lat.clone(), m).unwrap()
}

fn weighted_lp(v: &[f64], w: &[f64], p: f64) -> f64 {
    v.iter().zip(w).map(|(x, m)| x.abs().powf(p) * m).sum::<f64>().powf(1.0 / p)
}

fn ratio(a: &LinearOp, x: &[f64], p: f64) -> f64 {
    let w = a.lattice().leaf_measures();
    weighted_lp(&a.matrix().matvec(x), &w, p) / weighted_lp(x, &w, p)
}

#[test]
fn examples() {
    let lat: Arc<Lattice> = Arc::new(uniform_radic(2, 2, 1.0).unwrap());
    let id = LinearOp::identity(lat.clone());
    assert!((norm_2(&id) - 1.0).abs() < 1e-14);
    assert!((indicator_lower(&id, 3.0) - 1.0).abs() < 1e-14);
    for p in [1.3, 2.0, 5.0] {
        let r = norm_p(&id, p, 4, 1).unwrap();
        assert!((r.lower_bound - 1.0).abs() < 1e-12 && (r.estimate - 1.0).abs() < 1e-12);
    }

    let two: Arc<Lattice> = Arc::new(uniform_radic(2, 1, 1.0).unwrap());
    let d = LinearOp::new(two.clone(), Matrix::diagonal(&[2.0, 1.0])).unwrap();
    assert!((norm_2(&d) - 2.0).abs() < 1e-14);

    // f ↦ ⟨f⟩ on the measure-1 root
    let avg = LinearOp::from_action(lat.clone(), |v| {
        let m = 0.25 * v.iter().sum::<f64>();
        vec![m; v.len()]
    });
    for p in [1.5, 2.0, 4.0] {
        let r = norm_p(&avg, p, 8, 2).unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-9, "{p}: {}", r.estimate);
    }

    let zero = LinearOp::new(lat.clone(), Matrix::zeros(4, 4)).unwrap();
    let r = norm_p(&zero, 3.0, 4, 1).unwrap();
    assert_eq!((r.lower_bound, r.estimate), (0.0, 0.0));
    assert!(r.witness.iter().all(|&v| v == 0.0));
    assert!(norm_p(&id, 1.0, 4, 1).is_err());
}

#[test]
fn indicator_examples() {
    let two: Arc<Lattice> = Arc::new(uniform_radic(2, 1, 1.0).unwrap());
    let h = StepFunction::new(two.clone(), vec![1.0, -1.0]).unwrap();
    let pi = assemble(ParaKind::Pi, &h, &two).unwrap();
    assert!((indicator_lower(&pi, 2.0) - 1.0).abs() < 1e-14);

    let lat: Arc<Lattice> = Arc::new(uniform_radic(2, 3, 1.0).unwrap());
    let car = carleson_operator(&CoefSequence::constant(lat, 1.0)).to_slot_op();
    assert!((car.indicator_lower(2.0, 2.0) - 2.0).abs() < 1e-12);
}

#[test]
fn svd_oracle() {
    let mut rng = common::rng(21);
    for _ in 0..100 {
        let lat = flat_lattice(&mut rng, 5);
        let a = random_op(&mut rng, &lat);
        let w = lat.leaf_measures();
        let scaled = DMatrix::from_fn(5, 5, |i, j| w[i].sqrt() * a.matrix().row(i)[j] / w[j].sqrt());
        let top = scaled.singular_values().max();
        assert!((norm_2(&a) - top).abs() <= 1e-10 * top, "{} vs {top}", norm_2(&a));
    }
}

#[test]
fn random_search_oracle() {
    let mut rng = common::rng(33);
    for seed in 0..8 {
        let lat = flat_lattice(&mut rng, 6);
        let a = random_op(&mut rng, &lat);
        let rep = norm_p(&a, 3.0, 32, seed).unwrap();
        let mut best: f64 = 0.0;
        for _ in 0..100_000 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            best = best.max(ratio(&a, &x, 3.0));
        }
        assert!(best <= rep.estimate + 1e-6, "{best} > {}", rep.estimate);
    }
}

#[test]
fn deterministic_under_seed() {
    let mut rng = common::rng(1);
    let lat = flat_lattice(&mut rng, 7);
    let a = random_op(&mut rng, &lat);
    let r1 = norm_p(&a, 1.7, 16, 99).unwrap();
    let r2 = norm_p(&a, 1.7, 16, 99).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.seed, 99);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn p2_estimate_is_exact(seed in common::seeds()) {
        let lat = common::lattice_from_seed(seed, 4);
        let mut rng = common::rng(seed);
        let a = random_op(&mut rng, &lat);
        let exact = norm_2(&a);
        let rep = norm_p(&a, 2.0, 8, seed).unwrap();
        prop_assert!((rep.estimate - exact).abs() <= 1e-8 * exact);
    }

    #[test]
    fn report_invariants(seed in common::seeds(), p in 1.1f64..6.0) {
        let lat = common::lattice_from_seed(seed, 4);
        let mut rng = common::rng(seed);
        let a = random_op(&mut rng, &lat);
        let rep = norm_p(&a, p, 8, seed).unwrap();
        prop_assert!(rep.lower_bound <= rep.estimate);
        prop_assert!(indicator_lower(&a, p) <= rep.lower_bound * (1.0 + 1e-12));
        let again = ratio(&a, &rep.witness, p);
        prop_assert!((again - rep.lower_bound).abs() <= 1e-9 * rep.lower_bound);
    }

    #[test]
    fn commutator_submultiplicative(seed in common::seeds(), p in 1.2f64..5.0) {
        let mut rng = common::rng(seed);
        let lat = flat_lattice(&mut rng, 6);
        let a = random_op(&mut rng, &lat);
        let b = random_op(&mut rng, &lat);
        let c = commutator(&a, &b).unwrap();
        let na = norm_p(&a, p, 16, seed).unwrap().estimate;
        let nb = norm_p(&b, p, 16, seed).unwrap().estimate;
        let nc = norm_p(&c, p, 16, seed).unwrap().estimate;
        prop_assert!(nc <= 2.0 * na * nb * (1.0 + 1e-6));
    }
}

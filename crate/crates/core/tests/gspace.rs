mod common;

use std::sync::Arc;

use nhmart::experiments::gen_bmo_divergent;
use nhmart::gspace::{
    bmoq_norm, carleson_operator, coordinate_projection, embedding_test, flatten, ginf_norm, gpq_norm, pairing,
};
use nhmart::mfunc::{decompose, hpq_norm};
use nhmart::{uniform_radic, CoefSequence, Lattice, NodeId, StepFunction};
use proptest::prelude::*;
use rand::Rng;

fn dyadic(depth: usize) -> Arc<Lattice> {
    Arc::new(uniform_radic(2, depth, 1.0).unwrap())
}

fn random_sequence(lat: &Arc<Lattice>, seed: u64, density: f64) -> CoefSequence {
    let mut rng = common::rng(seed);
    let mut entries = Vec::new();
    for id in lat.nodes() {
        if rng.gen_bool(density) {
            entries.push((id, rng.gen_range(-2.0..2.0)));
        }
    }
    CoefSequence::from_entries(lat.clone(), entries).unwrap()
}

/// `Σ_{I ∋ leaf} |s_I|^q` by walking ancestors.
fn leaf_sums(lat: &Lattice, s: &CoefSequence, q: f64, below: Option<NodeId>) -> Vec<f64> {
    lat.leaves()
        .iter()
        .map(|&leaf| {
            lat.ancestors_or_self(leaf)
                .filter(|&a| below.is_none_or(|top| lat.contains(top, a)))
                .map(|a| s.get(a).abs().powf(q))
                .sum()
        })
        .collect()
}

fn gpq_oracle(s: &CoefSequence, p: f64, q: f64) -> f64 {
    let lat = s.lattice();
    let m = lat.leaf_measures();
    let sum: f64 = leaf_sums(lat, s, q, None)
        .iter()
        .zip(&m)
        .map(|(v, w)| v.powf(p / q) * w)
        .sum();
    sum.powf(1.0 / p)
}

fn ginf_oracle(s: &CoefSequence, q: f64, r: f64) -> f64 {
    let lat = s.lattice();
    let m = lat.leaf_measures();
    let mut best: f64 = 0.0;
    for top in lat.nodes() {
        let sums = leaf_sums(lat, s, q, Some(top));
        let range = lat.leaf_range(top);
        let integral: f64 = range.clone().map(|i| sums[i].powf(r / q) * m[i]).sum();
        best = best.max(integral / lat.measure(top));
    }
    best.powf(1.0 / r)
}

#[test]
fn pairing_examples() {
    let lat = dyadic(1);
    let root = lat.roots()[0];
    let [l, r] = [lat.children(root)[0], lat.children(root)[1]];
    let one = CoefSequence::from_entries(lat.clone(), [(root, 1.0)]).unwrap();
    assert_eq!(pairing(&one, &one).unwrap(), 1.0);
    let a = CoefSequence::from_entries(lat.clone(), [(l, 3.0)]).unwrap();
    let b = CoefSequence::from_entries(lat.clone(), [(r, 5.0)]).unwrap();
    assert_eq!(pairing(&a, &b).unwrap(), 0.0);
    let ones = CoefSequence::constant(lat.clone(), 1.0);
    assert_eq!(pairing(&ones, &ones).unwrap(), 2.0);
    let other = CoefSequence::constant(dyadic(2), 1.0);
    assert!(pairing(&ones, &other).is_err());
}

#[test]
fn ginf_examples() {
    let lat = dyadic(2);
    let s = CoefSequence::from_entries(lat.clone(), [(lat.roots()[0], 1.0)]).unwrap();
    assert!((ginf_norm(&s, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
    for depth in [0, 1, 3, 6] {
        let s = CoefSequence::constant(dyadic(depth), 1.0);
        let want = ((depth + 1) as f64).sqrt();
        assert!((ginf_norm(&s, 2.0, 2.0).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn bmo_examples() {
    let f = StepFunction::new(dyadic(1), vec![1.0, -1.0]).unwrap();
    let (a, b) = bmoq_norm(&decompose(&f), 2.0, 2.0).unwrap();
    assert!((a - 1.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
    let (a, b) = bmoq_norm(&nhmart::MartDecomp::zeros(dyadic(2)), 2.0, 2.0).unwrap();
    assert_eq!((a, b), (0.0, 0.0));

    let (_, d) = gen_bmo_divergent::<f64>(10).unwrap();
    let (a, b) = bmoq_norm(&d, 2.0, 2.0).unwrap();
    let want = (1..=10).map(|m| (2.0 - 2f64.powi(1 - m)).sqrt()).fold(0.0, f64::max);
    assert!((a - want).abs() < 1e-12, "{a} vs {want}");
    assert!(a < 2f64.sqrt());
    assert_eq!(b, 1.0);
}

#[test]
fn carleson_examples() {
    let lat = dyadic(2);
    let root = lat.roots()[0];
    let mut rng = common::rng(5);
    let f = nhmart::random::random_function(&lat, &mut rng);

    let alpha = CoefSequence::from_entries(lat.clone(), [(root, 1.0)]).unwrap();
    let out = carleson_operator(&alpha).apply(&f).unwrap();
    let mean: f64 = f.values().iter().zip(lat.leaf_measures()).map(|(v, m)| v * m).sum();
    assert_eq!(out.entries().len(), 1);
    assert!((out.get(root) - mean).abs() < 1e-15);

    // brute-force averages against the operator on all-ones alpha
    let ones = CoefSequence::constant(lat.clone(), 1.0);
    let out = carleson_operator(&ones).apply(&f).unwrap();
    let m = lat.leaf_measures();
    for id in lat.nodes() {
        let r = lat.leaf_range(id);
        let avg: f64 = r.clone().map(|i| f.values()[i] * m[i]).sum::<f64>() / lat.measure(id);
        assert!((out.get(id) - avg).abs() < 1e-14);
    }

    let node = lat.children(root)[1];
    let ind = StepFunction::indicator(lat.clone(), node);
    let alpha = random_sequence(&lat, 8, 1.0);
    let out = carleson_operator(&alpha).apply(&ind).unwrap();
    for id in lat.subtree(node) {
        assert!((out.get(id) - alpha.get(id)).abs() < 1e-15);
    }
}

#[test]
fn embedding_examples() {
    let lat = dyadic(3);
    let alpha = CoefSequence::from_entries(lat.clone(), [(lat.roots()[0], 1.0)]).unwrap();
    let rep = embedding_test(&alpha, 2.0, 2.0, 8, 1).unwrap();
    assert!((rep.k - 1.0).abs() < 1e-12);
    assert!((rep.estimate - 1.0).abs() < 1e-9);

    let ones = CoefSequence::constant(lat.clone(), 1.0);
    let rep = embedding_test(&ones, 2.0, 2.0, 8, 1).unwrap();
    assert!((rep.k - 2.0).abs() < 1e-12);
    assert!(rep.lower_bound >= 2.0 - 1e-12 && rep.estimate <= 4.0 + 1e-6);

    let leaf = lat.leaves()[5];
    let alpha = CoefSequence::from_entries(lat.clone(), [(leaf, -2.5)]).unwrap();
    let rep = embedding_test(&alpha, 3.0, 2.0, 8, 1).unwrap();
    assert!((rep.estimate - 2.5).abs() < 1e-9, "{}", rep.estimate);
}

#[test]
fn ginf_r_equivalence_is_logged() {
    let mut worst: f64 = 1.0;
    for seed in 0..50 {
        let lat = common::lattice_from_seed(seed, 5);
        let s = random_sequence(&lat, seed, 0.6);
        let (a, b) = (ginf_norm(&s, 2.0, 1.0).unwrap(), ginf_norm(&s, 2.0, 4.0).unwrap());
        if a > 0.0 {
            worst = worst.max(b / a);
        }
    }
    eprintln!("ginf r=4 / r=1 worst ratio {worst:.3}");
    assert!(worst.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn norms_match_oracles(seed in common::seeds(), p in 1.0f64..4.0, q in 1.0f64..4.0, r in 1.0f64..4.0) {
        let lat = common::lattice_from_seed(seed, 5);
        let s = random_sequence(&lat, seed, 0.5);
        let g = gpq_norm(&s, p, q).unwrap();
        let go = gpq_oracle(&s, p, q);
        prop_assert!((g - go).abs() <= 1e-12 * go.max(1.0));
        let h = ginf_norm(&s, q, r).unwrap();
        let ho = ginf_oracle(&s, q, r);
        prop_assert!((h - ho).abs() <= 1e-12 * ho.max(1.0));
    }

    #[test]
    fn ginf_monotone_in_r(seed in common::seeds(), q in 1.0f64..4.0, r1 in 1.0f64..4.0, dr in 0.0f64..3.0) {
        let lat = common::lattice_from_seed(seed, 5);
        let s = random_sequence(&lat, seed, 0.5);
        let a = ginf_norm(&s, q, r1).unwrap();
        let b = ginf_norm(&s, q, r1 + dr).unwrap();
        prop_assert!(a <= b * (1.0 + 1e-12));
    }

    #[test]
    fn duality_inequality(seed in common::seeds(), qi in 0usize..3) {
        let q = [1.5, 2.0, 3.0][qi];
        let qc = q / (q - 1.0);
        let lat = common::lattice_from_seed(seed, 5);
        let s = random_sequence(&lat, seed, 0.7);
        let t = random_sequence(&lat, !seed, 0.7);
        let k = ginf_norm(&t, qc, 1.0).unwrap();
        prop_assume!(k > 0.0);
        let t = CoefSequence::from_entries(lat.clone(), t.entries().iter().map(|(&i, &v)| (i, v / k))).unwrap();
        prop_assert!(pairing(&s, &t).unwrap().abs() <= 4.0 * gpq_norm(&s, 1.0, q).unwrap() + 1e-9);
    }

    #[test]
    fn projection_additivity(seed in common::seeds(), p in 1.0f64..5.0) {
        let lat = common::lattice_from_seed(seed, 5);
        let s = random_sequence(&lat, seed, 0.8);
        let pick = |id: NodeId| (id.index() as u64 ^ seed) % 3 == 0;
        let a = coordinate_projection(&s, pick);
        let b = coordinate_projection(&s, |id| !pick(id));
        let lhs = gpq_norm(&a, p, p).unwrap().powf(p) + gpq_norm(&b, p, p).unwrap().powf(p);
        let rhs = gpq_norm(&s, p, p).unwrap().powf(p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        let all = coordinate_projection(&s, |_| true);
        prop_assert_eq!(all.entries(), s.entries());
        prop_assert!(coordinate_projection(&s, |_| false).is_empty());
    }

    #[test]
    fn gpq_agrees_with_hpq(seed in common::seeds(), p in 1.0f64..4.0, q in 1.0f64..4.0) {
        let (_, f) = common::pair_from_seed(seed, 5);
        let d = decompose(&f);
        let a = gpq_norm(&flatten(&d), p, q).unwrap();
        let b = hpq_norm(&d, p, q, true).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn carleson_two_sided_at_two(seed in common::seeds()) {
        let lat = common::lattice_from_seed(seed, 4);
        let alpha = random_sequence(&lat, seed, 0.6);
        let k = ginf_norm(&alpha, 2.0, 2.0).unwrap();
        let op = carleson_operator(&alpha).to_slot_op();
        let n = op.norm_2();
        prop_assert!(op.indicator_lower(2.0, 2.0) >= k * (1.0 - 1e-12));
        prop_assert!(k <= n * (1.0 + 1e-10) && n <= 2.0 * k + 1e-6);
    }
}

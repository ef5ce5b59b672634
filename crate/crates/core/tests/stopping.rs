mod common;

use std::sync::Arc;

use nhmart::mfunc::maximal_function;
use nhmart::random::random_nonnegative;
use nhmart::stopping::{level_sets, stopping_generations, verify_lemma, LemmaViolation};
use nhmart::{uniform_radic, Error, Lattice, StepFunction, StoppingForest};
use proptest::prelude::*;

fn dyadic(depth: usize) -> Arc<Lattice> {
    Arc::new(uniform_radic(2, depth, 1.0).unwrap())
}

/// Stopping intervals contained in each node never exceed twice its measure.
fn carleson_holds(lat: &Lattice, forest: &StoppingForest) -> bool {
    lat.nodes().all(|i| {
        let s: f64 = forest
            .intervals()
            .filter(|&(_, j)| lat.contains(i, j))
            .map(|(_, j)| lat.measure(j))
            .sum();
        s <= 2.0 * lat.measure(i) * (1.0 + 1e-12)
    })
}

/// How many sets `J \ G_{k+1}` each leaf lies in.
fn coverage(lat: &Lattice, forest: &StoppingForest) -> Vec<usize> {
    let mut cover = vec![0; lat.num_leaves()];
    for (k, gen) in forest.generations.iter().enumerate() {
        let next = forest.generations.get(k + 1);
        for &j in gen {
            for leaf in lat.leaf_range(j) {
                let leaf_id = lat.leaves()[leaf];
                let in_next = next.is_some_and(|g| g.iter().any(|&n| lat.contains(n, leaf_id)));
                if !in_next {
                    cover[leaf] += 1;
                }
            }
        }
    }
    cover
}

#[test]
fn level_set_examples() {
    let root: Arc<Lattice> = Arc::new(uniform_radic(2, 0, 1.0).unwrap());
    let one = StepFunction::constant(root.clone(), 1.0);
    for (k, set) in level_sets(&one, -4, 3) {
        assert_eq!(set.len(), if k <= -1 { 1 } else { 0 }, "k = {k}");
    }
    let zero = StepFunction::zeros(dyadic(3));
    assert!(level_sets(&zero, -10, 10).iter().all(|(_, s)| s.is_empty()));

    let lat = dyadic(1);
    let left = lat.children(lat.roots()[0])[0];
    let f = StepFunction::indicator(lat.clone(), left);
    let sets = level_sets(&f, -1, -1);
    assert_eq!(sets[0].1, vec![left]);
}

#[test]
fn generation_examples() {
    let lat = dyadic(3);
    let one = StepFunction::constant(lat.clone(), 1.0);
    let forest = stopping_generations(&one, -1).unwrap();
    assert_eq!(forest.generations, vec![vec![lat.roots()[0]]]);
    assert!(verify_lemma(&one, &forest).is_empty());

    let forest = stopping_generations(&StepFunction::zeros(lat.clone()), -1).unwrap();
    assert!(forest.is_empty());

    let neg = StepFunction::new(dyadic(1), vec![1.0, -1.0]).unwrap();
    assert!(matches!(stopping_generations(&neg, 0), Err(Error::NegativeInput)));
}

#[test]
fn json_uses_labels() {
    let lat = dyadic(2);
    let one = StepFunction::constant(lat.clone(), 1.0);
    let forest = stopping_generations(&one, -1).unwrap();
    let v = forest.to_json(&lat);
    assert_eq!(v["k0"], -1);
    assert_eq!(v["generations"][0][0]["id"], lat.label(lat.roots()[0]));
    assert_eq!(v["generations"][0][0]["rank"], -1);
}

#[test]
fn corrupted_forest_is_caught() {
    let lat = dyadic(6);
    let mut found = false;
    for seed in 0..200 {
        let mut rng = common::rng(seed);
        let f = random_nonnegative(&lat, &mut rng);
        let mut forest = stopping_generations(&f, -2).unwrap();
        if forest.generations.len() < 2 {
            continue;
        }
        assert!(verify_lemma(&f, &forest).is_empty());
        let moved = forest.generations[1].pop().unwrap();
        if forest.generations[1].is_empty() {
            forest.generations.pop();
        }
        forest.generations[0].push(moved);
        let v = verify_lemma(&f, &forest);
        assert!(!v.is_empty());
        assert!(v.iter().any(|x| matches!(x, LemmaViolation::Overlap { .. })), "{v:?}");
        found = true;
        break;
    }
    assert!(found, "no multi-generation forest in the sample");
}

#[test]
fn dyadic_suite() {
    let lat = dyadic(6);
    for seed in 0..300 {
        let mut rng = common::rng(seed);
        let f = random_nonnegative(&lat, &mut rng);
        for k0 in [-3, 0, 2] {
            let forest = stopping_generations(&f, k0).unwrap();
            assert!(verify_lemma(&f, &forest).is_empty(), "seed {seed}");
            assert!(carleson_holds(&lat, &forest));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lemma_on_random_lattices(seed in common::seeds(), k0 in -4i32..3) {
        let lat = common::lattice_from_seed(seed, 6);
        let mut rng = common::rng(seed);
        let f = random_nonnegative(&lat, &mut rng);
        let forest = stopping_generations(&f, k0).unwrap();
        prop_assert!(verify_lemma(&f, &forest).is_empty());
        prop_assert!(carleson_holds(&lat, &forest));

        // generations are disjoint and nested
        for (k, gen) in forest.generations.iter().enumerate() {
            for (a, &x) in gen.iter().enumerate() {
                for &y in &gen[a + 1..] {
                    prop_assert!(!lat.contains(x, y) && !lat.contains(y, x));
                }
                if k > 0 {
                    prop_assert!(forest.generations[k - 1].iter().any(|&p| p != x && lat.contains(p, x)));
                }
            }
        }

        // the sets J \ G_{k+1} tile E_{k0}
        let mf = maximal_function(&f);
        let level = 2f64.powi(k0);
        for (c, &m) in coverage(&lat, &forest).iter().zip(mf.values()) {
            prop_assert_eq!(*c, usize::from(m > level));
        }
    }
}

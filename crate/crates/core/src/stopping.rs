//! Level sets of the maximal function and stopping generations built from them.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, NodeId};
use crate::mfunc::{maximal_function, node_averages, StepFunction};
use crate::num::{pow2, Real};

/// `min_{leaves ⊆ I} Mf` for every node, so that `I ⊆ E_k` iff the entry exceeds `2^k`.
fn node_min_maximal<T: Real>(f: &StepFunction<T>) -> Vec<T> {
    let lat = f.lattice();
    let mf = maximal_function(f);
    let mut out = vec![T::zero(); lat.num_nodes()];
    for &id in lat.preorder().iter().rev() {
        out[id.0] = match lat.leaf_position(id) {
            Some(i) => mf.values()[i],
            None => lat
                .children(id)
                .iter()
                .map(|c| out[c.0])
                .fold(T::infinity(), T::min),
        };
    }
    out
}

/// Largest `k` with `2^k < m`, or `None` when `m ≤ 0`.
fn rank_of<T: Real>(m: T) -> Option<i32> {
    if !(m > T::zero()) {
        return None;
    }
    let mut k = m.log2().floor().to_i32()?;
    while pow2::<T>(k) >= m {
        k -= 1;
    }
    while pow2::<T>(k + 1) < m {
        k += 1;
    }
    Some(k)
}

/// `𝓔_k = {I : I ⊆ E_k}` with `E_k = {Mf > 2^k}`, for `k_lo ≤ k ≤ k_hi`.
pub fn level_sets<T: Real>(f: &StepFunction<T>, k_lo: i32, k_hi: i32) -> Vec<(i32, Vec<NodeId>)> {
    let lat = f.lattice();
    let mins = node_min_maximal(f);
    (k_lo..=k_hi)
        .map(|k| {
            let t = pow2::<T>(k);
            (k, lat.preorder().iter().copied().filter(|id| mins[id.0] > t).collect())
        })
        .collect()
}

/// Maximal elements (by inclusion) of a node set given as a predicate.
pub fn maximal_nodes<T: Real>(lat: &Lattice<T>, within: NodeId, pred: impl Fn(NodeId) -> bool) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut stack = vec![within];
    while let Some(id) = stack.pop() {
        if pred(id) {
            out.push(id);
        } else {
            stack.extend(lat.children(id).iter().rev().copied());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StoppingForest {
    pub k0: i32,
    /// `𝓖*_1, 𝓖*_2, …`.
    pub generations: Vec<Vec<NodeId>>,
    /// `r(J) = max{k : J ⊆ E_k}` for every stopping interval.
    pub rank: BTreeMap<NodeId, i32>,
}

impl StoppingForest {
    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }

    pub fn intervals(&self) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.generations
            .iter()
            .enumerate()
            .flat_map(|(k, g)| g.iter().map(move |&id| (k, id)))
    }

    /// JSON with user-facing node labels.
    pub fn to_json<T: Real>(&self, lat: &Lattice<T>) -> serde_json::Value {
        let gens: Vec<Vec<serde_json::Value>> = self
            .generations
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&id| serde_json::json!({"id": lat.label(id), "rank": self.rank.get(&id)}))
                    .collect()
            })
            .collect();
        serde_json::json!({"k0": self.k0, "generations": gens})
    }
}

/// First generation: maximal intervals inside `E_{k0}`; then inside each `J` the
/// maximal intervals of `J ∩ E_{r(J)+2}`.
pub fn stopping_generations<T: Real>(f: &StepFunction<T>, k0: i32) -> Result<StoppingForest> {
    if f.values().iter().any(|&v| v < T::zero()) {
        return Err(Error::NegativeInput);
    }
    let lat = f.lattice();
    let mins = node_min_maximal(f);
    let mut rank = BTreeMap::new();
    let mut generations = Vec::new();
    let t0 = pow2::<T>(k0);
    let mut current: Vec<NodeId> = lat
        .roots()
        .iter()
        .flat_map(|&r| maximal_nodes(lat, r, |id| mins[id.0] > t0))
        .collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &j in &current {
            let r = rank_of(mins[j.0]).expect("stopping intervals lie in E_k0");
            rank.insert(j, r);
            let t = pow2::<T>(r + 2);
            for &c in lat.children(j) {
                next.extend(maximal_nodes(lat, c, |id| mins[id.0] > t));
            }
        }
        generations.push(current);
        current = next;
    }
    Ok(StoppingForest { k0, generations, rank })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum LemmaViolation {
    /// `⟨f⟩_J > 2^{r(J)+1}`.
    UpperAverage(NodeId),
    /// `⟨f⟩_J < 2^{r(J)}`.
    LowerAverage(NodeId),
    /// Some `I ⊆ J` outside the next generation has `⟨f⟩_I > 2^{r(J)+2}`.
    InteriorAverage { stop: NodeId, node: NodeId },
    /// `|J ∩ G_{k+1}| > |J|/2`.
    Halving(NodeId),
    /// Two intervals of one generation intersect.
    Overlap { generation: usize, a: NodeId, b: NodeId },
    /// An interval is not strictly inside an interval of the previous generation.
    NotNested(NodeId),
    /// Recorded rank differs from `max{k : J ⊆ E_k}`.
    WrongRank(NodeId),
    /// `Σ_{J ⊆ I} |J| > 2|I|`.
    Carleson(NodeId),
    /// The sets `J \ G_{k+1}` do not partition `E_{k0}`.
    Exhaustion,
}

/// Checks the stopping lemma and the structural properties of `forest`.
pub fn verify_lemma<T: Real>(f: &StepFunction<T>, forest: &StoppingForest) -> Vec<LemmaViolation> {
    let lat = f.lattice();
    let avg = node_averages(lat, f.values());
    let mins = node_min_maximal(f);
    let slack = T::tol(1e-12);
    let n_leaves = lat.num_leaves();
    let mut out = Vec::new();

    // leaf coverage per generation
    let mut cover: Vec<Vec<Option<NodeId>>> = Vec::new();
    for (g, gen) in forest.generations.iter().enumerate() {
        let mut c = vec![None; n_leaves];
        for &j in gen {
            for leaf in lat.leaf_range(j) {
                if let Some(other) = c[leaf] {
                    if other != j {
                        out.push(LemmaViolation::Overlap { generation: g, a: other, b: j });
                    }
                }
                c[leaf] = Some(j);
            }
        }
        cover.push(c);
    }
    out.dedup();
    for (g, gen) in forest.generations.iter().enumerate().skip(1) {
        for &j in gen {
            let leaf = lat.leaf_range(j).start;
            let ok = cover[g - 1][leaf].is_some_and(|up| up != j && lat.contains(up, j));
            if !ok {
                out.push(LemmaViolation::NotNested(j));
            }
        }
    }

    for (g, gen) in forest.generations.iter().enumerate() {
        for &j in gen {
            let Some(&r) = forest.rank.get(&j) else {
                out.push(LemmaViolation::WrongRank(j));
                continue;
            };
            if rank_of(mins[j.0]) != Some(r) {
                out.push(LemmaViolation::WrongRank(j));
            }
            let a = avg[j.0];
            if a > pow2::<T>(r + 1) * (T::one() + slack) {
                out.push(LemmaViolation::UpperAverage(j));
            }
            if a < pow2::<T>(r) * (T::one() - slack) {
                out.push(LemmaViolation::LowerAverage(j));
            }
            let next = cover.get(g + 1);
            let in_next = |leaf: usize| next.is_some_and(|c| c[leaf].is_some());
            let cap = pow2::<T>(r + 2) * (T::one() + slack);
            for i in lat.subtree(j) {
                let inside = lat.leaf_range(i).all(in_next);
                if !inside && avg[i.0] > cap {
                    out.push(LemmaViolation::InteriorAverage { stop: j, node: i });
                }
            }
            let covered: T = lat
                .leaf_range(j)
                .filter(|&l| in_next(l))
                .map(|l| lat.measure(lat.leaves()[l]))
                .sum();
            if covered > lat.measure(j) / T::lit(2.0) * (T::one() + slack) {
                out.push(LemmaViolation::Halving(j));
            }
        }
    }

    // Carleson packing of the stopping intervals
    let mut mass = vec![T::zero(); lat.num_nodes()];
    for (_, j) in forest.intervals() {
        mass[j.0] += lat.measure(j);
    }
    for &id in lat.preorder().iter().rev() {
        let below: T = lat.children(id).iter().map(|c| mass[c.0]).sum();
        mass[id.0] += below;
        if mass[id.0] > T::lit(2.0) * lat.measure(id) * (T::one() + slack) {
            out.push(LemmaViolation::Carleson(id));
        }
    }

    // J \ G_{k+1} over all k partitions E_{k0}: each leaf of E_{k0} lies in exactly
    // one such difference, i.e. the deepest generation covering it exists and no
    // leaf outside E_{k0} is covered
    let t0 = pow2::<T>(forest.k0);
    for leaf in 0..n_leaves {
        let in_e = mins[lat.leaves()[leaf].0] > t0;
        let covered = cover.first().is_some_and(|c| c[leaf].is_some());
        let contiguous = cover.windows(2).all(|w| w[0][leaf].is_some() || w[1][leaf].is_none());
        if in_e != covered || !contiguous {
            out.push(LemmaViolation::Exhaustion);
            break;
        }
    }
    out
}

//! Node-indexed sequence spaces, BMO norms and the Carleson embedding operator.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{check_exponent, Error, Result};
use crate::lattice::{Lattice, NodeId};
use crate::matrix::Matrix;
use crate::mfunc::{accumulate_down, node_averages, same_lattice, weighted_lp, MartDecomp, StepFunction};
use crate::num::Real;
use crate::opnorm::{self, Codomain, NormReport};

/// Scalar per node; absent entries are zero.
#[derive(Clone, Debug)]
pub struct CoefSequence<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    entries: BTreeMap<NodeId, T>,
}

impl<T: Real> PartialEq for CoefSequence<T> {
    fn eq(&self, other: &Self) -> bool {
        same_lattice(&self.lat, &other.lat) && self.entries == other.entries
    }
}

impl<T: Real> CoefSequence<T> {
    pub fn new(lat: Arc<Lattice<T>>) -> Self {
        CoefSequence {
            lat,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_entries(lat: Arc<Lattice<T>>, entries: impl IntoIterator<Item = (NodeId, T)>) -> Result<Self> {
        let mut s = Self::new(lat);
        for (id, v) in entries {
            s.set(id, v)?;
        }
        Ok(s)
    }

    /// Every node set to `v`.
    pub fn constant(lat: Arc<Lattice<T>>, v: T) -> Self {
        let entries = lat.nodes().map(|id| (id, v)).collect();
        CoefSequence { lat, entries }
    }

    pub fn set(&mut self, id: NodeId, v: T) -> Result<()> {
        self.lat.check(id)?;
        if !v.is_finite() {
            return Err(Error::InvalidParameter("non-finite sequence entry".into()));
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: NodeId) -> T {
        self.entries.get(&id).copied().unwrap_or_else(T::zero)
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, T> {
        &self.entries
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(|&v| v == T::zero())
    }

    /// Dense per-node array.
    pub fn dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.lat.num_nodes()];
        for (&id, &v) in &self.entries {
            out[id.0] = v;
        }
        out
    }
}

/// Entries of a decomposition laid out on nodes: `x_J` is `Δ_{parent(J)} f` on `J`,
/// and each root carries its average. Zero values are dropped.
pub fn flatten<T: Real>(d: &MartDecomp<T>) -> CoefSequence<T> {
    let lat = d.lattice();
    let mut vals = d.child_values();
    for (&r, &v) in lat.roots().iter().zip(d.root_averages()) {
        vals[r.0] = v;
    }
    CoefSequence {
        lat: lat.clone(),
        entries: vals
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v != T::zero())
            .map(|(i, v)| (NodeId(i), v))
            .collect(),
    }
}

/// `‖(Σ_I |s_I|^q 1_I)^{1/q}‖_{L^p}`.
pub fn gpq_norm<T: Real>(s: &CoefSequence<T>, p: T, q: T) -> Result<T> {
    check_exponent("p", p.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    check_exponent("q", q.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    let lat = s.lattice();
    let w: Vec<T> = s.dense().into_iter().map(|v| v.abs().powf(q)).collect();
    let agg: Vec<T> = accumulate_down(lat, &w).into_iter().map(|x| x.powf(T::one() / q)).collect();
    Ok(weighted_lp(&agg, &lat.leaf_measures(), p))
}

/// `sup_J ((1/|J|) ∫_J (Σ_{I⊆J} |s_I|^q 1_I)^{r/q})^{1/r}`.
pub fn ginf_norm<T: Real>(s: &CoefSequence<T>, q: T, r: T) -> Result<T> {
    check_exponent("q", q.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    check_exponent("r", r.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    let lat = s.lattice().clone();
    let layout = SlotLayout::nodes(lat);
    let w: Vec<T> = layout.slots().iter().map(|sl| s.get(sl.cell).abs().powf(q)).collect();
    Ok(layout.local_sup(&w, q, r))
}

/// Keeps entries whose node satisfies `keep`.
pub fn coordinate_projection<T: Real>(s: &CoefSequence<T>, keep: impl Fn(NodeId) -> bool) -> CoefSequence<T> {
    CoefSequence {
        lat: s.lat.clone(),
        entries: s.entries.iter().filter(|(&id, _)| keep(id)).map(|(&id, &v)| (id, v)).collect(),
    }
}

/// `Σ_I s_I t_I |I|`.
pub fn pairing<T: Real>(s: &CoefSequence<T>, t: &CoefSequence<T>) -> Result<T> {
    if !same_lattice(&s.lat, &t.lat) {
        return Err(Error::LatticeMismatch);
    }
    Ok(s.entries
        .iter()
        .map(|(&id, &v)| v * t.get(id) * s.lat.measure(id))
        .sum())
}

/// The two BMO quantities of a decomposition, to be combined by max.
///
/// The first is the local `ġ_∞^{q,(r)}` mass of the differences below each node
/// (`Δ_J f` for `J ⊆ I`, so root averages never enter); the second is
/// `sup_I ‖Δ_I f‖_∞`.
pub fn bmoq_norm<T: Real>(d: &MartDecomp<T>, q: T, r: T) -> Result<(T, T)> {
    check_exponent("q", q.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    check_exponent("r", r.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    let lat = d.lattice().clone();
    let x = d.child_values();
    let sup_inf = x.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let layout = SlotLayout::differences(lat, false);
    let w: Vec<T> = layout.slots().iter().map(|sl| x[sl.cell.0].abs().powf(q)).collect();
    Ok((layout.local_sup(&w, q, r), sup_inf))
}

/// One coordinate of a node-family valued output: constant on `cell`, contributed by `owner`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub owner: NodeId,
    pub cell: NodeId,
}

/// Coordinates of a family `{g_I}` of functions where each `g_I` is constant on the
/// cells listed for owner `I`. The mixed norm is `‖(Σ_I |g_I|^q)^{1/q}‖_{L^p}`.
#[derive(Clone, Debug)]
pub struct SlotLayout<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    slots: Vec<Slot>,
}

impl<T: Real> SlotLayout<T> {
    /// One slot per node covering the node itself (sequence spaces).
    pub fn nodes(lat: Arc<Lattice<T>>) -> Self {
        let slots = lat.preorder().iter().map(|&id| Slot { owner: id, cell: id }).collect();
        SlotLayout { lat, slots }
    }

    /// One slot per non-root node `J` owned by its parent; with `leaf_self`, every
    /// leaf also owns a slot on itself.
    pub fn differences(lat: Arc<Lattice<T>>, leaf_self: bool) -> Self {
        let mut slots = Vec::new();
        for &id in lat.preorder() {
            if let Some(p) = lat.parent(id) {
                slots.push(Slot { owner: p, cell: id });
            }
            if leaf_self && lat.is_leaf(id) {
                slots.push(Slot { owner: id, cell: id });
            }
        }
        SlotLayout { lat, slots }
    }

    pub fn from_slots(lat: Arc<Lattice<T>>, slots: Vec<Slot>) -> Result<Self> {
        for s in &slots {
            lat.check(s.owner)?;
            lat.check(s.cell)?;
            if !lat.contains(s.owner, s.cell) {
                return Err(Error::SupportViolation { node: lat.label(s.owner) });
            }
        }
        Ok(SlotLayout { lat, slots })
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn cell_measures(&self) -> Vec<T> {
        self.slots.iter().map(|s| self.lat.measure(s.cell)).collect()
    }

    /// Pointwise `Σ_{slots ∋ x} |y_s|^q` on leaves.
    pub fn pointwise_power_sum(&self, y: &[T], q: T) -> Vec<T> {
        let mut c = vec![T::zero(); self.lat.num_nodes()];
        for (s, &v) in self.slots.iter().zip(y) {
            c[s.cell.0] += v.abs().powf(q);
        }
        accumulate_down(&self.lat, &c)
    }

    /// `‖(Σ_s |y_s|^q 1_{cell(s)})^{1/q}‖_{L^p}`.
    pub fn mixed_norm(&self, y: &[T], p: T, q: T) -> T {
        let scale = y.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if scale == T::zero() {
            return T::zero();
        }
        let ys: Vec<T> = y.iter().map(|&v| v / scale).collect();
        let agg: Vec<T> = self
            .pointwise_power_sum(&ys, q)
            .into_iter()
            .map(|x| x.powf(T::one() / q))
            .collect();
        scale * weighted_lp(&agg, &self.lat.leaf_measures(), p)
    }

    /// Gradient of [`Self::mixed_norm`] at `y` (zero at `y = 0`).
    pub fn mixed_norm_gradient(&self, y: &[T], p: T, q: T) -> Vec<T> {
        let scale = y.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if scale == T::zero() {
            return vec![T::zero(); y.len()];
        }
        let ys: Vec<T> = y.iter().map(|&v| v / scale).collect();
        let sums = self.pointwise_power_sum(&ys, q);
        let weights = self.lat.leaf_measures();
        let norm_p: T = sums.iter().zip(&weights).map(|(&s, &w)| s.powf(p / q) * w).sum();
        let norm = norm_p.powf(T::one() / p);
        // a_ℓ = |ℓ| S_ℓ^{p/q - 1}, integrated over each cell
        let a: Vec<T> = sums
            .iter()
            .zip(&weights)
            .map(|(&s, &w)| if s > T::zero() { w * s.powf(p / q - T::one()) } else { T::zero() })
            .collect();
        let mut cell_sum = vec![T::zero(); self.lat.num_nodes()];
        for &id in self.lat.preorder().iter().rev() {
            cell_sum[id.0] = match self.lat.leaf_position(id) {
                Some(i) => a[i],
                None => self.lat.children(id).iter().map(|c| cell_sum[c.0]).sum(),
            };
        }
        let factor = norm.powf(T::one() - p);
        self.slots
            .iter()
            .zip(&ys)
            .map(|(s, &v)| {
                if v == T::zero() {
                    T::zero()
                } else {
                    factor * cell_sum[s.cell.0] * v.abs().powf(q - T::one()) * v.signum()
                }
            })
            .collect()
    }

    /// `sup_I ((1/|I|) ∫_I (Σ_{owner(s) ⊆ I} w_s 1_{cell(s)})^{r/q})^{1/r}` for
    /// precomputed `w_s = |y_s|^q`.
    pub fn local_sup(&self, w: &[T], q: T, r: T) -> T {
        let lat = &self.lat;
        let n = lat.num_nodes();
        let mut own = vec![T::zero(); n];
        let mut from_parent = vec![T::zero(); n];
        for (s, &v) in self.slots.iter().zip(w) {
            if s.owner == s.cell {
                own[s.cell.0] += v;
            } else {
                debug_assert_eq!(lat.parent(s.cell), Some(s.owner), "slots own cells or children");
                from_parent[s.cell.0] += v;
            }
        }
        let e = r / q;
        let mut best = T::zero();
        let mut acc = vec![T::zero(); n];
        for top in lat.nodes() {
            let mut integral = T::zero();
            let mut stack = vec![top];
            while let Some(id) = stack.pop() {
                acc[id.0] = if id == top {
                    own[id.0]
                } else {
                    acc[lat.parent(id).expect("below top").0] + own[id.0] + from_parent[id.0]
                };
                if lat.is_leaf(id) {
                    if acc[id.0] > T::zero() {
                        integral += acc[id.0].powf(e) * lat.measure(id);
                    }
                } else {
                    stack.extend(lat.children(id).iter().copied());
                }
            }
            best = best.max(integral / lat.measure(top));
        }
        best.powf(T::one() / r)
    }
}

/// Linear map from leaf functions into a slot family.
#[derive(Clone, Debug)]
pub struct SlotOp<T: Real = f64> {
    layout: SlotLayout<T>,
    matrix: Matrix<T>,
}

impl<T: Real> SlotOp<T> {
    pub fn new(layout: SlotLayout<T>, matrix: Matrix<T>) -> Result<Self> {
        let (r, c) = (matrix.rows(), matrix.cols());
        if r != layout.len() {
            return Err(Error::DimensionMismatch { expected: layout.len(), got: r });
        }
        if c != layout.lattice().num_leaves() {
            return Err(Error::DimensionMismatch {
                expected: layout.lattice().num_leaves(),
                got: c,
            });
        }
        Ok(SlotOp { layout, matrix })
    }

    pub fn layout(&self) -> &SlotLayout<T> {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn apply(&self, f: &StepFunction<T>) -> Result<Vec<T>> {
        if !same_lattice(f.lattice(), self.layout.lattice()) {
            return Err(Error::LatticeMismatch);
        }
        Ok(self.matrix.matvec(f.values()))
    }

    pub fn codomain(&self, q: T) -> Codomain<T> {
        Codomain::Mixed {
            layout: self.layout.clone(),
            q,
        }
    }

    /// `L^2 → L^2(ℓ^2)` norm (exact).
    pub fn norm_2(&self) -> T {
        opnorm::norm_2_weighted(&self.matrix, &self.layout.lattice().leaf_measures(), &self.layout.cell_measures())
    }

    pub fn norm_p(&self, p: T, q: T, restarts: usize, seed: u64) -> Result<NormReport<T>> {
        opnorm::norm_p_slots(&self.matrix, &self.layout, p, q, restarts, seed)
    }

    /// `max_I ‖A 1_I‖ / ‖1_I‖_p`.
    pub fn indicator_lower(&self, p: T, q: T) -> T {
        opnorm::indicator_lower_weighted(
            &self.matrix,
            self.layout.lattice(),
            &self.codomain(q),
            p,
        )
        .0
    }
}

/// `f ↦ {α_I ⟨f⟩_I}`.
#[derive(Clone, Debug)]
pub struct CarlesonOp<T: Real = f64> {
    alpha: CoefSequence<T>,
}

pub fn carleson_operator<T: Real>(alpha: &CoefSequence<T>) -> CarlesonOp<T> {
    CarlesonOp { alpha: alpha.clone() }
}

impl<T: Real> CarlesonOp<T> {
    pub fn alpha(&self) -> &CoefSequence<T> {
        &self.alpha
    }

    pub fn apply(&self, f: &StepFunction<T>) -> Result<CoefSequence<T>> {
        if !same_lattice(f.lattice(), self.alpha.lattice()) {
            return Err(Error::LatticeMismatch);
        }
        let avg = node_averages(f.lattice(), f.values());
        Ok(CoefSequence {
            lat: self.alpha.lat.clone(),
            entries: self.alpha.entries.iter().map(|(&id, &a)| (id, a * avg[id.0])).collect(),
        })
    }

    /// Matrix form into the node layout of `ġ_p^q`.
    pub fn to_slot_op(&self) -> SlotOp<T> {
        let lat = self.alpha.lattice().clone();
        let layout = SlotLayout::nodes(lat.clone());
        let mut m = Matrix::zeros(layout.len(), lat.num_leaves());
        for (row, s) in layout.slots().iter().enumerate() {
            let a = self.alpha.get(s.cell);
            if a == T::zero() {
                continue;
            }
            let inv = a / lat.measure(s.cell);
            for leaf in lat.leaf_range(s.cell) {
                m[(row, leaf)] = inv * lat.measure(lat.leaves()[leaf]);
            }
        }
        SlotOp { layout, matrix: m }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingReport<T> {
    /// Carleson constant `ġ_∞^{q,(q)}` norm of `α`.
    pub k: T,
    pub lower_bound: T,
    pub estimate: T,
    /// `estimate / k` (infinite when `k = 0` and the operator is not).
    pub ratio: T,
}

/// Measures `‖A_α‖_{L^p → ġ_p^q}` against the Carleson constant.
pub fn embedding_test<T: Real>(alpha: &CoefSequence<T>, p: T, q: T, trials: usize, seed: u64) -> Result<EmbeddingReport<T>> {
    check_exponent("p", p.to_f64_lossy(), 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    check_exponent("q", q.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    let k = ginf_norm(alpha, q, q)?;
    let op = carleson_operator(alpha).to_slot_op();
    let rep = op.norm_p(p, q, trials, seed)?;
    let ratio = if k > T::zero() {
        rep.estimate / k
    } else if rep.estimate == T::zero() {
        T::zero()
    } else {
        T::infinity()
    };
    Ok(EmbeddingReport {
        k,
        lower_bound: rep.lower_bound,
        estimate: rep.estimate,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::uniform_radic;
    use crate::mfunc::decompose;

    fn lat(r: usize, d: usize) -> Arc<Lattice<f64>> {
        Arc::new(uniform_radic(r, d, 1.0).unwrap())
    }

    #[test]
    fn flatten_halves() {
        let l = lat(2, 1);
        let f = StepFunction::new(l.clone(), vec![1.0, 3.0]).unwrap();
        let x = flatten(&decompose(&f));
        let root = l.roots()[0];
        let ch = l.children(root);
        assert_eq!(x.get(ch[0]), -1.0);
        assert_eq!(x.get(ch[1]), 1.0);
        assert_eq!(x.get(root), 2.0);
        let c = flatten(&decompose(&StepFunction::constant(l.clone(), 5.0)));
        assert_eq!(c.entries().len(), 1);
        assert!(flatten(&MartDecomp::zeros(l)).is_empty());
    }

    #[test]
    fn gpq_examples() {
        let l = lat(2, 1);
        let root = l.roots()[0];
        let left = l.children(root)[0];
        let s = CoefSequence::from_entries(l.clone(), [(root, 2.0)]).unwrap();
        assert!((gpq_norm(&s, 3.0, 1.5).unwrap() - 2.0).abs() < 1e-15);
        let s = CoefSequence::from_entries(l.clone(), [(root, 1.0), (left, 1.0)]).unwrap();
        assert!((gpq_norm(&s, 2.0, 2.0).unwrap() - 1.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(gpq_norm(&CoefSequence::new(l), 2.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn ginf_all_ones() {
        for depth in 0..5 {
            let l = lat(2, depth);
            let s = CoefSequence::constant(l, 1.0);
            let v = ginf_norm(&s, 2.0, 2.0).unwrap();
            assert!((v - ((depth + 1) as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn pairing_examples() {
        let l = lat(2, 1);
        let ones = CoefSequence::constant(l.clone(), 1.0);
        assert_eq!(pairing(&ones, &ones).unwrap(), 2.0);
        let other = CoefSequence::constant(lat(2, 1), 1.0);
        assert_eq!(pairing(&ones, &other).unwrap(), 2.0);
        let mismatched = CoefSequence::constant(lat(3, 1), 1.0);
        assert_eq!(pairing(&ones, &mismatched), Err(Error::LatticeMismatch));
    }

    #[test]
    fn bmo_single_haar() {
        let l = lat(2, 1);
        let f = StepFunction::new(l, vec![1.0, -1.0]).unwrap();
        let (a, b) = bmoq_norm(&decompose(&f), 2.0, 2.0).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn carleson_apply() {
        let l = lat(2, 2);
        let f = StepFunction::new(l.clone(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = carleson_operator(&CoefSequence::constant(l.clone(), 1.0));
        let out = a.apply(&f).unwrap();
        let root = l.roots()[0];
        assert_eq!(out.get(root), 2.5);
        let m = a.to_slot_op().matrix().matvec(f.values());
        for (row, s) in a.to_slot_op().layout().slots().iter().enumerate() {
            assert!((m[row] - out.get(s.cell)).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_norm_gradient_matches_finite_differences() {
        let l = lat(2, 3);
        let layout = SlotLayout::differences(l, true);
        let y: Vec<f64> = (0..layout.len()).map(|i| ((i * 7 + 3) as f64).sin()).collect();
        for (p, q) in [(2.0, 2.0), (3.0, 1.5), (1.5, 3.0)] {
            let g = layout.mixed_norm_gradient(&y, p, q);
            for i in 0..y.len() {
                let h = 1e-6;
                let mut a = y.clone();
                a[i] += h;
                let mut b = y.clone();
                b[i] -= h;
                let fd = (layout.mixed_norm(&a, p, q) - layout.mixed_norm(&b, p, q)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "p={p} q={q} i={i}: {fd} vs {}", g[i]);
            }
        }
    }
}

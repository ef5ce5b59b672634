//! Martingale calculus on leaf-constant functions.

use std::sync::Arc;

use crate::error::{check_exponent, Error, Result};
use crate::lattice::{Lattice, NodeId};
use crate::num::{conjugate, Real};

/// Function that is constant on every leaf of a lattice.
#[derive(Clone, Debug)]
pub struct StepFunction<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    values: Vec<T>,
}

impl<T: Real> PartialEq for StepFunction<T> {
    fn eq(&self, other: &Self) -> bool {
        same_lattice(&self.lat, &other.lat) && self.values == other.values
    }
}

pub(crate) fn same_lattice<T: Real>(a: &Arc<Lattice<T>>, b: &Arc<Lattice<T>>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl<T: Real> StepFunction<T> {
    /// Values are given in leaf order (depth-first).
    pub fn new(lat: Arc<Lattice<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != lat.num_leaves() {
            return Err(Error::DimensionMismatch {
                expected: lat.num_leaves(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite function value".into()));
        }
        Ok(StepFunction { lat, values })
    }

    pub(crate) fn from_raw(lat: Arc<Lattice<T>>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), lat.num_leaves());
        StepFunction { lat, values }
    }

    pub fn zeros(lat: Arc<Lattice<T>>) -> Self {
        let n = lat.num_leaves();
        StepFunction::from_raw(lat, vec![T::zero(); n])
    }

    pub fn constant(lat: Arc<Lattice<T>>, c: T) -> Self {
        let n = lat.num_leaves();
        StepFunction::from_raw(lat, vec![c; n])
    }

    /// `1_I`.
    pub fn indicator(lat: Arc<Lattice<T>>, node: NodeId) -> Self {
        let mut values = vec![T::zero(); lat.num_leaves()];
        for v in &mut values[lat.leaf_range(node)] {
            *v = T::one();
        }
        StepFunction::from_raw(lat, values)
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn value_at(&self, leaf: NodeId) -> Option<T> {
        self.lat.leaf_position(leaf).map(|i| self.values[i])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        StepFunction::from_raw(self.lat.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other)?;
        Ok(StepFunction::from_raw(
            self.lat.clone(),
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        if same_lattice(&self.lat, &other.lat) {
            Ok(())
        } else {
            Err(Error::LatticeMismatch)
        }
    }
}

/// `∫_I f` for every node, indexed by node.
pub fn node_integrals<T: Real>(lat: &Lattice<T>, leaf_values: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); lat.num_nodes()];
    for &id in lat.preorder().iter().rev() {
        out[id.0] = match lat.leaf_position(id) {
            Some(i) => leaf_values[i] * lat.measure(id),
            None => lat.children(id).iter().map(|c| out[c.0]).sum(),
        };
    }
    out
}

/// `⟨f⟩_I` for every node.
pub fn node_averages<T: Real>(lat: &Lattice<T>, leaf_values: &[T]) -> Vec<T> {
    let mut out = node_integrals(lat, leaf_values);
    for id in lat.nodes() {
        out[id.0] /= lat.measure(id);
    }
    out
}

/// Leaf vector whose value on a leaf is `Σ c[I]` over the leaf's ancestors-or-self.
pub fn accumulate_down<T: Real>(lat: &Lattice<T>, c: &[T]) -> Vec<T> {
    fold_down(lat, c, T::zero(), |a, b| a + b)
}

pub(crate) fn fold_down<T: Real>(lat: &Lattice<T>, c: &[T], init: T, op: impl Fn(T, T) -> T) -> Vec<T> {
    let mut acc = vec![init; lat.num_nodes()];
    let mut out = vec![T::zero(); lat.num_leaves()];
    for &id in lat.preorder() {
        let above = lat.parent(id).map_or(init, |p| acc[p.0]);
        acc[id.0] = op(above, c[id.0]);
        if let Some(i) = lat.leaf_position(id) {
            out[i] = acc[id.0];
        }
    }
    out
}

/// Weighted `L^p` norm of a leaf vector; `p = ∞` gives the max.
pub fn weighted_lp<T: Real>(values: &[T], weights: &[T], p: T) -> T {
    if p.is_infinite() {
        return values.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    }
    let scale = values.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let s: T = values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| (v.abs() / scale).powf(p) * w)
        .sum();
    scale * s.powf(T::one() / p)
}

pub fn average<T: Real>(f: &StepFunction<T>, node: NodeId) -> Result<T> {
    let lat = f.lattice();
    lat.check(node)?;
    let r = lat.leaf_range(node);
    let leaves = &lat.leaves()[r.clone()];
    let s: T = f.values()[r].iter().zip(leaves).map(|(&v, &l)| v * lat.measure(l)).sum();
    Ok(s / lat.measure(node))
}

/// `𝔼_I f = ⟨f⟩_I 1_I`.
pub fn expectation<T: Real>(f: &StepFunction<T>, node: NodeId) -> Result<StepFunction<T>> {
    let avg = average(f, node)?;
    Ok(StepFunction::indicator(f.lattice().clone(), node).scale(avg))
}

/// `Δ_I f = Σ_{J ∈ child(I)} 𝔼_J f − 𝔼_I f`.
pub fn difference<T: Real>(f: &StepFunction<T>, node: NodeId) -> Result<StepFunction<T>> {
    let lat = f.lattice();
    lat.check(node)?;
    if lat.is_leaf(node) {
        return Err(Error::LeafNode { node: lat.label(node) });
    }
    let avg = average(f, node)?;
    let mut values = vec![T::zero(); lat.num_leaves()];
    for &c in lat.children(node) {
        let v = average(f, c)? - avg;
        for x in &mut values[lat.leaf_range(c)] {
            *x = v;
        }
    }
    Ok(StepFunction::from_raw(lat.clone(), values))
}

/// Martingale differences at every internal node plus the per-root averages.
#[derive(Clone, Debug)]
pub struct MartDecomp<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    /// Indexed by node; child values of `Δ_I f` in child order, empty for leaves.
    diffs: Vec<Vec<T>>,
    /// Aligned with `lat.roots()`.
    root_avgs: Vec<T>,
}

impl<T: Real> PartialEq for MartDecomp<T> {
    fn eq(&self, other: &Self) -> bool {
        same_lattice(&self.lat, &other.lat) && self.diffs == other.diffs && self.root_avgs == other.root_avgs
    }
}

/// Absolute slack allowed in `Σ v_J |J| = 0`, relative to `Σ |v_J||J|`.
pub const ZERO_MEAN_TOL: f64 = 1e-10;

impl<T: Real> MartDecomp<T> {
    pub fn zeros(lat: Arc<Lattice<T>>) -> Self {
        let diffs = lat.nodes().map(|id| vec![T::zero(); lat.children(id).len()]).collect();
        let root_avgs = vec![T::zero(); lat.roots().len()];
        MartDecomp { lat, diffs, root_avgs }
    }

    /// Assembles a decomposition, checking shapes and the zero-mean invariant.
    ///
    /// `diffs` lists `(node, child values)` pairs; omitted internal nodes get zero.
    /// `root_avgs` lists `(root, average)` pairs; omitted roots get zero.
    pub fn from_parts(
        lat: Arc<Lattice<T>>,
        diffs: impl IntoIterator<Item = (NodeId, Vec<T>)>,
        root_avgs: impl IntoIterator<Item = (NodeId, T)>,
    ) -> Result<Self> {
        let mut d = Self::zeros(lat.clone());
        for (node, vals) in diffs {
            lat.check(node)?;
            if lat.is_leaf(node) {
                return Err(Error::LeafNode { node: lat.label(node) });
            }
            let m = lat.children(node).len();
            if vals.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: vals.len() });
            }
            d.diffs[node.0] = vals;
        }
        for (root, v) in root_avgs {
            let pos = lat
                .roots()
                .iter()
                .position(|&r| r == root)
                .ok_or_else(|| Error::InvalidParameter(format!("node {} is not a root", lat.label(root))))?;
            d.root_avgs[pos] = v;
        }
        d.check_zero_mean()?;
        Ok(d)
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    /// Child values of `Δ_I f`; empty for leaves.
    pub fn diff(&self, node: NodeId) -> &[T] {
        &self.diffs[node.0]
    }

    pub fn root_averages(&self) -> &[T] {
        &self.root_avgs
    }

    pub fn root_average(&self, root: NodeId) -> Option<T> {
        self.lat.roots().iter().position(|&r| r == root).map(|i| self.root_avgs[i])
    }

    /// Value of `Δ_{parent(J)} f` on `J`; zero for roots.
    pub fn value_on_child(&self, child: NodeId) -> T {
        match self.lat.parent(child) {
            None => T::zero(),
            Some(p) => {
                let i = self.lat.children(p).iter().position(|&c| c == child).expect("child");
                self.diffs[p.0][i]
            }
        }
    }

    /// Per-node array holding `Δ_{parent(J)} f` on `J`, zero at roots.
    pub fn child_values(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.lat.num_nodes()];
        for id in self.lat.internal_nodes() {
            for (&c, &v) in self.lat.children(id).iter().zip(&self.diffs[id.0]) {
                out[c.0] = v;
            }
        }
        out
    }

    /// Per-node array holding the root averages at roots and zero elsewhere.
    pub fn root_values(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.lat.num_nodes()];
        for (&r, &v) in self.lat.roots().iter().zip(&self.root_avgs) {
            out[r.0] = v;
        }
        out
    }

    /// `Δ_I f` as a function on the whole lattice.
    pub fn component(&self, node: NodeId) -> StepFunction<T> {
        let mut values = vec![T::zero(); self.lat.num_leaves()];
        for (&c, &v) in self.lat.children(node).iter().zip(&self.diffs[node.0]) {
            for x in &mut values[self.lat.leaf_range(c)] {
                *x = v;
            }
        }
        StepFunction::from_raw(self.lat.clone(), values)
    }

    /// Applies `f(node, child values)` to every difference; roots untouched.
    pub fn map_diffs(&self, f: impl Fn(NodeId, &[T]) -> Vec<T>) -> Result<Self> {
        let diffs = self.lat.internal_nodes().map(|id| (id, f(id, &self.diffs[id.0])));
        let roots = self.lat.roots().iter().copied().zip(self.root_avgs.iter().copied());
        Self::from_parts(self.lat.clone(), diffs.collect::<Vec<_>>(), roots.collect::<Vec<_>>())
    }

    /// Tolerance is relative to `Σ|Δ|·|J|` plus the rounding of `⟨f⟩_I·|I|`.
    pub fn check_zero_mean(&self) -> Result<()> {
        let mut level = self.root_values();
        for &id in self.lat.preorder() {
            for (&c, &v) in self.lat.children(id).iter().zip(&self.diffs[id.0]) {
                level[c.0] = level[id.0] + v;
            }
        }
        for id in self.lat.internal_nodes() {
            let (mut s, mut a) = (T::zero(), level[id.0].abs() * self.lat.measure(id));
            for (&c, &v) in self.lat.children(id).iter().zip(&self.diffs[id.0]) {
                let m = self.lat.measure(c);
                if !v.is_finite() {
                    return Err(Error::InvalidParameter("non-finite difference value".into()));
                }
                s += v * m;
                a += v.abs() * m;
            }
            if s.abs() > T::tol(ZERO_MEAN_TOL) * a {
                return Err(Error::ZeroMeanViolated {
                    node: self.lat.label(id),
                    residual: s.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }
}

pub fn decompose<T: Real>(f: &StepFunction<T>) -> MartDecomp<T> {
    let lat = f.lattice();
    let avg = node_averages(lat, f.values());
    let diffs = lat
        .nodes()
        .map(|id| lat.children(id).iter().map(|c| avg[c.0] - avg[id.0]).collect())
        .collect();
    let root_avgs = lat.roots().iter().map(|r| avg[r.0]).collect();
    MartDecomp {
        lat: lat.clone(),
        diffs,
        root_avgs,
    }
}

pub fn reconstruct<T: Real>(d: &MartDecomp<T>) -> Result<StepFunction<T>> {
    d.check_zero_mean()?;
    let lat = d.lattice();
    let mut c = d.child_values();
    for (&r, &v) in lat.roots().iter().zip(d.root_averages()) {
        c[r.0] = v;
    }
    Ok(StepFunction::from_raw(lat.clone(), accumulate_down(lat, &c)))
}

pub fn lp_norm<T: Real>(f: &StepFunction<T>, p: T) -> Result<T> {
    check_exponent("p", p.to_f64_lossy(), 1.0, true, f64::INFINITY, true, "[1, ∞]")?;
    Ok(weighted_lp(f.values(), &f.lattice().leaf_measures(), p))
}

/// Pointwise `(Σ_I |Δ_I f|^q [+ Σ_roots |𝔼 f|^q])^{1/q}` as a leaf vector.
fn q_aggregate<T: Real>(d: &MartDecomp<T>, q: T, extended: bool) -> Vec<T> {
    let lat = d.lattice();
    let mut c = d.child_values();
    if extended {
        for (&r, &v) in lat.roots().iter().zip(d.root_averages()) {
            c[r.0] = v;
        }
    }
    if q.is_infinite() {
        return fold_down(lat, &c.iter().map(|v| v.abs()).collect::<Vec<_>>(), T::zero(), T::max);
    }
    let powered: Vec<T> = c.iter().map(|v| v.abs().powf(q)).collect();
    accumulate_down(lat, &powered).into_iter().map(|s| s.powf(T::one() / q)).collect()
}

pub fn square_function<T: Real>(d: &MartDecomp<T>, extended: bool) -> StepFunction<T> {
    StepFunction::from_raw(d.lattice().clone(), q_aggregate(d, T::lit(2.0), extended))
}

/// `Mf(x) = sup_{I ∋ x} |⟨f⟩_I|`.
pub fn maximal_function<T: Real>(f: &StepFunction<T>) -> StepFunction<T> {
    let lat = f.lattice();
    let avg: Vec<T> = node_averages(lat, f.values()).into_iter().map(|a| a.abs()).collect();
    StepFunction::from_raw(lat.clone(), fold_down(lat, &avg, T::zero(), T::max))
}

/// `‖(Σ_I |Δ_I f|^q)^{1/q}‖_p`, with the root averages added when `extended`.
///
/// Accepts `q = 1` as well as `q ∈ (1, ∞)`.
pub fn hpq_norm<T: Real>(d: &MartDecomp<T>, p: T, q: T, extended: bool) -> Result<T> {
    check_exponent("p", p.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    check_exponent("q", q.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    let agg = q_aggregate(d, q, extended);
    Ok(weighted_lp(&agg, &d.lattice().leaf_measures(), p))
}

/// Default damping for [`a1_majorant`]: `1/(2p')`.
///
/// Doob's inequality gives `‖M‖_{p→p} ≤ p'` on every lattice, so this is admissible.
pub fn a1_gamma<T: Real>(p: T) -> T {
    T::one() / (T::lit(2.0) * conjugate(p))
}

/// `f̃ = Σ_k γ^k M^k f` with `γ = 1/(2p')`.
pub fn a1_majorant<T: Real>(f: &StepFunction<T>, p: T) -> Result<StepFunction<T>> {
    check_exponent("p", p.to_f64_lossy(), 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    a1_majorant_with(f, a1_gamma(p))
}

/// Same series with an explicit `γ ∈ (0, 1)`.
pub fn a1_majorant_with<T: Real>(f: &StepFunction<T>, gamma: T) -> Result<StepFunction<T>> {
    if f.values().iter().any(|&v| v < T::zero()) {
        return Err(Error::NegativeInput);
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let stop = T::tol(1e-12);
    let mut sum = f.values().to_vec();
    let mut term = f.clone();
    let mut weight = T::one();
    for _ in 0..10_000 {
        term = maximal_function(&term);
        weight *= gamma;
        let mut inc = T::zero();
        for (s, &t) in sum.iter_mut().zip(term.values()) {
            let add = weight * t;
            *s += add;
            inc = inc.max(add);
        }
        if inc < stop {
            break;
        }
    }
    Ok(StepFunction::from_raw(f.lattice().clone(), sum))
}

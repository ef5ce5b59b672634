//! Paraproducts, martingale transforms and their commutators as dense operators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_exponent, Error, Result};
use crate::gspace::{SlotLayout, SlotOp};
use crate::lattice::{Lattice, NodeId};
use crate::matrix::Matrix;
use crate::mfunc::{accumulate_down, node_averages, same_lattice, StepFunction};
use crate::num::Real;

/// Dense operator on leaf-value vectors of one lattice.
#[derive(Clone, Debug)]
pub struct LinearOp<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    matrix: Matrix<T>,
}

impl<T: Real> LinearOp<T> {
    pub fn new(lat: Arc<Lattice<T>>, matrix: Matrix<T>) -> Result<Self> {
        let n = lat.num_leaves();
        if matrix.rows() != n || matrix.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if matrix.rows() != n { matrix.rows() } else { matrix.cols() },
            });
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidParameter("non-finite operator entry".into()));
        }
        Ok(LinearOp { lat, matrix })
    }

    /// Materializes a linear map given by its action on leaf vectors.
    pub fn from_action(lat: Arc<Lattice<T>>, action: impl Fn(&[T]) -> Vec<T> + Sync) -> Self {
        let n = lat.num_leaves();
        let cols: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                action(&e)
            })
            .collect();
        LinearOp {
            matrix: Matrix::from_columns(n, &cols),
            lat,
        }
    }

    pub fn identity(lat: Arc<Lattice<T>>) -> Self {
        let n = lat.num_leaves();
        LinearOp {
            lat,
            matrix: Matrix::identity(n),
        }
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn apply(&self, f: &StepFunction<T>) -> Result<StepFunction<T>> {
        if !same_lattice(f.lattice(), &self.lat) {
            return Err(Error::LatticeMismatch);
        }
        StepFunction::new(self.lat.clone(), self.matrix.matvec(f.values()))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if same_lattice(&self.lat, &other.lat) {
            Ok(())
        } else {
            Err(Error::LatticeMismatch)
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(LinearOp {
            lat: self.lat.clone(),
            matrix: self.matrix.matmul(&other.matrix),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(LinearOp {
            lat: self.lat.clone(),
            matrix: self.matrix.add(&other.matrix),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(LinearOp {
            lat: self.lat.clone(),
            matrix: self.matrix.sub(&other.matrix),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        LinearOp {
            lat: self.lat.clone(),
            matrix: self.matrix.scale(s),
        }
    }

    /// Adjoint with respect to `⟨f, g⟩ = Σ f_ℓ g_ℓ |ℓ|`.
    pub fn weighted_adjoint(&self) -> Self {
        let w = self.lat.leaf_measures();
        let m = Matrix::from_fn(w.len(), w.len(), |i, j| self.matrix[(j, i)] * w[j] / w[i]);
        LinearOp {
            lat: self.lat.clone(),
            matrix: m,
        }
    }
}

/// `AB − BA`.
pub fn commutator<T: Real>(a: &LinearOp<T>, b: &LinearOp<T>) -> Result<LinearOp<T>> {
    a.compose(b)?.sub(&b.compose(a)?)
}

/// Operators that [`assemble`] can build from a symbol `b`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ParaKind {
    /// `M_b f = b f`.
    Mult,
    /// `π_b f = Σ_I (Δ_I b) 𝔼_I f`.
    Pi,
    /// `π_b^* f = Σ_I 𝔼_I((Δ_I b)(Δ_I f))`.
    PiStar,
    /// `π_b^{(*)} f = Σ_I (Δ_I b)(Δ_I f)`.
    PiExtStar,
    /// `Λ_b f = Σ_I Δ_I(b Δ_I f)`.
    Lambda,
    /// `Λ_b^0 f = Σ_I (𝔼_I b)(Δ_I f)`.
    Lambda0,
    /// `Λ_b^1 f = Σ_I Δ_I((Δ_I b)(Δ_I f))`.
    Lambda1,
    /// `R_b f = Σ_roots (𝔼 b)(𝔼 f)`.
    Remainder,
}

impl ParaKind {
    pub const ALL: [ParaKind; 8] = [
        ParaKind::Mult,
        ParaKind::Pi,
        ParaKind::PiStar,
        ParaKind::PiExtStar,
        ParaKind::Lambda,
        ParaKind::Lambda0,
        ParaKind::Lambda1,
        ParaKind::Remainder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParaKind::Mult => "mult",
            ParaKind::Pi => "pi",
            ParaKind::PiStar => "pi_star",
            ParaKind::PiExtStar => "pi_extstar",
            ParaKind::Lambda => "lambda",
            ParaKind::Lambda0 => "lambda0",
            ParaKind::Lambda1 => "lambda1",
            ParaKind::Remainder => "remainder",
        }
    }
}

impl fmt::Display for ParaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParaKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown operator kind {s:?}")))
    }
}

/// Precomputed averages and differences of the symbol.
struct Symbol<T> {
    avg: Vec<T>,
    /// `Δ_{parent(J)} b` on `J`, zero at roots.
    diff: Vec<T>,
}

fn child_diffs<T: Real>(lat: &Lattice<T>, avg: &[T]) -> Vec<T> {
    lat.nodes()
        .map(|id| lat.parent(id).map_or(T::zero(), |p| avg[id.0] - avg[p.0]))
        .collect()
}

/// `(1/|I|) Σ_{J ∈ child(I)} |J| v_J` for every internal node.
fn child_means<T: Real>(lat: &Lattice<T>, v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); lat.num_nodes()];
    for id in lat.internal_nodes() {
        let s: T = lat.children(id).iter().map(|&c| lat.measure(c) * v[c.0]).sum();
        out[id.0] = s / lat.measure(id);
    }
    out
}

fn apply_kind<T: Real>(kind: ParaKind, lat: &Lattice<T>, b: &Symbol<T>, bvals: &[T], f: &[T]) -> Vec<T> {
    if kind == ParaKind::Mult {
        return bvals.iter().zip(f).map(|(&x, &y)| x * y).collect();
    }
    let af = node_averages(lat, f);
    let df = child_diffs(lat, &af);
    let mut c = vec![T::zero(); lat.num_nodes()];
    let parent_avg = |v: &[T], id: NodeId| lat.parent(id).map_or(T::zero(), |p| v[p.0]);
    match kind {
        ParaKind::Mult => unreachable!(),
        ParaKind::Pi => {
            for id in lat.nodes() {
                c[id.0] = b.diff[id.0] * parent_avg(&af, id);
            }
        }
        ParaKind::PiStar => {
            let prod: Vec<T> = b.diff.iter().zip(&df).map(|(&x, &y)| x * y).collect();
            c = child_means(lat, &prod);
        }
        ParaKind::PiExtStar => {
            for id in lat.nodes() {
                c[id.0] = b.diff[id.0] * df[id.0];
            }
        }
        ParaKind::Lambda => {
            let prod: Vec<T> = b.avg.iter().zip(&df).map(|(&x, &y)| x * y).collect();
            let m = child_means(lat, &prod);
            for id in lat.nodes() {
                if lat.parent(id).is_some() {
                    c[id.0] = prod[id.0] - parent_avg(&m, id);
                }
            }
        }
        ParaKind::Lambda0 => {
            for id in lat.nodes() {
                c[id.0] = parent_avg(&b.avg, id) * df[id.0];
            }
        }
        ParaKind::Lambda1 => {
            let prod: Vec<T> = b.diff.iter().zip(&df).map(|(&x, &y)| x * y).collect();
            let m = child_means(lat, &prod);
            for id in lat.nodes() {
                if lat.parent(id).is_some() {
                    c[id.0] = prod[id.0] - parent_avg(&m, id);
                }
            }
        }
        ParaKind::Remainder => {
            for &r in lat.roots() {
                c[r.0] = b.avg[r.0] * af[r.0];
            }
        }
    }
    accumulate_down(lat, &c)
}

/// Builds the named operator with symbol `b` on `lat`.
pub fn assemble<T: Real>(kind: ParaKind, b: &StepFunction<T>, lat: &Arc<Lattice<T>>) -> Result<LinearOp<T>> {
    if !same_lattice(b.lattice(), lat) {
        return Err(Error::LatticeMismatch);
    }
    let avg = node_averages(lat, b.values());
    let sym = Symbol {
        diff: child_diffs(lat, &avg),
        avg,
    };
    let bvals = b.values().to_vec();
    Ok(LinearOp::from_action(lat.clone(), |f| apply_kind(kind, lat, &sym, &bvals, f)))
}

/// Largest entrywise residual among the three paraproduct identities:
/// `M_b − R_b = π^{(*)} + Λ⁰ + π`, `M_b − R_b = π^* + Λ + π`, `Λ = Λ⁰ + Λ¹`.
pub fn verify_decomposition<T: Real>(b: &StepFunction<T>, lat: &Arc<Lattice<T>>) -> Result<T> {
    let get = |k| assemble(k, b, lat);
    let mb = get(ParaKind::Mult)?;
    let r = get(ParaKind::Remainder)?;
    let pi = get(ParaKind::Pi)?;
    let pis = get(ParaKind::PiStar)?;
    let pie = get(ParaKind::PiExtStar)?;
    let lam = get(ParaKind::Lambda)?;
    let l0 = get(ParaKind::Lambda0)?;
    let l1 = get(ParaKind::Lambda1)?;
    let lhs = mb.sub(&r)?;
    let e1 = lhs.sub(&pie.add(&l0)?.add(&pi)?)?.matrix().max_abs();
    let e2 = lhs.sub(&pis.add(&lam)?.add(&pi)?)?.matrix().max_abs();
    let e3 = lam.sub(&l0.add(&l1)?)?.matrix().max_abs();
    Ok(e1.max(e2).max(e3))
}

/// Family `{b^I}` with `b^I` supported on `I` and constant on its children.
///
/// Stored as child values for internal nodes and a single value for leaves.
#[derive(Clone, Debug)]
pub struct Family<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    members: BTreeMap<NodeId, Vec<T>>,
}

impl<T: Real> Family<T> {
    pub fn new(lat: Arc<Lattice<T>>) -> Self {
        Family {
            lat,
            members: BTreeMap::new(),
        }
    }

    /// Sets `b^I` from its values on the children of `I` (one value for a leaf).
    pub fn set(&mut self, node: NodeId, values: Vec<T>) -> Result<()> {
        self.lat.check(node)?;
        let m = self.lat.children(node).len().max(1);
        if values.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: values.len() });
        }
        self.members.insert(node, values);
        Ok(())
    }

    /// Reads `b^I` off a step function, rejecting ones not supported on `I`
    /// or not constant on its children.
    pub fn set_function(&mut self, node: NodeId, g: &StepFunction<T>) -> Result<()> {
        let lat = self.lat.clone();
        if !same_lattice(g.lattice(), &lat) {
            return Err(Error::LatticeMismatch);
        }
        lat.check(node)?;
        let range = lat.leaf_range(node);
        let bad = || Error::SupportViolation { node: lat.label(node) };
        if g.values()[..range.start].iter().chain(&g.values()[range.end..]).any(|&v| v != T::zero()) {
            return Err(bad());
        }
        let cells: Vec<NodeId> = if lat.is_leaf(node) {
            vec![node]
        } else {
            lat.children(node).to_vec()
        };
        let mut vals = Vec::with_capacity(cells.len());
        for c in cells {
            let seg = &g.values()[lat.leaf_range(c)];
            if seg.iter().any(|&v| v != seg[0]) {
                return Err(bad());
            }
            vals.push(seg[0]);
        }
        self.members.insert(node, vals);
        Ok(())
    }

    /// `b^I = Δ_I b`.
    pub fn differences(b: &StepFunction<T>) -> Self {
        let lat = b.lattice().clone();
        let avg = node_averages(&lat, b.values());
        let members = lat
            .internal_nodes()
            .map(|id| (id, lat.children(id).iter().map(|c| avg[c.0] - avg[id.0]).collect()))
            .collect();
        Family { lat, members }
    }

    /// `b^I = 1_I` for every node.
    pub fn indicators(lat: Arc<Lattice<T>>) -> Self {
        let members = lat
            .nodes()
            .map(|id| (id, vec![T::one(); lat.children(id).len().max(1)]))
            .collect();
        Family { lat, members }
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    pub fn get(&self, node: NodeId) -> Option<&[T]> {
        self.members.get(&node).map(|v| v.as_slice())
    }

    /// Value of `b^owner` on `cell` (a child of `owner`, or the leaf itself).
    fn value(&self, owner: NodeId, cell: NodeId) -> T {
        match self.members.get(&owner) {
            None => T::zero(),
            Some(v) if owner == cell => {
                if self.lat.is_leaf(owner) {
                    v[0]
                } else {
                    T::zero()
                }
            }
            Some(v) => {
                let i = self.lat.children(owner).iter().position(|&c| c == cell);
                i.map_or(T::zero(), |i| v[i])
            }
        }
    }

    fn slot_values(&self, layout: &SlotLayout<T>) -> Vec<T> {
        layout.slots().iter().map(|s| self.value(s.owner, s.cell)).collect()
    }
}

/// `f ↦ {⟨f⟩_I b^I}` into the family layout (one slot per child cell, plus leaf cells).
pub fn generalized_paraproduct<T: Real>(family: &Family<T>) -> SlotOp<T> {
    let lat = family.lattice().clone();
    let layout = SlotLayout::differences(lat.clone(), true);
    let vals = family.slot_values(&layout);
    let n = lat.num_leaves();
    let mut m = Matrix::zeros(layout.len(), n);
    for (row, (s, &v)) in layout.slots().iter().zip(&vals).enumerate() {
        if v == T::zero() {
            continue;
        }
        let inv = v / lat.measure(s.owner);
        for leaf in lat.leaf_range(s.owner) {
            m[(row, leaf)] = inv * lat.measure(lat.leaves()[leaf]);
        }
    }
    SlotOp::new(layout, m).expect("layout shape")
}

/// `π_b` as a family-valued map, so that its norm is taken in `H^p_q` (roots excluded).
pub fn paraproduct_family_op<T: Real>(b: &StepFunction<T>) -> SlotOp<T> {
    generalized_paraproduct(&Family::differences(b))
}

/// `K = sup_I ((1/|I|) ∫_I (Σ_{J⊆I} |b^J|^q)^{p/q})^{1/p}` for a family.
pub fn testing_constant_family<T: Real>(family: &Family<T>, p: T, q: T) -> Result<T> {
    check_exponent("p", p.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    check_exponent("q", q.to_f64_lossy(), 1.0, true, f64::INFINITY, false, "[1, ∞)")?;
    let layout = SlotLayout::differences(family.lattice().clone(), true);
    let w: Vec<T> = family.slot_values(&layout).into_iter().map(|v| v.abs().powf(q)).collect();
    Ok(layout.local_sup(&w, q, p))
}

/// Testing constant of `π_b`, i.e. of the family `Δ_J b`.
pub fn testing_constant<T: Real>(b: &StepFunction<T>, p: T, q: T) -> Result<T> {
    testing_constant_family(&Family::differences(b), p, q)
}

/// Blocks `T_I` acting on the difference spaces `D_I`, in child-value coordinates.
#[derive(Clone, Debug)]
pub struct TransformBlocks<T: Real = f64> {
    lat: Arc<Lattice<T>>,
    blocks: BTreeMap<NodeId, Matrix<T>>,
}

/// Slack in `w · (B v) = 0` relative to `Σ w |B v|`.
pub const BLOCK_TOL: f64 = 1e-10;

fn child_weights<T: Real>(lat: &Lattice<T>, node: NodeId) -> Vec<T> {
    lat.children(node).iter().map(|&c| lat.measure(c)).collect()
}

/// `v ↦ v − (w·v / Σw) 1`, the weighted orthogonal projection onto zero mean.
fn mean_projection<T: Real>(w: &[T]) -> Matrix<T> {
    let total: T = w.iter().copied().sum();
    Matrix::from_fn(w.len(), w.len(), |i, j| {
        let id = if i == j { T::one() } else { T::zero() };
        id - w[j] / total
    })
}

impl<T: Real> TransformBlocks<T> {
    pub fn new(lat: Arc<Lattice<T>>, blocks: impl IntoIterator<Item = (NodeId, Matrix<T>)>) -> Result<Self> {
        let mut out = TransformBlocks {
            lat,
            blocks: BTreeMap::new(),
        };
        for (node, b) in blocks {
            out.insert(node, b)?;
        }
        Ok(out)
    }

    pub fn empty(lat: Arc<Lattice<T>>) -> Self {
        TransformBlocks {
            lat,
            blocks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, node: NodeId, block: Matrix<T>) -> Result<()> {
        let lat = &self.lat;
        lat.check(node)?;
        if lat.is_leaf(node) {
            return Err(Error::LeafNode { node: lat.label(node) });
        }
        let w = child_weights(lat, node);
        let m = w.len();
        if block.rows() != m || block.cols() != m {
            return Err(Error::DimensionMismatch { expected: m, got: block.rows() });
        }
        if !block.is_finite() {
            return Err(Error::InvalidParameter("non-finite block entry".into()));
        }
        for k in 1..m {
            let mut v = vec![T::zero(); m];
            v[k] = T::one() / w[k];
            v[0] = -T::one() / w[0];
            let bv = block.matvec(&v);
            let s: T = bv.iter().zip(&w).map(|(&x, &wi)| x * wi).sum();
            let a: T = bv.iter().zip(&w).map(|(&x, &wi)| x.abs() * wi).sum();
            if s.abs() > T::tol(BLOCK_TOL) * a {
                return Err(Error::ZeroMeanViolated {
                    node: lat.label(node),
                    residual: s.to_f64_lossy(),
                });
            }
        }
        self.blocks.insert(node, block);
        Ok(())
    }

    /// Every block is the identity.
    pub fn identity(lat: Arc<Lattice<T>>) -> Self {
        Self::multiplier(lat, |_| T::one())
    }

    /// Scalar blocks `ε_I`.
    pub fn multiplier(lat: Arc<Lattice<T>>, eps: impl Fn(NodeId) -> T) -> Self {
        let blocks = lat
            .internal_nodes()
            .map(|id| (id, Matrix::identity(lat.children(id).len()).scale(eps(id))))
            .collect();
        TransformBlocks { lat, blocks }
    }

    /// Blocks `P G P` where `G` has uniform entries in `[-1, 1]` and `P` removes the mean.
    pub fn random<R: Rng>(lat: Arc<Lattice<T>>, rng: &mut R) -> Self {
        let blocks = lat
            .internal_nodes()
            .map(|id| {
                let w = child_weights(&lat, id);
                let p = mean_projection(&w);
                let g = Matrix::from_fn(w.len(), w.len(), |_, _| T::lit(rng.gen_range(-1.0..1.0)));
                (id, p.matmul(&g).matmul(&p))
            })
            .collect();
        TransformBlocks { lat, blocks }
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lat
    }

    pub fn block(&self, node: NodeId) -> Option<&Matrix<T>> {
        self.blocks.get(&node)
    }

    pub fn blocks(&self) -> &BTreeMap<NodeId, Matrix<T>> {
        &self.blocks
    }

    /// Blocks of `T^*` for the `L²` pairing, restricted to the difference spaces.
    pub fn adjoint(&self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|(&id, b)| {
                let w = child_weights(&self.lat, id);
                let p = mean_projection(&w);
                let bt = Matrix::from_fn(w.len(), w.len(), |i, j| b[(j, i)] * w[j] / w[i]);
                (id, p.matmul(&bt).matmul(&p))
            })
            .collect();
        TransformBlocks {
            lat: self.lat.clone(),
            blocks,
        }
    }

    /// `f ↦ Σ_I T_I Δ_I f` on a leaf vector.
    pub fn apply_values(&self, f: &[T]) -> Vec<T> {
        let lat = &self.lat;
        let af = node_averages(lat, f);
        let mut c = vec![T::zero(); lat.num_nodes()];
        for (&id, b) in &self.blocks {
            let ch = lat.children(id);
            let d: Vec<T> = ch.iter().map(|k| af[k.0] - af[id.0]).collect();
            for (k, v) in ch.iter().zip(b.matvec(&d)) {
                c[k.0] = v;
            }
        }
        accumulate_down(lat, &c)
    }
}

/// `T` as a dense operator.
pub fn transform_operator<T: Real>(t: &TransformBlocks<T>) -> LinearOp<T> {
    LinearOp::from_action(t.lattice().clone(), |f| t.apply_values(f))
}

//! Explicit constructions: the averaging chain, the four-child basis tree, the
//! swap-block mixing example and the divergent BMO chain, plus drivers that
//! tabulate their measured behavior.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::error::{check_exponent, Error, Result};
use crate::gspace::{bmoq_norm, gpq_norm, CoefSequence};
use crate::lattice::{Lattice, NodeId, NodeSpec};
use crate::matrix::Matrix;
use crate::mfunc::{hpq_norm, reconstruct, MartDecomp, StepFunction};
use crate::mixing::nondegeneracy_cert;
use crate::num::Real;
use crate::opnorm;
use crate::paraprod::{assemble, commutator, transform_operator, ParaKind, TransformBlocks};

/// Seed used by drivers that need a randomized norm estimate.
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Cap constant used for the capped mixing certificates in the commutator driver.
pub const MIXING_K: f64 = 10.0;

/// Chain `I_0 ⊃ I_1 ⊃ … ⊃ I_n` with `|I_0| = 1`, `|I_k| = r^k`, `r = 1 − 1/n`;
/// `I_{k−1}` splits into `(I_k, J_k)`. Labels: `I_k = k`, `J_k = n + k`.
pub fn averaging_chain_lattice<T: Real>(n: usize) -> Result<Lattice<T>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("averaging chain needs n ≥ 2, got {n}")));
    }
    let nn = T::from_usize(n).expect("n");
    let r = T::one() - T::one() / nn;
    let mut specs = vec![NodeSpec::new(0, None, T::one())];
    for k in 1..=n {
        let parent = (k - 1) as i64;
        specs.push(NodeSpec::new(k as i64, Some(parent), r.powi(k as i32)));
        specs.push(NodeSpec::new((n + k) as i64, Some(parent), r.powi(k as i32 - 1) / nn));
    }
    Lattice::assemble(&specs)
}

/// Decomposition `Δ_{I_{k−1}} f = 1_{J_k} − α 1_{I_k}`, `α = 1/(n−1)`, root average 0.
///
/// Accepts `n = 2` (where `α = 1`) for boundary checks.
pub fn averaging_chain<T: Real>(n: usize) -> Result<(Arc<Lattice<T>>, MartDecomp<T>)> {
    let lat = Arc::new(averaging_chain_lattice::<T>(n)?);
    let alpha = T::one() / T::from_usize(n - 1).expect("n");
    let diffs: Vec<(NodeId, Vec<T>)> = (0..n)
        .map(|k| (lat.resolve(k as i64).expect("chain node"), vec![-alpha, T::one()]))
        .collect();
    let d = MartDecomp::from_parts(lat.clone(), diffs, [])?;
    Ok((lat, d))
}

pub fn gen_avg_counterexample<T: Real>(n: usize) -> Result<(Arc<Lattice<T>>, MartDecomp<T>)> {
    if n <= 2 {
        return Err(Error::InvalidParameter(format!("n must exceed 2, got {n}")));
    }
    averaging_chain(n)
}

/// `s_I = (⟨|Δ_I f|^p⟩_I)^{1/p}` over the internal nodes.
pub fn averaged_sequence<T: Real>(d: &MartDecomp<T>, p: T) -> CoefSequence<T> {
    let lat = d.lattice();
    let entries = lat.internal_nodes().map(|id| {
        let s: T = lat
            .children(id)
            .iter()
            .zip(d.diff(id))
            .map(|(&c, &v)| v.abs().powf(p) * lat.measure(c))
            .sum();
        (id, (s / lat.measure(id)).powf(T::one() / p))
    });
    CoefSequence::from_entries(lat.clone(), entries.collect::<Vec<_>>()).expect("nodes of the lattice")
}

/// Both sides of the averaged square-function comparison: `(LHS, RHS)` with
/// `LHS = ‖(Σ s_I² 1_I)^{1/2}‖_p` and `RHS = ‖(Σ |Δ_I f|²)^{1/2}‖_p`.
pub fn averaged_sides<T: Real>(d: &MartDecomp<T>, p: T) -> Result<(T, T)> {
    let two = T::lit(2.0);
    let lhs = gpq_norm(&averaged_sequence(d, p), p, two)?;
    let rhs = hpq_norm(d, p, two, false)?;
    Ok((lhs, rhs))
}

/// One measured row: parameter columns, then measured columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub params: Vec<(String, f64)>,
    pub measured: Vec<(String, f64)>,
    pub seed: Option<u64>,
}

impl ExperimentRow {
    fn new(params: &[(&str, f64)], measured: &[(&str, f64)], seed: Option<u64>) -> Self {
        let own = |v: &[(&str, f64)]| v.iter().map(|&(k, x)| (k.to_string(), x)).collect();
        ExperimentRow {
            params: own(params),
            measured: own(measured),
            seed,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.params
            .iter()
            .chain(&self.measured)
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in self.params.iter().chain(&self.measured) {
            m.insert(k.clone(), Value::from(*v));
        }
        m.insert("seed".into(), self.seed.map_or(Value::Null, Value::from));
        Value::Object(m)
    }
}

/// Header row plus one line per row; columns follow the first row.
pub fn rows_to_csv(rows: &[ExperimentRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut cols: Vec<&str> = first.params.iter().chain(&first.measured).map(|(k, _)| k.as_str()).collect();
    cols.push("seed");
    let mut out = cols.join(",");
    out.push('\n');
    for r in rows {
        let mut cells: Vec<String> = r.params.iter().chain(&r.measured).map(|(_, v)| format!("{v}")).collect();
        cells.push(r.seed.map_or(String::new(), |s| s.to_string()));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn rows_to_json(rows: &[ExperimentRow]) -> String {
    let v: Vec<Value> = rows.iter().map(ExperimentRow::to_json).collect();
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

/// Columns: `n, p, q, lhs, rhs, ratio, log2_ratio`.
pub fn run_avg_experiment(p: f64, ns: &[usize]) -> Result<Vec<ExperimentRow>> {
    check_exponent("p", p, 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    if p == 2.0 {
        return Err(Error::ExponentOutOfRange {
            name: "p",
            value: p,
            range: "(1, 2) ∪ (2, ∞)",
        });
    }
    ns.par_iter()
        .map(|&n| {
            let (_, d) = gen_avg_counterexample::<f64>(n)?;
            let (lhs, rhs) = averaged_sides(&d, p)?;
            let ratio = lhs / rhs;
            Ok(ExperimentRow::new(
                &[("n", n as f64), ("p", p), ("q", 2.0)],
                &[("lhs", lhs), ("rhs", rhs), ("ratio", ratio), ("log2_ratio", ratio.log2())],
                None,
            ))
        })
        .collect()
}

/// Four children per node, `(I-left, I-right, J-left, J-right)`, with measures
/// `(1 − 1/n)/2` and `1/(2n)` of the parent; recursion continues on both I-halves.
pub fn basis_tree_lattice<T: Real>(n: usize, levels: usize) -> Result<Lattice<T>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("basis tree needs n ≥ 2, got {n}")));
    }
    if levels > 20 {
        return Err(Error::InvalidParameter(format!("too many levels: {levels}")));
    }
    let nn = T::from_usize(n).expect("n");
    let half = T::lit(0.5);
    let (fi, fj) = ((T::one() - T::one() / nn) * half, half / nn);
    let mut specs = vec![NodeSpec::new(0, None, T::one())];
    let mut frontier = vec![(0i64, T::one())];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (parent, m) in frontier {
            for (k, f) in [fi, fi, fj, fj].into_iter().enumerate() {
                let id = specs.len() as i64;
                specs.push(NodeSpec::new(id, Some(parent), m * f));
                if k < 2 {
                    next.push((id, m * f));
                }
            }
        }
        frontier = next;
    }
    Lattice::assemble(&specs)
}

/// `β` solving `‖Δ_I f‖_p = ‖Δ_I g‖_p` for the basis tree blocks.
pub fn basis_beta<T: Real>(n: usize, p: T) -> T {
    let nn = T::from_usize(n).expect("n");
    let alpha = T::one() / (nn - T::one());
    (T::one() / nn + (T::one() - T::one() / nn) * alpha.powf(p)).powf(T::one() / p)
}

/// `Δf = h_J + α h_I` and `Δg = β(h_J + h_I)` at every internal node, with Haar
/// functions `h = 1_right − 1_left`; both root averages are 1.
pub fn gen_basis_counterexample<T: Real>(
    n: usize,
    levels: usize,
    p: T,
) -> Result<(Arc<Lattice<T>>, MartDecomp<T>, MartDecomp<T>)> {
    if n <= 2 {
        return Err(Error::InvalidParameter(format!("n must exceed 2, got {n}")));
    }
    check_exponent("p", p.to_f64_lossy(), 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    let lat = Arc::new(basis_tree_lattice::<T>(n, levels)?);
    let alpha = T::one() / T::from_usize(n - 1).expect("n");
    let beta = basis_beta(n, p);
    let one = T::one();
    let fd: Vec<_> = lat.internal_nodes().map(|id| (id, vec![-alpha, alpha, -one, one])).collect();
    let gd: Vec<_> = lat
        .internal_nodes()
        .map(|id| (id, vec![-beta, beta, -beta, beta]))
        .collect();
    let root = lat.roots()[0];
    let f = MartDecomp::from_parts(lat.clone(), fd, [(root, one)])?;
    let g = MartDecomp::from_parts(lat.clone(), gd, [(root, one)])?;
    Ok((lat, f, g))
}

/// Columns: `n, levels, p, beta, sf_norm, sg_norm`.
pub fn run_basis_experiment(n: usize, levels: usize, p: f64) -> Result<Vec<ExperimentRow>> {
    let (_, f, g) = gen_basis_counterexample::<f64>(n, levels, p)?;
    let sf = hpq_norm(&f, p, 2.0, true)?;
    let sg = hpq_norm(&g, p, 2.0, true)?;
    Ok(vec![ExperimentRow::new(
        &[("n", n as f64), ("levels", levels as f64), ("p", p)],
        &[("beta", basis_beta(n, p)), ("sf_norm", sf), ("sg_norm", sg)],
        None,
    )])
}

/// Root chain of 8-child nodes; child 0 of chain node `j` is the block for
/// `deltas[j]`, child 7 continues the chain. Block children: four of measure
/// `|B|δ/(4(1+δ))` followed by four of `|B|/(4(1+δ))`.
pub fn mixing_lattice<T: Real>(deltas: &[T]) -> Result<Lattice<T>> {
    check_deltas(deltas)?;
    let eighth = T::lit(0.125);
    let quarter = T::lit(0.25);
    let mut specs = vec![NodeSpec::new(0, None, T::one())];
    let mut chain = (0i64, T::one());
    for (j, &delta) in deltas.iter().enumerate() {
        let (c, m) = chain;
        let child = m * eighth;
        let first = specs.len() as i64;
        for k in 0..8 {
            specs.push(NodeSpec::new(first + k, Some(c), child));
        }
        let block = first;
        let small = child * delta * quarter / (T::one() + delta);
        let large = child * quarter / (T::one() + delta);
        for k in 0..8 {
            let id = specs.len() as i64;
            specs.push(NodeSpec::new(id, Some(block), if k < 4 { small } else { large }));
        }
        if j + 1 < deltas.len() {
            chain = (first + 7, child);
        }
    }
    Lattice::assemble(&specs)
}

fn check_deltas<T: Real>(deltas: &[T]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("at least one δ is required".into()));
    }
    for &d in deltas {
        if !(d > T::zero() && d < T::one()) {
            return Err(Error::InvalidParameter(format!("δ must lie in (0, 1), got {d}")));
        }
    }
    Ok(())
}

/// Block nodes of a mixing lattice, in `deltas` order.
pub fn mixing_blocks<T: Real>(lat: &Lattice<T>) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut chain = lat.roots().first().copied();
    while let Some(c) = chain {
        let ch = lat.children(c);
        if ch.len() != 8 {
            break;
        }
        out.push(ch[0]);
        chain = Some(ch[7]).filter(|&n| !lat.is_leaf(n));
    }
    out
}

/// Swap block in child coordinates: `h^1 ↔ h^2`, `h^3 ↔ h^4` with
/// `h^k = 1_{I_{2k}} − 1_{I_{2k−1}}`, zero on the weighted orthogonal complement.
pub fn swap_block<T: Real>(w: &[T]) -> Matrix<T> {
    let m = w.len();
    let h = |k: usize| -> Vec<T> {
        let mut v = vec![T::zero(); m];
        v[2 * k] = -T::one();
        v[2 * k + 1] = T::one();
        v
    };
    let partner = [1usize, 0, 3, 2];
    let mut b = Matrix::zeros(m, m);
    for k in 0..4 {
        let hk = h(k);
        let norm2: T = hk.iter().zip(w).map(|(&x, &wi)| x * x * wi).sum();
        let img = h(partner[k]);
        b = b.add(&Matrix::from_fn(m, m, |i, j| img[i] * hk[j] * w[j] / norm2));
    }
    b
}

/// `(lattice, b, T)`: `b = Σ δ^{−1/2}(1_{I¹} − δ 1_{I²})` over the blocks and `T`
/// the swap blocks. Chain nodes carry no difference of `b`; their equal children
/// make their swap block the `δ = 1` case.
#[allow(clippy::type_complexity)]
pub fn gen_mixing_counterexample<T: Real>(
    deltas: &[T],
) -> Result<(Arc<Lattice<T>>, StepFunction<T>, TransformBlocks<T>)> {
    let lat = Arc::new(mixing_lattice(deltas)?);
    let mut values = vec![T::zero(); lat.num_leaves()];
    let mut t = TransformBlocks::empty(lat.clone());
    for id in lat.internal_nodes() {
        let w: Vec<T> = lat.children(id).iter().map(|&c| lat.measure(c)).collect();
        t.insert(id, swap_block(&w))?;
    }
    for (&blk, &delta) in mixing_blocks(&lat).iter().zip(deltas) {
        let s = T::one() / delta.sqrt();
        for (k, &c) in lat.children(blk).iter().enumerate() {
            let v = if k < 4 { s } else { -delta * s };
            for x in &mut values[lat.leaf_range(c)] {
                *x = v;
            }
        }
    }
    let b = StepFunction::new(lat.clone(), values)?;
    Ok((lat, b, t))
}

/// Columns: `delta, p, comm_norm, sup_diff_b, eps_nocap, eps_cap`; one lattice per `δ`.
///
/// `comm_norm` is exact at `p = 2` and a seeded estimate otherwise. The
/// certificates are minimized over the children of the block.
pub fn run_commutator_experiment(deltas: &[f64], p: f64) -> Result<Vec<ExperimentRow>> {
    check_exponent("p", p, 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    check_deltas(deltas)?;
    deltas
        .par_iter()
        .map(|&delta| {
            let (lat, b, t) = gen_mixing_counterexample(&[delta])?;
            let mb = assemble(ParaKind::Mult, &b, &lat)?;
            let c = commutator(&mb, &transform_operator(&t))?;
            let (norm, seed) = if p == 2.0 {
                (opnorm::norm_2(&c), None)
            } else {
                let r = opnorm::norm_p(&c, p, opnorm::DEFAULT_RESTARTS, DEFAULT_SEED)?;
                (r.estimate, Some(DEFAULT_SEED))
            };
            let sup_diff = lat
                .internal_nodes()
                .map(|id| crate::mfunc::difference(&b, id).map(|d| d.sup_norm()))
                .try_fold(0.0f64, |acc, s| s.map(|s| acc.max(s)))?;
            let blk = mixing_blocks(&lat)[0];
            let (mut e0, mut e1) = (f64::INFINITY, f64::INFINITY);
            for &c in lat.children(blk) {
                let cert = nondegeneracy_cert(&t, c, p, Some(MIXING_K))?;
                e0 = e0.min(cert.epsilon_nocap);
                e1 = e1.min(cert.epsilon_cap);
            }
            Ok(ExperimentRow::new(
                &[("delta", delta), ("p", p)],
                &[("comm_norm", norm), ("sup_diff_b", sup_diff), ("eps_nocap", e0), ("eps_cap", e1)],
                seed,
            ))
        })
        .collect()
}

/// Chain over `[0, 2^N)`: `I_k` splits into `(I_{k−1}, R_k)` with both halves of
/// measure `2^{k−1}`. Labels: `I_k = k`, `R_k = N + k`.
pub fn bmo_chain_lattice<T: Real>(n: usize) -> Result<Lattice<T>> {
    if n < 1 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if n > 1000 {
        return Err(Error::InvalidParameter(format!("N too large: {n}")));
    }
    let mut specs = vec![NodeSpec::new(n as i64, None, T::lit(2.0).powi(n as i32))];
    for k in (1..=n).rev() {
        let m = T::lit(2.0).powi(k as i32 - 1);
        specs.push(NodeSpec::new(k as i64 - 1, Some(k as i64), m));
        specs.push(NodeSpec::new((n + k) as i64, Some(k as i64), m));
    }
    Lattice::assemble(&specs)
}

/// `Δ_{I_k} f = 1_{I_{k−1}} − 1_{R_k}` for `k = 1..N`, root average 0.
pub fn gen_bmo_divergent<T: Real>(n: usize) -> Result<(Arc<Lattice<T>>, MartDecomp<T>)> {
    let lat = Arc::new(bmo_chain_lattice::<T>(n)?);
    let diffs: Vec<_> = (1..=n)
        .map(|k| (lat.resolve(k as i64).expect("chain node"), vec![T::one(), -T::one()]))
        .collect();
    let d = MartDecomp::from_parts(lat.clone(), diffs, [])?;
    Ok((lat, d))
}

/// Columns: `N, q, r, bmo_local, bmo_sup, max_partial_sum`.
pub fn run_bmo_experiment(n: usize, q: f64, r: f64) -> Result<Vec<ExperimentRow>> {
    let (_, d) = gen_bmo_divergent::<f64>(n)?;
    let (local, sup) = bmoq_norm(&d, q, r)?;
    let f = reconstruct(&d)?;
    let max = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![ExperimentRow::new(
        &[("N", n as f64), ("q", q), ("r", r)],
        &[("bmo_local", local), ("bmo_sup", sup), ("max_partial_sum", max)],
        None,
    )])
}

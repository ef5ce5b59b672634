//! Induced operator norms between weighted `L^p` spaces.
//!
//! `p = 2` is solved exactly through the Gram matrix. Other exponents use Boyd's
//! power iteration from many starts; the reported lower bound is always the ratio
//! of an explicit witness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_exponent, Error, Result};
use crate::gspace::SlotLayout;
use crate::lattice::{Lattice, NodeId};
use crate::matrix::{symmetric_eigen, Matrix};
use crate::mfunc::weighted_lp;
use crate::num::{conjugate, Real};
use crate::paraprod::LinearOp;

/// Default number of random restarts.
pub const DEFAULT_RESTARTS: usize = 32;

/// Largest Gram matrix handled by the dense eigen-solver.
const JACOBI_MAX: usize = 256;

const MAX_ITERS: usize = 500;
const STALL_TOL: f64 = 1e-10;
const STALL_STEPS: usize = 5;

/// Norm on the output side.
#[derive(Clone, Debug)]
pub enum Codomain<T: Real> {
    /// Weighted `L^p` with the domain exponent.
    Lp(Vec<T>),
    /// `L^p(ℓ^q)` over a slot family.
    Mixed { layout: SlotLayout<T>, q: T },
}

impl<T: Real> Codomain<T> {
    pub fn dim(&self) -> usize {
        match self {
            Codomain::Lp(w) => w.len(),
            Codomain::Mixed { layout, .. } => layout.len(),
        }
    }

    pub fn norm(&self, y: &[T], p: T) -> T {
        match self {
            Codomain::Lp(w) => weighted_lp(y, w, p),
            Codomain::Mixed { layout, q } => layout.mixed_norm(y, p, *q),
        }
    }

    /// A norming functional for `y`: `g · y = ‖y‖` and `‖g‖_* = 1`.
    pub fn gradient(&self, y: &[T], p: T) -> Vec<T> {
        match self {
            Codomain::Lp(w) => {
                let n = weighted_lp(y, w, p);
                if n == T::zero() {
                    return vec![T::zero(); y.len()];
                }
                y.iter()
                    .zip(w)
                    .map(|(&v, &wi)| {
                        if v == T::zero() {
                            T::zero()
                        } else {
                            wi * (v.abs() / n).powf(p - T::one()) * v.signum()
                        }
                    })
                    .collect()
            }
            Codomain::Mixed { layout, q } => layout.mixed_norm_gradient(y, p, *q),
        }
    }

    /// Diagonal weights making this an `ℓ²` space when `p = 2`, if it is one.
    fn hilbert_weights(&self) -> Option<Vec<T>> {
        match self {
            Codomain::Lp(w) => Some(w.clone()),
            Codomain::Mixed { layout, q } if *q == T::lit(2.0) => Some(layout.cell_measures()),
            Codomain::Mixed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormReport<T> {
    /// Ratio attained by `witness`.
    pub lower_bound: T,
    /// Best value found; never below `lower_bound`.
    pub estimate: T,
    /// Leaf values of the best input found.
    pub witness: Vec<T>,
    pub restarts_used: usize,
    pub seed: u64,
}

/// Largest singular value of `D_Y^{1/2} A D_X^{-1/2}`.
pub fn norm_2_weighted<T: Real>(a: &Matrix<T>, dom_w: &[T], cod_w: &[T]) -> T {
    top_singular(a, dom_w, cod_w).0
}

/// Top singular value and a maximizing input in the original coordinates.
fn top_singular<T: Real>(a: &Matrix<T>, dom_w: &[T], cod_w: &[T]) -> (T, Vec<T>) {
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return (T::zero(), vec![T::zero(); n]);
    }
    let ls: Vec<T> = cod_w.iter().map(|w| w.sqrt()).collect();
    let rs: Vec<T> = dom_w.iter().map(|w| T::one() / w.sqrt()).collect();
    let b = a.scale_rows_cols(&ls, &rs);
    let (sigma, v) = if a.rows().min(n) <= JACOBI_MAX {
        if n <= a.rows() {
            let (vals, vecs) = symmetric_eigen(&b.transpose().matmul(&b));
            (vals[0].max(T::zero()).sqrt(), vecs.column(0))
        } else {
            let (vals, vecs) = symmetric_eigen(&b.matmul(&b.transpose()));
            let sigma = vals[0].max(T::zero()).sqrt();
            let mut v = b.tmatvec(&vecs.column(0));
            let nv = v.iter().map(|&x| x * x).sum::<T>().sqrt();
            if nv > T::zero() {
                v.iter_mut().for_each(|x| *x /= nv);
            }
            (sigma, v)
        }
    } else {
        power_gram(&b)
    };
    let x = v.iter().zip(&rs).map(|(&vi, &r)| vi * r).collect();
    (sigma, x)
}

/// Power iteration on `BᵀB` until the Rayleigh quotient settles.
fn power_gram<T: Real>(b: &Matrix<T>) -> (T, Vec<T>) {
    let n = b.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    let mut last = T::zero();
    for _ in 0..20_000 {
        let nv = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if nv == T::zero() {
            return (T::zero(), v);
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = b.tmatvec(&b.matvec(&v));
        let rq: T = v.iter().zip(&w).map(|(&a, &c)| a * c).sum();
        v = w;
        if (rq - last).abs() <= T::tol(1e-12) * rq {
            last = rq;
            break;
        }
        last = rq;
    }
    let nv = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if nv > T::zero() {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    (last.max(T::zero()).sqrt(), v)
}

/// Maximizer of `z · x` over the weighted `ℓ^p` unit sphere.
fn dual_map<T: Real>(z: &[T], w: &[T], p: T) -> Vec<T> {
    let pp = conjugate(p);
    let scale = z.iter().zip(w).fold(T::zero(), |m, (&zi, &wi)| m.max(zi.abs() / wi));
    if scale == T::zero() {
        return vec![T::zero(); z.len()];
    }
    let x: Vec<T> = z
        .iter()
        .zip(w)
        .map(|(&zi, &wi)| {
            if zi == T::zero() {
                T::zero()
            } else {
                zi.signum() * (zi.abs() / wi / scale).powf(pp - T::one())
            }
        })
        .collect();
    let n = weighted_lp(&x, w, p);
    x.into_iter().map(|v| v / n).collect()
}

struct Problem<'a, T: Real> {
    a: &'a Matrix<T>,
    w: &'a [T],
    cod: &'a Codomain<T>,
    p: T,
}

impl<'a, T: Real> Problem<'a, T> {
    fn ratio(&self, x: &[T]) -> T {
        let nx = weighted_lp(x, self.w, self.p);
        if nx == T::zero() {
            return T::zero();
        }
        self.cod.norm(&self.a.matvec(x), self.p) / nx
    }

    /// Boyd iteration from `x0`; returns the best iterate and its ratio.
    fn climb(&self, x0: Vec<T>) -> (T, Vec<T>) {
        let mut x = x0;
        let mut best = (self.ratio(&x), x.clone());
        let mut history = vec![best.0];
        for _ in 0..MAX_ITERS {
            let y = self.a.matvec(&x);
            if y.iter().all(|&v| v == T::zero()) {
                break;
            }
            let g = self.cod.gradient(&y, self.p);
            let z = self.a.tmatvec(&g);
            let next = dual_map(&z, self.w, self.p);
            if next.iter().all(|&v| v == T::zero()) {
                break;
            }
            x = next;
            let r = self.ratio(&x);
            if r > best.0 {
                best = (r, x.clone());
            }
            history.push(r);
            if history.len() > STALL_STEPS {
                let old = history[history.len() - 1 - STALL_STEPS];
                if (r - old).abs() <= T::lit(STALL_TOL) * r.abs().max(T::min_positive_value()) {
                    break;
                }
            }
        }
        best
    }
}

/// `‖A‖` from weighted `L^p` (weights `dom_w`) into `cod`.
///
/// `extra_starts` are evaluated and the most promising few are iterated, on top of
/// the `p = 2` maximizer and `restarts` seeded random starts.
pub fn norm_p_weighted_with<T: Real>(
    a: &Matrix<T>,
    dom_w: &[T],
    cod: &Codomain<T>,
    p: T,
    restarts: usize,
    seed: u64,
    extra_starts: &[Vec<T>],
) -> Result<NormReport<T>> {
    check_exponent("p", p.to_f64_lossy(), 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    if dom_w.len() != a.cols() {
        return Err(Error::DimensionMismatch { expected: a.cols(), got: dom_w.len() });
    }
    if cod.dim() != a.rows() {
        return Err(Error::DimensionMismatch { expected: a.rows(), got: cod.dim() });
    }
    let n = a.cols();
    if a.max_abs() == T::zero() || n == 0 {
        return Ok(NormReport {
            lower_bound: T::zero(),
            estimate: T::zero(),
            witness: vec![T::zero(); n],
            restarts_used: 0,
            seed,
        });
    }
    let prob = Problem { a, w: dom_w, cod, p };

    let mut ranked: Vec<(T, usize)> = extra_starts.iter().enumerate().map(|(i, x)| (prob.ratio(x), i)).collect();
    ranked.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)));
    let mut starts: Vec<Vec<T>> = ranked.iter().take(4).map(|&(_, i)| extra_starts[i].clone()).collect();
    let hw = cod.hilbert_weights().unwrap_or_else(|| cod.fallback_weights());
    let warm = top_singular(a, dom_w, &hw).1;
    starts.push(warm);
    for i in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        starts.push((0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect());
    }

    let results: Vec<(T, Vec<T>)> = starts.into_par_iter().map(|x0| prob.climb(x0)).collect();
    let mut best = (T::zero(), vec![T::zero(); n]);
    for (r, x) in results {
        if r > best.0 {
            best = (r, x);
        }
    }
    // indicator tests count even if iteration moved away from them
    if let Some(&(r, i)) = ranked.first() {
        if r > best.0 {
            best = (r, extra_starts[i].clone());
        }
    }
    let lower = prob.ratio(&best.1);
    Ok(NormReport {
        lower_bound: lower,
        estimate: lower.max(best.0),
        witness: best.1,
        restarts_used: restarts,
        seed,
    })
}

pub fn norm_p_weighted<T: Real>(
    a: &Matrix<T>,
    dom_w: &[T],
    cod: &Codomain<T>,
    p: T,
    restarts: usize,
    seed: u64,
) -> Result<NormReport<T>> {
    let basis: Vec<Vec<T>> = (0..a.cols())
        .map(|i| {
            let mut e = vec![T::zero(); a.cols()];
            e[i] = T::one();
            e
        })
        .collect();
    norm_p_weighted_with(a, dom_w, cod, p, restarts, seed, &basis)
}

fn node_indicators<T: Real>(lat: &Lattice<T>) -> Vec<Vec<T>> {
    lat.preorder()
        .iter()
        .map(|&id| {
            let mut e = vec![T::zero(); lat.num_leaves()];
            for v in &mut e[lat.leaf_range(id)] {
                *v = T::one();
            }
            e
        })
        .collect()
}

/// `max_I ‖A 1_I‖ / ‖1_I‖_p` and the maximizing node.
pub fn indicator_lower_weighted<T: Real>(
    a: &Matrix<T>,
    lat: &Lattice<T>,
    cod: &Codomain<T>,
    p: T,
) -> (T, Option<NodeId>) {
    let w = lat.leaf_measures();
    let mut best = (T::zero(), None);
    for &id in lat.preorder() {
        let mut e = vec![T::zero(); lat.num_leaves()];
        for v in &mut e[lat.leaf_range(id)] {
            *v = T::one();
        }
        let r = cod.norm(&a.matvec(&e), p) / weighted_lp(&e, &w, p);
        if r > best.0 {
            best = (r, Some(id));
        }
    }
    best
}

/// Weighted spectral norm `‖A‖_{L^2 → L^2}`.
pub fn norm_2<T: Real>(a: &LinearOp<T>) -> T {
    let w = a.lattice().leaf_measures();
    norm_2_weighted(a.matrix(), &w, &w)
}

/// `‖A‖_{L^p → L^p}` estimate with a certified lower bound.
pub fn norm_p<T: Real>(a: &LinearOp<T>, p: T, restarts: usize, seed: u64) -> Result<NormReport<T>> {
    let lat = a.lattice();
    let w = lat.leaf_measures();
    let cod = Codomain::Lp(w.clone());
    norm_p_weighted_with(a.matrix(), &w, &cod, p, restarts, seed, &node_indicators(lat))
}

/// Same as [`norm_p`] for a family-valued operator with node indicator starts.
pub(crate) fn norm_p_slots<T: Real>(
    a: &Matrix<T>,
    layout: &SlotLayout<T>,
    p: T,
    q: T,
    restarts: usize,
    seed: u64,
) -> Result<NormReport<T>> {
    let lat = layout.lattice();
    let cod = Codomain::Mixed { layout: layout.clone(), q };
    norm_p_weighted_with(a, &lat.leaf_measures(), &cod, p, restarts, seed, &node_indicators(lat))
}

pub fn indicator_lower<T: Real>(a: &LinearOp<T>, p: T) -> T {
    let lat = a.lattice();
    indicator_lower_weighted(a.matrix(), lat, &Codomain::Lp(lat.leaf_measures()), p).0
}

impl<T: Real> Codomain<T> {
    /// Stand-in Hilbert weights for warm starts when the codomain is not `ℓ²`.
    fn fallback_weights(&self) -> Vec<T> {
        match self {
            Codomain::Lp(w) => w.clone(),
            Codomain::Mixed { layout, .. } => layout.cell_measures(),
        }
    }
}

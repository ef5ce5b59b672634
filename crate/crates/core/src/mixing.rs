//! Non-degeneracy certificates for martingale transforms.
//!
//! For an interval `I` with parent `I'` the quantity of interest is
//! `sup |value of T_{I'} h on I|` over `h ∈ D_{I'}` vanishing on `I` with
//! `‖h‖_p ≤ 1` (and optionally `‖h‖_∞ ≤ K|I'|^{-1/p}`). The objective is linear
//! and only the zero-mean constraint couples coordinates, so the problem is solved
//! through its one-dimensional Lagrange dual and a feasible primal witness is
//! recovered from the dual optimum.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_exponent, Error, Result};
use crate::lattice::NodeId;
use crate::mfunc::{weighted_lp, StepFunction};
use crate::num::{conjugate, Real};
use crate::paraprod::TransformBlocks;

#[derive(Clone, Debug)]
pub struct MixingCert<T: Real = f64> {
    pub node: NodeId,
    pub parent: NodeId,
    pub epsilon_nocap: T,
    /// Equals `epsilon_nocap` when the interval is not small or no `K` was given.
    pub epsilon_cap: T,
    pub witness_nocap: StepFunction<T>,
    pub witness_cap: StepFunction<T>,
    /// Whether the cap applies (`|I| < |I'|/K`).
    pub small: bool,
    /// False when no unit-norm `h` satisfies the cap; `epsilon_cap` is then 0.
    pub feasible: bool,
}

/// Value of `max a·x` with the witness `x` over the coordinates of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSolution<T> {
    pub value: T,
    pub x: Vec<T>,
    pub feasible: bool,
}

/// `max a·x` subject to `x_skip = 0`, `w·x = 0`, `Σ w|x|^p = 1`, `|x_j| ≤ cap`.
pub fn solve_block<T: Real>(a: &[T], w: &[T], skip: usize, p: T, cap: Option<T>) -> BlockSolution<T> {
    let m = a.len();
    let free: Vec<usize> = (0..m).filter(|&j| j != skip).collect();
    let zero = BlockSolution {
        value: T::zero(),
        x: vec![T::zero(); m],
        feasible: true,
    };
    if free.len() < 2 {
        return BlockSolution { feasible: cap.is_none(), ..zero };
    }
    if let Some(c) = cap {
        // unit norm reachable at all?
        let total: T = free.iter().map(|&j| w[j]).sum();
        if c.powf(p) * total < T::one() {
            return BlockSolution { feasible: false, ..zero };
        }
    }
    let sol = Inner { a, w, free: &free, p, cap };
    let ratios: Vec<T> = free.iter().map(|&j| a[j] / w[j]).collect();
    let lo = ratios.iter().copied().fold(T::infinity(), T::min);
    let hi = ratios.iter().copied().fold(T::neg_infinity(), T::max);
    let x = if hi - lo <= T::epsilon() * (lo.abs() + hi.abs()) {
        // a ∝ w on the free coordinates: the objective vanishes on the feasible set
        vec![T::zero(); m]
    } else {
        let lambda = golden_min(|l| sol.value(l), lo, hi);
        sol.primal(lambda, lo, hi)
    };
    let mut x = x;
    let mut feasible = true;
    if let Some(c) = cap {
        feasible = pad_to_sphere(&mut x, a, w, skip, p, c);
    } else if x.iter().all(|&v| v == T::zero()) {
        // objective is flat: any unit zero-mean vector is optimal
        let (i, j) = (free[0], free[1]);
        x[i] = T::one() / w[i];
        x[j] = -T::one() / w[j];
        let n = weighted_lp(&x, w, p);
        x.iter_mut().for_each(|v| *v /= n);
    }
    let value: T = a.iter().zip(&x).map(|(&ai, &xi)| ai * xi).sum();
    if value < T::zero() {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    BlockSolution {
        value: value.abs(),
        x,
        feasible,
    }
}

struct Inner<'a, T> {
    a: &'a [T],
    w: &'a [T],
    free: &'a [usize],
    p: T,
    cap: Option<T>,
}

impl<T: Real> Inner<'_, T> {
    /// Maximizer of `(a − λw)·x` over the ball (and box) on the free coordinates.
    fn argmax(&self, lambda: T) -> Vec<T> {
        let m = self.a.len();
        let mut x = vec![T::zero(); m];
        let u: Vec<T> = self.free.iter().map(|&j| self.a[j] - lambda * self.w[j]).collect();
        let scale = u
            .iter()
            .zip(self.free)
            .fold(T::zero(), |acc, (&uj, &j)| acc.max(uj.abs() / self.w[j]));
        if scale == T::zero() {
            return x;
        }
        let e = T::one() / (self.p - T::one());
        // unnormalized ball maximizer, largest entry 1
        let base: Vec<T> = u
            .iter()
            .zip(self.free)
            .map(|(&uj, &j)| (uj.abs() / self.w[j] / scale).powf(e))
            .collect();
        let norm_at = |s: T| -> T {
            self.free
                .iter()
                .zip(&base)
                .map(|(&j, &b)| {
                    let v = match self.cap {
                        Some(c) => (s * b).min(c),
                        None => s * b,
                    };
                    self.w[j] * v.powf(self.p)
                })
                .sum()
        };
        let s = match self.cap {
            None => T::one() / norm_at(T::one()).powf(T::one() / self.p),
            Some(c) => {
                let all_capped: T = self
                    .free
                    .iter()
                    .zip(&base)
                    .filter(|(_, &b)| b > T::zero())
                    .map(|(&j, _)| self.w[j] * c.powf(self.p))
                    .sum();
                if all_capped <= T::one() {
                    T::infinity()
                } else {
                    let (mut lo, mut hi) = (T::zero(), T::one());
                    while norm_at(hi) < T::one() {
                        hi = hi * T::lit(2.0);
                    }
                    for _ in 0..200 {
                        let mid = (lo + hi) / T::lit(2.0);
                        if norm_at(mid) < T::one() {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo <= T::epsilon() * hi {
                            break;
                        }
                    }
                    lo
                }
            }
        };
        for ((&j, &b), &uj) in self.free.iter().zip(&base).zip(&u) {
            if b == T::zero() {
                continue;
            }
            let mag = match self.cap {
                Some(c) => {
                    if s.is_infinite() {
                        c
                    } else {
                        (s * b).min(c)
                    }
                }
                None => s * b,
            };
            x[j] = uj.signum() * mag;
        }
        x
    }

    fn value(&self, lambda: T) -> T {
        let x = self.argmax(lambda);
        self.free
            .iter()
            .map(|&j| (self.a[j] - lambda * self.w[j]) * x[j])
            .sum()
    }

    fn mean(&self, x: &[T]) -> T {
        self.free.iter().map(|&j| self.w[j] * x[j]).sum()
    }

    /// Zero-mean point of the feasible set built from maximizers next to `λ*`.
    fn primal(&self, lambda: T, lo: T, hi: T) -> Vec<T> {
        let x0 = self.argmax(lambda);
        let wsum: T = self.free.iter().map(|&j| self.w[j]).sum();
        let scale = self.free.iter().map(|&j| self.w[j] * x0[j].abs()).sum::<T>().max(wsum * T::epsilon());
        let mut x = x0.clone();
        if self.mean(&x0).abs() > T::lit(1e-13) * scale {
            let width = (hi - lo).max(T::epsilon());
            let mut eta = width * T::lit(1e-10);
            let mut found = false;
            for _ in 0..60 {
                let xm = self.argmax(lambda - eta);
                let xp = self.argmax(lambda + eta);
                let (mm, mp) = (self.mean(&xm), self.mean(&xp));
                if mm >= T::zero() && mp <= T::zero() && mm > mp {
                    let theta = mm / (mm - mp);
                    x = xm
                        .iter()
                        .zip(&xp)
                        .map(|(&l, &r)| (T::one() - theta) * l + theta * r)
                        .collect();
                    found = true;
                    break;
                }
                eta = eta * T::lit(2.0);
            }
            if !found {
                x = x0;
            }
        }
        // exact zero mean on the heaviest free coordinate
        let jstar = *self
            .free
            .iter()
            .max_by(|&&i, &&j| self.w[i].partial_cmp(&self.w[j]).unwrap_or(std::cmp::Ordering::Equal))
            .expect("free coordinates");
        let rest: T = self.free.iter().filter(|&&j| j != jstar).map(|&j| self.w[j] * x[j]).sum();
        x[jstar] = -rest / self.w[jstar];
        if self.cap.is_none() {
            let n = weighted_lp(&x, self.w, self.p);
            if n > T::zero() {
                x.iter_mut().for_each(|v| *v /= n);
            }
        }
        x
    }
}

/// Golden-section minimization of a convex function on `[lo, hi]`.
fn golden_min<T: Real>(f: impl Fn(T) -> T, lo: T, hi: T) -> T {
    let g = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= T::epsilon() * (a.abs() + b.abs()).max(T::min_positive_value()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = (a + b) / T::lit(2.0);
    let mut best = (f(mid), mid);
    for t in [a, b, c, d] {
        let v = f(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    best.1
}

/// Scales a capped solution up to the unit sphere, spending leftover norm along
/// directions that keep the constraints and the objective unchanged.
fn pad_to_sphere<T: Real>(x: &mut [T], a: &[T], w: &[T], skip: usize, p: T, cap: T) -> bool {
    let m = x.len();
    let slack = T::one() + T::lit(1e-12);
    let norm = |v: &[T]| weighted_lp(v, w, p);
    let sup = |v: &[T]| v.iter().fold(T::zero(), |acc, &t| acc.max(t.abs()));
    let n0 = norm(x);
    if n0 > T::zero() {
        let s = (T::one() / n0).min(cap / sup(x));
        if s > T::one() {
            x.iter_mut().for_each(|v| *v = *v * s);
        }
    }
    if norm(x) >= T::one() / slack {
        return sup(x) <= cap * slack;
    }
    // kernel of {e_skip, w, a} by Gram–Schmidt on coordinate vectors
    let mut cons: Vec<Vec<T>> = Vec::new();
    let mut e = vec![T::zero(); m];
    e[skip] = T::one();
    for c in [e, w.to_vec(), a.to_vec()] {
        let mut c = c;
        for q in &cons {
            let d: T = c.iter().zip(q).map(|(&u, &v)| u * v).sum();
            c.iter_mut().zip(q).for_each(|(u, &v)| *u -= d * v);
        }
        let n = c.iter().map(|&u| u * u).sum::<T>().sqrt();
        if n > T::lit(1e-12) {
            c.iter_mut().for_each(|u| *u /= n);
            cons.push(c);
        }
    }
    let mut dirs: Vec<Vec<T>> = Vec::new();
    for k in 0..m {
        let mut d = vec![T::zero(); m];
        d[k] = T::one();
        for q in cons.iter().chain(dirs.iter()) {
            let dot: T = d.iter().zip(q).map(|(&u, &v)| u * v).sum();
            d.iter_mut().zip(q).for_each(|(u, &v)| *u -= dot * v);
        }
        let n = d.iter().map(|&u| u * u).sum::<T>().sqrt();
        if n > T::lit(1e-9) {
            d.iter_mut().for_each(|u| *u /= n);
            dirs.push(d);
        }
    }
    for _round in 0..4 {
        for d in &dirs {
            for sign in [T::one(), -T::one()] {
                // farthest step keeping |x + t d| ≤ cap
                let mut tmax = T::infinity();
                for (&xi, &di) in x.iter().zip(d) {
                    let di = di * sign;
                    if di > T::zero() {
                        tmax = tmax.min((cap - xi) / di);
                    } else if di < T::zero() {
                        tmax = tmax.min((-cap - xi) / di);
                    }
                }
                if !(tmax > T::zero()) || tmax.is_infinite() {
                    continue;
                }
                let at = |t: T| -> Vec<T> { x.iter().zip(d).map(|(&xi, &di)| xi + t * sign * di).collect() };
                if norm(&at(tmax)) <= norm(x) {
                    continue;
                }
                if norm(&at(tmax)) < T::one() {
                    let y = at(tmax);
                    x.copy_from_slice(&y);
                    continue;
                }
                // norm is convex along the line: bisect for the unit crossing
                let (mut lo, mut hi) = (T::zero(), tmax);
                for _ in 0..200 {
                    let mid = (lo + hi) / T::lit(2.0);
                    if norm(&at(mid)) < T::one() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let y = at(hi);
                x.copy_from_slice(&y);
                let n = norm(x);
                x.iter_mut().for_each(|v| *v /= n);
                return sup(x) <= cap * slack;
            }
        }
    }
    false
}

/// Certificate for `I` against the block of its parent.
pub fn nondegeneracy_cert<T: Real>(t: &TransformBlocks<T>, node: NodeId, p: T, k: Option<T>) -> Result<MixingCert<T>> {
    check_exponent("p", p.to_f64_lossy(), 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    let lat = t.lattice().clone();
    lat.check(node)?;
    let parent = lat.parent(node).ok_or(Error::NoParent { node: lat.label(node) })?;
    let block = t.block(parent).ok_or(Error::NoBlock { node: lat.label(parent) })?;
    let children = lat.children(parent);
    let i0 = children.iter().position(|&c| c == node).expect("child of parent");
    let w: Vec<T> = children.iter().map(|&c| lat.measure(c)).collect();
    let a = block.row(i0).to_vec();
    let mi = lat.measure(node);
    let mp = lat.measure(parent);
    let to_fn = |x: &[T]| {
        let mut vals = vec![T::zero(); lat.num_leaves()];
        for (&c, &v) in children.iter().zip(x) {
            for s in &mut vals[lat.leaf_range(c)] {
                *s = v;
            }
        }
        StepFunction::new(lat.clone(), vals).expect("finite witness")
    };
    let free = solve_block(&a, &w, i0, p, None);
    let eps_nocap = mi.powf(T::one() / p) * free.value;
    let small = k.is_some_and(|k| mi < mp / k);
    let (eps_cap, witness_cap, feasible) = if small {
        let cap = k.expect("small implies K") * mp.powf(-T::one() / p);
        let capped = solve_block(&a, &w, i0, p, Some(cap));
        if capped.feasible {
            (mi.powf(T::one() / p) * capped.value, to_fn(&capped.x), true)
        } else {
            (T::zero(), to_fn(&capped.x), false)
        }
    } else {
        (eps_nocap, to_fn(&free.x), true)
    };
    Ok(MixingCert {
        node,
        parent,
        epsilon_nocap: eps_nocap,
        epsilon_cap: eps_cap,
        witness_nocap: to_fn(&free.x),
        witness_cap,
        small,
        feasible,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct IntervalVerdict<T> {
    pub node: i64,
    pub parent: i64,
    pub epsilon_nocap: T,
    pub epsilon_cap: T,
    pub small: bool,
    pub feasible: bool,
    /// `(p, ε, K)` non-degenerate for `T`.
    pub for_t: bool,
    /// Same quantities for `T^*` at the conjugate exponent.
    pub adjoint_epsilon_cap: T,
    pub for_adjoint: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification<T> {
    pub strong: bool,
    pub weak: bool,
    /// Intervals not non-degenerate for `T`.
    pub failing_strong: Vec<i64>,
    /// Intervals non-degenerate neither for `T` nor for `T^*`.
    pub failing_weak: Vec<i64>,
    pub intervals: Vec<IntervalVerdict<T>>,
}

fn cert_or_zero<T: Real>(t: &TransformBlocks<T>, node: NodeId, p: T, k: Option<T>) -> Result<(T, T, bool, bool)> {
    match nondegeneracy_cert(t, node, p, k) {
        Ok(c) => Ok((c.epsilon_nocap, c.epsilon_cap, c.small, c.feasible)),
        // a missing block is the zero block
        Err(Error::NoBlock { .. }) => {
            let lat = t.lattice();
            let parent = lat.parent(node).expect("has parent");
            let small = k.is_some_and(|k| lat.measure(node) < lat.measure(parent) / k);
            Ok((T::zero(), T::zero(), small, true))
        }
        Err(e) => Err(e),
    }
}

/// Strong/weak `(p, ε, K)` mixing verdict over every interval with a parent.
pub fn classify<T: Real>(t: &TransformBlocks<T>, p: T, eps: T, k: Option<T>) -> Result<Classification<T>> {
    check_exponent("p", p.to_f64_lossy(), 1.0, false, f64::INFINITY, false, "(1, ∞)")?;
    let lat = t.lattice().clone();
    let adj = t.adjoint();
    let pp = conjugate(p);
    let nodes: Vec<NodeId> = lat.preorder().iter().copied().filter(|&id| !lat.is_root(id)).collect();
    let verdicts: Vec<IntervalVerdict<T>> = nodes
        .par_iter()
        .map(|&id| -> Result<IntervalVerdict<T>> {
            let (e0, e1, small, feasible) = cert_or_zero(t, id, p, k)?;
            let (_, a1, _, afeas) = cert_or_zero(&adj, id, pp, k)?;
            Ok(IntervalVerdict {
                node: lat.label(id),
                parent: lat.label(lat.parent(id).expect("non-root")),
                epsilon_nocap: e0,
                epsilon_cap: e1,
                small,
                feasible,
                for_t: feasible && e1 >= eps,
                adjoint_epsilon_cap: a1,
                for_adjoint: afeas && a1 >= eps,
            })
        })
        .collect::<Result<_>>()?;
    let failing_strong: Vec<i64> = verdicts.iter().filter(|v| !v.for_t).map(|v| v.node).collect();
    let failing_weak: Vec<i64> = verdicts
        .iter()
        .filter(|v| !v.for_t && !v.for_adjoint)
        .map(|v| v.node)
        .collect();
    Ok(Classification {
        strong: failing_strong.is_empty(),
        weak: failing_weak.is_empty(),
        failing_strong,
        failing_weak,
        intervals: verdicts,
    })
}

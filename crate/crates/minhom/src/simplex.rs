//! Bounded-variable primal simplex with presolve and exact certification.
//!
//! The solver runs the same two-phase pivoting code over either `f64` or
//! arbitrary-precision rationals through the [`Scalar`] trait. Models are
//! presolved exactly (fixed variables substituted, equal pairs merged,
//! single-term rows folded into bounds, duplicate rows dropped) before any
//! floating point enters. Row-heavy systems are dualized automatically so
//! the basis stays at the size of the column count.
//!
//! Float results never stand alone where exactness matters: a rational
//! lower bound on the true optimum is certified from rounded duals by exact
//! arithmetic, and integral optima come from branch and bound whose
//! incumbents are exact costs of validated assignments.

use crate::lp::{LpModel, Op};
use crate::model::{rat_int, validate_hom, Homomorphism, Instance, Rat};
use num::bigint::BigInt;
use num::{Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

const STALL_LIMIT: usize = 300;
const REFACTOR_EVERY: usize = 750;
const RECOMPUTE_EVERY: usize = 150;
const DUAL_DENOMINATOR_LIMIT: u64 = 1_000_000;

/// Arithmetic the pivoting code is generic over.
pub trait Scalar: Clone + PartialOrd + std::fmt::Debug {
    const EXACT: bool;
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(v: i64) -> Self;
    fn from_rat(r: &Rat) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn abs(&self) -> Self;
    /// Tolerance for pricing and pivot admissibility.
    fn eps() -> Self;
    /// Tolerance for bound feasibility.
    fn feps() -> Self;

    fn lt0(&self) -> bool {
        *self < Self::zero().sub(&Self::eps())
    }
    fn gt0(&self) -> bool {
        *self > Self::eps()
    }
    fn nonzero(&self) -> bool {
        self.lt0() || self.gt0()
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_rat(r: &Rat) -> Self {
        r.to_f64().unwrap_or(f64::NAN)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn eps() -> Self {
        1e-9
    }
    fn feps() -> Self {
        1e-7
    }
}

impl Scalar for Rat {
    const EXACT: bool = true;
    fn zero() -> Self {
        <Rat as Zero>::zero()
    }
    fn one() -> Self {
        <Rat as num::One>::one()
    }
    fn from_i64(v: i64) -> Self {
        Rat::from_integer(BigInt::from(v))
    }
    fn from_rat(r: &Rat) -> Self {
        r.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn eps() -> Self {
        <Rat as Zero>::zero()
    }
    fn feps() -> Self {
        <Rat as Zero>::zero()
    }
}

/// A minimization problem in row form with per-variable bounds; `None`
/// bounds are unbounded sides.
#[derive(Debug, Clone)]
pub struct CoreLp<S> {
    pub ncols: usize,
    pub rows: Vec<(Vec<(u32, S)>, Op, S)>,
    pub obj: Vec<S>,
    pub lo: Vec<Option<S>>,
    pub hi: Vec<Option<S>>,
}

impl CoreLp<Rat> {
    pub fn to_f64(&self) -> CoreLp<f64> {
        CoreLp {
            ncols: self.ncols,
            rows: self
                .rows
                .iter()
                .map(|(t, op, b)| {
                    (
                        t.iter().map(|(v, c)| (*v, f64::from_rat(c))).collect(),
                        *op,
                        f64::from_rat(b),
                    )
                })
                .collect(),
            obj: self.obj.iter().map(f64::from_rat).collect(),
            lo: self.lo.iter().map(|b| b.as_ref().map(f64::from_rat)).collect(),
            hi: self.hi.iter().map(|b| b.as_ref().map(f64::from_rat)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SimplexOutcome<S> {
    Optimal {
        x: Vec<S>,
        /// Row multipliers `c_B B^-1` of the final basis.
        duals: Vec<S>,
        value: S,
    },
    Infeasible,
    Unbounded,
    /// The iteration cap was hit before convergence.
    Stalled,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VState {
    Basic(u32),
    AtLo,
    AtUp,
    Free,
}

struct Simplex<'a, S: Scalar> {
    m: usize,
    nall: usize,
    cols: Vec<Vec<(u32, S)>>,
    c: Vec<S>,
    b: Vec<S>,
    lo: Vec<Option<S>>,
    hi: Vec<Option<S>>,
    prob: &'a CoreLp<S>,
    basis: Vec<u32>,
    state: Vec<VState>,
    xb: Vec<S>,
    binv: Vec<S>,
    pivots: usize,
    bland: bool,
    no_progress: usize,
    iter_cap: usize,
}

impl<'a, S: Scalar> Simplex<'a, S> {
    fn new(prob: &'a CoreLp<S>) -> Self {
        let n = prob.ncols;
        let m = prob.rows.len();
        let nall = n + m;
        let mut cols: Vec<Vec<(u32, S)>> = vec![Vec::new(); n];
        let mut b = Vec::with_capacity(m);
        let mut lo = prob.lo.clone();
        let mut hi = prob.hi.clone();
        for (i, (terms, op, rhs)) in prob.rows.iter().enumerate() {
            for (v, coeff) in terms {
                cols[*v as usize].push((i as u32, coeff.clone()));
            }
            b.push(rhs.clone());
            lo.push(Some(S::zero()));
            hi.push(match op {
                Op::Le => None,
                Op::Eq => Some(S::zero()),
            });
        }
        let mut c = prob.obj.clone();
        c.resize(nall, S::zero());
        let mut state = Vec::with_capacity(nall);
        for j in 0..n {
            state.push(match (&lo[j], &hi[j]) {
                (Some(_), _) => VState::AtLo,
                (None, Some(_)) => VState::AtUp,
                (None, None) => VState::Free,
            });
        }
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            basis.push((n + i) as u32);
            state.push(VState::Basic(i as u32));
        }
        let mut binv = vec![S::zero(); m * m];
        for i in 0..m {
            binv[i * m + i] = S::one();
        }
        let iter_cap = 20_000 + 60 * nall;
        let mut s = Simplex {
            m,
            nall,
            cols,
            c,
            b,
            lo,
            hi,
            prob,
            basis,
            state,
            xb: vec![S::zero(); m],
            binv,
            pivots: 0,
            bland: false,
            no_progress: 0,
            iter_cap,
        };
        s.recompute_xb();
        s
    }

    fn col(&self, var: u32) -> ColRef<'_, S> {
        let n = self.prob.ncols;
        if (var as usize) < n {
            ColRef::Structural(&self.cols[var as usize])
        } else {
            ColRef::Unit(var as usize - n)
        }
    }

    fn nb_val(&self, var: u32) -> S {
        match self.state[var as usize] {
            VState::Basic(slot) => self.xb[slot as usize].clone(),
            VState::AtLo => self.lo[var as usize].clone().unwrap(),
            VState::AtUp => self.hi[var as usize].clone().unwrap(),
            VState::Free => S::zero(),
        }
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut r = self.b.clone();
        for var in 0..self.nall as u32 {
            if matches!(self.state[var as usize], VState::Basic(_)) {
                continue;
            }
            let val = self.nb_val(var);
            if val == S::zero() {
                continue;
            }
            match self.col(var) {
                ColRef::Structural(entries) => {
                    for (row, coeff) in entries {
                        r[*row as usize] = r[*row as usize].sub(&coeff.mul(&val));
                    }
                }
                ColRef::Unit(row) => {
                    r[row] = r[row].sub(&val);
                }
            }
        }
        let mut xb = vec![S::zero(); m];
        for (i, x) in xb.iter_mut().enumerate() {
            let mut acc = S::zero();
            for k in 0..m {
                let e = &self.binv[i * m + k];
                if e.nonzero() {
                    acc = acc.add(&e.mul(&r[k]));
                }
            }
            *x = acc;
        }
        self.xb = xb;
    }

    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut mat = vec![S::zero(); m * m];
        for (slot, &var) in self.basis.iter().enumerate() {
            match self.col(var) {
                ColRef::Structural(entries) => {
                    for (row, coeff) in entries {
                        mat[*row as usize * m + slot] = coeff.clone();
                    }
                }
                ColRef::Unit(row) => {
                    mat[row * m + slot] = S::one();
                }
            }
        }
        let mut inv = vec![S::zero(); m * m];
        for i in 0..m {
            inv[i * m + i] = S::one();
        }
        for col in 0..m {
            let mut piv_row = col;
            let mut best = mat[col * m + col].abs();
            for r in col + 1..m {
                let cand = mat[r * m + col].abs();
                if cand > best {
                    best = cand;
                    piv_row = r;
                }
            }
            if !best.nonzero() {
                return false;
            }
            if piv_row != col {
                for k in 0..m {
                    mat.swap(piv_row * m + k, col * m + k);
                    inv.swap(piv_row * m + k, col * m + k);
                }
            }
            let piv = mat[col * m + col].clone();
            for k in 0..m {
                mat[col * m + k] = mat[col * m + k].div(&piv);
                inv[col * m + k] = inv[col * m + k].div(&piv);
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = mat[r * m + col].clone();
                if !f.nonzero() {
                    continue;
                }
                for k in 0..m {
                    let delta = f.mul(&mat[col * m + k]);
                    mat[r * m + k] = mat[r * m + k].sub(&delta);
                    let delta = f.mul(&inv[col * m + k]);
                    inv[r * m + k] = inv[r * m + k].sub(&delta);
                }
            }
        }
        self.binv = inv;
        true
    }

    fn alpha(&self, var: u32) -> Vec<S> {
        let m = self.m;
        let mut dense = vec![S::zero(); m];
        match self.col(var) {
            ColRef::Structural(entries) => {
                for (row, coeff) in entries {
                    dense[*row as usize] = coeff.clone();
                }
            }
            ColRef::Unit(row) => {
                dense[row] = S::one();
            }
        }
        let mut out = vec![S::zero(); m];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = S::zero();
            for k in 0..m {
                let e = &self.binv[i * m + k];
                if e.nonzero() && dense[k].nonzero() {
                    acc = acc.add(&e.mul(&dense[k]));
                }
            }
            *o = acc;
        }
        out
    }

    fn row_duals(&self, costs: &[S]) -> Vec<S> {
        let m = self.m;
        let mut y = vec![S::zero(); m];
        for slot in 0..m {
            let cb = &costs[self.basis[slot] as usize];
            if !cb.nonzero() {
                continue;
            }
            for k in 0..m {
                let e = &self.binv[slot * m + k];
                if e.nonzero() {
                    y[k] = y[k].add(&cb.mul(e));
                }
            }
        }
        y
    }

    fn reduced_cost(&self, costs: &[S], y: &[S], var: u32) -> S {
        let mut z = costs[var as usize].clone();
        match self.col(var) {
            ColRef::Structural(entries) => {
                for (row, coeff) in entries {
                    z = z.sub(&y[*row as usize].mul(coeff));
                }
            }
            ColRef::Unit(row) => {
                z = z.sub(&y[row]);
            }
        }
        z
    }

    /// Total bound violation of the basic variables and its gradient.
    fn infeasibility(&self) -> (S, Vec<S>) {
        let mut w = S::zero();
        let mut d = vec![S::zero(); self.m];
        for slot in 0..self.m {
            let var = self.basis[slot] as usize;
            let x = &self.xb[slot];
            if let Some(l) = &self.lo[var] {
                let gap = l.sub(x);
                if gap > S::feps() {
                    w = w.add(&gap);
                    d[slot] = S::from_i64(-1);
                    continue;
                }
            }
            if let Some(u) = &self.hi[var] {
                let gap = x.sub(u);
                if gap > S::feps() {
                    w = w.add(&gap);
                    d[slot] = S::from_i64(1);
                }
            }
        }
        (w, d)
    }

    fn phase1_costs(&self, d: &[S]) -> Vec<S> {
        let mut costs = vec![S::zero(); self.nall];
        for slot in 0..self.m {
            costs[self.basis[slot] as usize] = d[slot].clone();
        }
        costs
    }

    /// One pricing pass: picks an entering variable and its direction, or
    /// `None` at optimality for the given costs.
    fn price(&self, costs: &[S], y: &[S]) -> Option<(u32, i8, S)> {
        let mut best: Option<(u32, i8, S)> = None;
        for var in 0..self.nall as u32 {
            let (dir, score) = match self.state[var as usize] {
                VState::Basic(_) => continue,
                VState::AtLo => {
                    if self.lo[var as usize] == self.hi[var as usize] {
                        continue;
                    }
                    let z = self.reduced_cost(costs, y, var);
                    if z.lt0() {
                        (1i8, z.abs())
                    } else {
                        continue;
                    }
                }
                VState::AtUp => {
                    let z = self.reduced_cost(costs, y, var);
                    if z.gt0() {
                        (-1i8, z.abs())
                    } else {
                        continue;
                    }
                }
                VState::Free => {
                    let z = self.reduced_cost(costs, y, var);
                    if z.lt0() {
                        (1i8, z.abs())
                    } else if z.gt0() {
                        (-1i8, z.abs())
                    } else {
                        continue;
                    }
                }
            };
            if self.bland {
                return Some((var, dir, score));
            }
            match &best {
                Some((_, _, s)) if *s >= score => {}
                _ => best = Some((var, dir, score)),
            }
        }
        best
    }

    /// Ratio test. Returns the step length, and the blocking basis slot with
    /// the bound it reaches, or `None` when only the entering variable's own
    /// opposite bound blocks (bound flip), or `Unblocked` when nothing does.
    fn ratio(&self, entering: u32, dir: i8, alpha: &[S]) -> RatioResult<S> {
        let mut t_best: Option<S> = None;
        let mut blocker: Option<(u32, VState)> = None;
        for slot in 0..self.m {
            let a = &alpha[slot];
            let rate = if dir > 0 { a.neg() } else { a.clone() };
            if !rate.nonzero() {
                continue;
            }
            let var = self.basis[slot] as usize;
            let cur = &self.xb[slot];
            let (t, target) = if rate.lt0() {
                if let Some(u) = &self.hi[var] {
                    if cur.sub(u) > S::feps() {
                        (cur.sub(u).div(&rate.neg()), VState::AtUp)
                    } else if let Some(l) = &self.lo[var] {
                        let dist = cur.sub(l);
                        let dist = if dist.lt0() { S::zero() } else { dist };
                        (dist.div(&rate.neg()), VState::AtLo)
                    } else {
                        continue;
                    }
                } else if let Some(l) = &self.lo[var] {
                    if l.sub(cur) > S::feps() {
                        continue;
                    }
                    let dist = cur.sub(l);
                    let dist = if dist.lt0() { S::zero() } else { dist };
                    (dist.div(&rate.neg()), VState::AtLo)
                } else {
                    continue;
                }
            } else {
                if let Some(l) = &self.lo[var] {
                    if l.sub(cur) > S::feps() {
                        let t = l.sub(cur).div(&rate);
                        (t, VState::AtLo)
                    } else if let Some(u) = &self.hi[var] {
                        let dist = u.sub(cur);
                        let dist = if dist.lt0() { S::zero() } else { dist };
                        (dist.div(&rate), VState::AtUp)
                    } else {
                        continue;
                    }
                } else if let Some(u) = &self.hi[var] {
                    if cur.sub(u) > S::feps() {
                        continue;
                    }
                    let dist = u.sub(cur);
                    let dist = if dist.lt0() { S::zero() } else { dist };
                    (dist.div(&rate), VState::AtUp)
                } else {
                    continue;
                }
            };
            let replace = match &t_best {
                None => true,
                Some(tb) => {
                    if t < tb.sub(&S::eps()) {
                        true
                    } else if t > tb.add(&S::eps()) {
                        false
                    } else if self.bland {
                        (self.basis[slot]) < blocker.as_ref().unwrap().0
                    } else {
                        let a_new = alpha[slot].abs();
                        let old_slot = match self.state[blocker.as_ref().unwrap().0 as usize] {
                            VState::Basic(s) => s as usize,
                            _ => unreachable!(),
                        };
                        let a_old = alpha[old_slot].abs();
                        a_new > a_old
                            || (a_new == a_old && self.basis[slot] < blocker.as_ref().unwrap().0)
                    }
                }
            };
            if replace {
                t_best = Some(t);
                blocker = Some((self.basis[slot], target));
            }
        }
        let span = match (&self.lo[entering as usize], &self.hi[entering as usize]) {
            (Some(l), Some(u)) => Some(u.sub(l)),
            _ => None,
        };
        match (t_best, span) {
            (Some(t), Some(s)) if s < t => RatioResult::BoundFlip(s),
            (Some(t), _) => {
                let (var, target) = blocker.unwrap();
                RatioResult::Pivot(t, var, target)
            }
            (None, Some(s)) => RatioResult::BoundFlip(s),
            (None, None) => RatioResult::Unblocked,
        }
    }

    fn apply_step(&mut self, entering: u32, dir: i8, alpha: &[S], t: &S) {
        for slot in 0..self.m {
            if alpha[slot].nonzero() {
                let delta = alpha[slot].mul(t);
                let delta = if dir > 0 { delta } else { delta.neg() };
                self.xb[slot] = self.xb[slot].sub(&delta);
            }
        }
        let _ = entering;
    }

    fn pivot(&mut self, entering: u32, dir: i8, alpha: Vec<S>, t: S, leaving: u32, target: VState) {
        let slot = match self.state[leaving as usize] {
            VState::Basic(s) => s as usize,
            _ => unreachable!(),
        };
        let enter_val = {
            let base = self.nb_val(entering);
            let step = if dir > 0 { t.clone() } else { t.neg() };
            base.add(&step)
        };
        self.apply_step(entering, dir, &alpha, &t);
        self.state[leaving as usize] = target;
        self.basis[slot] = entering;
        self.state[entering as usize] = VState::Basic(slot as u32);
        self.xb[slot] = enter_val;
        let m = self.m;
        let piv = alpha[slot].clone();
        for k in 0..m {
            self.binv[slot * m + k] = self.binv[slot * m + k].div(&piv);
        }
        for r in 0..m {
            if r == slot {
                continue;
            }
            let f = alpha[r].clone();
            if !f.nonzero() {
                continue;
            }
            for k in 0..m {
                let delta = f.mul(&self.binv[slot * m + k]);
                self.binv[r * m + k] = self.binv[r * m + k].sub(&delta);
            }
        }
        self.pivots += 1;
        if !S::EXACT {
            if self.pivots % REFACTOR_EVERY == 0 {
                if self.refactor() {
                    self.recompute_xb();
                }
            } else if self.pivots % RECOMPUTE_EVERY == 0 {
                self.recompute_xb();
            }
        }
    }

    fn flip(&mut self, entering: u32, dir: i8, alpha: &[S], span: &S) {
        self.apply_step(entering, dir, alpha, span);
        self.state[entering as usize] = match self.state[entering as usize] {
            VState::AtLo => VState::AtUp,
            VState::AtUp => VState::AtLo,
            other => other,
        };
        self.pivots += 1;
    }

    fn note_progress(&mut self, improved: bool) {
        if improved {
            self.no_progress = 0;
            self.bland = false;
        } else {
            self.no_progress += 1;
            if self.no_progress >= STALL_LIMIT {
                self.bland = true;
            }
        }
    }

    fn run(&mut self) -> SimplexOutcome<S> {
        if self.m == 0 {
            return self.trivial_solution();
        }
        let mut iters = 0usize;
        loop {
            iters += 1;
            if iters > self.iter_cap {
                return SimplexOutcome::Stalled;
            }
            let (w, d) = self.infeasibility();
            if !w.gt0() {
                break;
            }
            let costs = self.phase1_costs(&d);
            let y = self.row_duals(&costs);
            let Some((entering, dir, _)) = self.price(&costs, &y) else {
                return SimplexOutcome::Infeasible;
            };
            let alpha = self.alpha(entering);
            match self.ratio(entering, dir, &alpha) {
                RatioResult::Pivot(t, leaving, target) => {
                    self.pivot(entering, dir, alpha, t, leaving, target)
                }
                RatioResult::BoundFlip(span) => self.flip(entering, dir, &alpha, &span),
                RatioResult::Unblocked => return SimplexOutcome::Stalled,
            }
            let (w2, _) = self.infeasibility();
            self.note_progress(w2 < w);
        }
        let costs = self.c.clone();
        let mut last_value: Option<S> = None;
        loop {
            iters += 1;
            if iters > self.iter_cap {
                return SimplexOutcome::Stalled;
            }
            let (w, d) = self.infeasibility();
            if w.gt0() {
                let p1 = self.phase1_costs(&d);
                let y = self.row_duals(&p1);
                let Some((entering, dir, _)) = self.price(&p1, &y) else {
                    return SimplexOutcome::Infeasible;
                };
                let alpha = self.alpha(entering);
                match self.ratio(entering, dir, &alpha) {
                    RatioResult::Pivot(t, leaving, target) => {
                        self.pivot(entering, dir, alpha, t, leaving, target)
                    }
                    RatioResult::BoundFlip(span) => self.flip(entering, dir, &alpha, &span),
                    RatioResult::Unblocked => return SimplexOutcome::Stalled,
                }
                continue;
            }
            let y = self.row_duals(&costs);
            let Some((entering, dir, _)) = self.price(&costs, &y) else {
                return self.finish(&costs);
            };
            let alpha = self.alpha(entering);
            match self.ratio(entering, dir, &alpha) {
                RatioResult::Pivot(t, leaving, target) => {
                    self.pivot(entering, dir, alpha, t, leaving, target)
                }
                RatioResult::BoundFlip(span) => self.flip(entering, dir, &alpha, &span),
                RatioResult::Unblocked => return SimplexOutcome::Unbounded,
            }
            let value = self.objective_value(&costs);
            let improved = match &last_value {
                None => true,
                Some(prev) => value < prev.sub(&S::eps()),
            };
            self.note_progress(improved);
            last_value = Some(value);
        }
    }

    fn objective_value(&self, costs: &[S]) -> S {
        let mut v = S::zero();
        for var in 0..self.nall as u32 {
            let cv = &costs[var as usize];
            if cv.nonzero() {
                v = v.add(&cv.mul(&self.nb_val(var)));
            }
        }
        v
    }

    fn trivial_solution(&self) -> SimplexOutcome<S> {
        let mut x = Vec::with_capacity(self.prob.ncols);
        for j in 0..self.prob.ncols {
            let c = &self.prob.obj[j];
            let v = if c.gt0() {
                self.lo[j].clone()
            } else if c.lt0() {
                self.hi[j].clone()
            } else {
                self.lo[j].clone().or_else(|| self.hi[j].clone())
            };
            match v {
                Some(v) => x.push(v),
                None => {
                    if c.nonzero() {
                        return SimplexOutcome::Unbounded;
                    }
                    x.push(S::zero());
                }
            }
        }
        let mut value = S::zero();
        for (j, xv) in x.iter().enumerate() {
            value = value.add(&self.prob.obj[j].mul(xv));
        }
        SimplexOutcome::Optimal {
            x,
            duals: Vec::new(),
            value,
        }
    }

    fn finish(&self, costs: &[S]) -> SimplexOutcome<S> {
        let x: Vec<S> = (0..self.prob.ncols as u32).map(|v| self.nb_val(v)).collect();
        let duals = self.row_duals(costs);
        let mut value = S::zero();
        for (j, xv) in x.iter().enumerate() {
            let c = &self.prob.obj[j];
            if c.nonzero() {
                value = value.add(&c.mul(xv));
            }
        }
        SimplexOutcome::Optimal { x, duals, value }
    }
}

enum ColRef<'a, S> {
    Structural(&'a [(u32, S)]),
    Unit(usize),
}

enum RatioResult<S> {
    Pivot(S, u32, VState),
    BoundFlip(S),
    Unblocked,
}

/// Solves a core problem directly with the two-phase method.
pub fn simplex_solve<S: Scalar>(prob: &CoreLp<S>) -> SimplexOutcome<S> {
    Simplex::new(prob).run()
}

/// Best rational approximation of `x` with denominator at most `max_den`,
/// snapping values that are already near integers.
pub fn rat_from_f64(x: f64, max_den: u64) -> Rat {
    if !x.is_finite() {
        return rat_int(0);
    }
    if x.abs() < 1e-12 {
        return rat_int(0);
    }
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 {
        return Rat::from_integer(BigInt::from(rounded as i64));
    }
    let neg = x < 0.0;
    let mut v = x.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1u64, 1i64, 0u64);
    for _ in 0..64 {
        let a = v.floor();
        if a > 1e17 {
            break;
        }
        let ai = a as i64;
        let p2 = ai.saturating_mul(p1).saturating_add(p0);
        let q2 = (ai as u64).saturating_mul(q1).saturating_add(q0);
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = v - a;
        if frac < 1e-15 {
            break;
        }
        v = 1.0 / frac;
    }
    if q1 == 0 {
        return rat_int(0);
    }
    let num = BigInt::from(if neg { -p1 } else { p1 });
    Rat::new(num, BigInt::from(q1))
}

#[derive(Debug, Clone)]
enum ColMap {
    Fixed(Rat),
    Core(u32),
}

/// An exactly presolved model: fixed and merged variables eliminated, the
/// rest renumbered into a smaller core problem.
#[derive(Debug, Clone)]
pub struct PresolvedCore {
    pub core: CoreLp<Rat>,
    col_of: Vec<ColMap>,
    pub shift: Rat,
}

impl PresolvedCore {
    /// Expands a core solution back to the model's full variable vector.
    pub fn full_values<S: Scalar>(&self, core_x: &[S]) -> Vec<S> {
        self.col_of
            .iter()
            .map(|cm| match cm {
                ColMap::Fixed(v) => S::from_rat(v),
                ColMap::Core(c) => core_x[*c as usize].clone(),
            })
            .collect()
    }

    /// Certified lower bound on the model's optimum from approximate duals
    /// of the core rows: duals are rounded to rationals, sign conditions
    /// enforced, and the bound evaluated in exact arithmetic.
    pub fn certified_lower_bound(&self, core_duals: &[Rat]) -> Rat {
        let core = &self.core;
        let mut bound = self.shift.clone();
        let mut reduced: Vec<Rat> = core.obj.clone();
        for (i, (terms, op, rhs)) in core.rows.iter().enumerate() {
            let mut y = core_duals[i].clone();
            if *op == Op::Le && y < rat_int(0) {
                y = rat_int(0);
            }
            if y.is_zero() {
                continue;
            }
            bound -= y.clone() * rhs.clone();
            for (v, coeff) in terms {
                reduced[*v as usize] += y.clone() * coeff.clone();
            }
        }
        for (j, r) in reduced.iter().enumerate() {
            let l = core.lo[j].as_ref().expect("presolved bounds are finite");
            let u = core.hi[j].as_ref().expect("presolved bounds are finite");
            let at_l = r.clone() * l.clone();
            let at_u = r.clone() * u.clone();
            bound += if at_l <= at_u { at_l } else { at_u };
        }
        bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresolveInfeasible;

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }
    fn find(&mut self, v: u32) -> u32 {
        if self.parent[v as usize] != v {
            let root = self.find(self.parent[v as usize]);
            self.parent[v as usize] = root;
        }
        self.parent[v as usize]
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Exact presolve of a built model, with optional 0/1 fixings of variables
/// (used by branch and bound).
pub fn presolve(
    model: &LpModel,
    fixings: &[(u32, bool)],
) -> Result<PresolvedCore, PresolveInfeasible> {
    let nv = model.nvars();
    let mut lo: Vec<Rat> = vec![rat_int(0); nv];
    let mut hi: Vec<Rat> = vec![Rat::from_integer(BigInt::from(1)); nv];
    for (var, val) in fixings {
        let v = Rat::from_integer(BigInt::from(i64::from(*val)));
        if v < lo[*var as usize] || v > hi[*var as usize] {
            return Err(PresolveInfeasible);
        }
        lo[*var as usize] = v.clone();
        hi[*var as usize] = v;
    }
    let mut uf = UnionFind::new(nv);
    let mut rows: Vec<Option<(BTreeMap<u32, i64>, Op, Rat)>> = model
        .rows
        .iter()
        .map(|r| {
            let terms: BTreeMap<u32, i64> =
                r.terms.iter().map(|(v, c)| (*v, *c as i64)).collect();
            Some((terms, r.op, Rat::from_integer(BigInt::from(r.rhs))))
        })
        .collect();

    for _pass in 0..30 {
        let mut changed = false;
        for row_slot in rows.iter_mut() {
            let Some((terms, op, rhs)) = row_slot else {
                continue;
            };
            let mut rebuilt: BTreeMap<u32, i64> = BTreeMap::new();
            let mut rhs_new = rhs.clone();
            let mut touched = false;
            for (&v, &coeff) in terms.iter() {
                let r = uf.find(v);
                if r != v {
                    touched = true;
                }
                if lo[r as usize] == hi[r as usize] {
                    rhs_new -= Rat::from_integer(BigInt::from(coeff)) * lo[r as usize].clone();
                    touched = true;
                    continue;
                }
                let e = rebuilt.entry(r).or_insert(0);
                *e += coeff;
            }
            rebuilt.retain(|_, c| *c != 0);
            if touched {
                *terms = rebuilt;
                *rhs = rhs_new;
                changed = true;
            }
            match terms.len() {
                0 => {
                    let bad = match op {
                        Op::Le => *rhs < rat_int(0),
                        Op::Eq => !rhs.is_zero(),
                    };
                    if bad {
                        return Err(PresolveInfeasible);
                    }
                    *row_slot = None;
                    changed = true;
                }
                1 => {
                    let (&v, &coeff) = terms.iter().next().unwrap();
                    let bnd = rhs.clone() / Rat::from_integer(BigInt::from(coeff));
                    match op {
                        Op::Eq => {
                            if bnd < lo[v as usize] || bnd > hi[v as usize] {
                                return Err(PresolveInfeasible);
                            }
                            lo[v as usize] = bnd.clone();
                            hi[v as usize] = bnd;
                        }
                        Op::Le => {
                            if coeff > 0 {
                                if bnd < hi[v as usize] {
                                    hi[v as usize] = bnd;
                                }
                            } else if bnd > lo[v as usize] {
                                lo[v as usize] = bnd;
                            }
                            if lo[v as usize] > hi[v as usize] {
                                return Err(PresolveInfeasible);
                            }
                        }
                    }
                    *row_slot = None;
                    changed = true;
                }
                2 if *op == Op::Eq && rhs.is_zero() => {
                    let mut it = terms.iter();
                    let (&a, &ca) = it.next().unwrap();
                    let (&b, &cb) = it.next().unwrap();
                    if ca == -cb {
                        let (la, ha) = (lo[a as usize].clone(), hi[a as usize].clone());
                        let (lb, hb) = (lo[b as usize].clone(), hi[b as usize].clone());
                        let l = if la > lb { la } else { lb };
                        let h = if ha < hb { ha } else { hb };
                        if l > h {
                            return Err(PresolveInfeasible);
                        }
                        uf.union(a, b);
                        let r = uf.find(a);
                        let other = if r == a { b } else { a };
                        lo[r as usize] = l.clone();
                        hi[r as usize] = h.clone();
                        lo[other as usize] = l;
                        hi[other as usize] = h;
                        *row_slot = None;
                        changed = true;
                    }
                }
                _ => {}
            }
        }
        let mut bound_sync = false;
        for v in 0..nv as u32 {
            let r = uf.find(v);
            if r == v {
                continue;
            }
            let l = if lo[v as usize] > lo[r as usize] {
                lo[v as usize].clone()
            } else {
                lo[r as usize].clone()
            };
            let h = if hi[v as usize] < hi[r as usize] {
                hi[v as usize].clone()
            } else {
                hi[r as usize].clone()
            };
            if l > h {
                return Err(PresolveInfeasible);
            }
            if l != lo[r as usize] || h != hi[r as usize] {
                bound_sync = true;
            }
            lo[r as usize] = l.clone();
            hi[r as usize] = h.clone();
            lo[v as usize] = l;
            hi[v as usize] = h;
        }
        if !changed && !bound_sync {
            break;
        }
    }

    let mut obj_fold: Vec<Rat> = vec![rat_int(0); nv];
    let mut shift = rat_int(0);
    for (var, coeff) in &model.objective {
        let r = uf.find(*var);
        if lo[r as usize] == hi[r as usize] {
            shift += coeff.clone() * lo[r as usize].clone();
        } else {
            obj_fold[r as usize] += coeff.clone();
        }
    }

    let mut core_index: HashMap<u32, u32> = HashMap::new();
    let mut core_obj = Vec::new();
    let mut core_lo = Vec::new();
    let mut core_hi = Vec::new();
    for v in 0..nv as u32 {
        if uf.find(v) != v || lo[v as usize] == hi[v as usize] {
            continue;
        }
        let idx = core_index.len() as u32;
        core_index.insert(v, idx);
        core_obj.push(obj_fold[v as usize].clone());
        core_lo.push(Some(lo[v as usize].clone()));
        core_hi.push(Some(hi[v as usize].clone()));
    }

    let mut seen: BTreeSet<(Vec<(u32, i64)>, bool, Rat)> = BTreeSet::new();
    let mut core_rows = Vec::new();
    for row in rows.into_iter().flatten() {
        let (terms, op, rhs) = row;
        let mut folded: BTreeMap<u32, i64> = BTreeMap::new();
        let mut rhs = rhs;
        for (v, coeff) in terms {
            let r = uf.find(v);
            if lo[r as usize] == hi[r as usize] {
                rhs -= Rat::from_integer(BigInt::from(coeff)) * lo[r as usize].clone();
            } else {
                *folded.entry(core_index[&r]).or_insert(0) += coeff;
            }
        }
        folded.retain(|_, c| *c != 0);
        if folded.is_empty() {
            let bad = match op {
                Op::Le => rhs < rat_int(0),
                Op::Eq => !rhs.is_zero(),
            };
            if bad {
                return Err(PresolveInfeasible);
            }
            continue;
        }
        let canon: Vec<(u32, i64)> = folded.iter().map(|(&v, &c)| (v, c)).collect();
        if !seen.insert((canon.clone(), matches!(op, Op::Le), rhs.clone())) {
            continue;
        }
        core_rows.push((
            canon
                .into_iter()
                .map(|(v, c)| (v, Rat::from_integer(BigInt::from(c))))
                .collect(),
            op,
            rhs,
        ));
    }

    let col_of = (0..nv as u32)
        .map(|v| {
            let r = uf.find(v);
            if lo[r as usize] == hi[r as usize] {
                ColMap::Fixed(lo[r as usize].clone())
            } else {
                ColMap::Core(core_index[&r])
            }
        })
        .collect();

    Ok(PresolvedCore {
        core: CoreLp {
            ncols: core_obj.len(),
            rows: core_rows,
            obj: core_obj,
            lo: core_lo,
            hi: core_hi,
        },
        col_of,
        shift,
    })
}

/// A dual formulation of a boxed core problem, with enough bookkeeping to
/// recover the original primal solution and duals.
struct Dualized {
    prob: CoreLp<Rat>,
    n_rows_orig: usize,
}

fn dualize(core: &CoreLp<Rat>) -> Dualized {
    let m = core.rows.len();
    let n = core.ncols;
    let mut rows: Vec<(Vec<(u32, Rat)>, Op, Rat)> =
        (0..n).map(|j| (Vec::new(), Op::Eq, core.obj[j].clone())).collect();
    let mut obj = Vec::with_capacity(m + 2 * n);
    let mut lo = Vec::with_capacity(m + 2 * n);
    let mut hi = Vec::with_capacity(m + 2 * n);
    for (i, (terms, op, rhs)) in core.rows.iter().enumerate() {
        for (v, coeff) in terms {
            rows[*v as usize].0.push((i as u32, -coeff.clone()));
        }
        obj.push(rhs.clone());
        match op {
            Op::Le => {
                lo.push(Some(rat_int(0)));
                hi.push(None);
            }
            Op::Eq => {
                lo.push(None);
                hi.push(None);
            }
        }
    }
    for j in 0..n {
        let pi = (m + j) as u32;
        rows[j].0.push((pi, Rat::from_integer(BigInt::from(1))));
        obj.push(-core.lo[j].clone().expect("boxed primal"));
        lo.push(Some(rat_int(0)));
        hi.push(None);
    }
    for j in 0..n {
        let nu = (m + n + j) as u32;
        rows[j].0.push((nu, Rat::from_integer(BigInt::from(-1))));
        obj.push(core.hi[j].clone().expect("boxed primal"));
        lo.push(Some(rat_int(0)));
        hi.push(None);
    }
    Dualized {
        prob: CoreLp {
            ncols: m + 2 * n,
            rows,
            obj,
            lo,
            hi,
        },
        n_rows_orig: m,
    }
}

/// Errors from the solving layer that indicate resource exhaustion rather
/// than a property of the instance.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("the simplex iteration cap was reached before convergence")]
    Stalled,
    #[error("the search node budget of {budget} was exhausted")]
    Budget { budget: usize },
    #[error("internal solver invariant failed: {0}")]
    Internal(&'static str),
}

/// A solved float relaxation with its exact presolve kept for certification.
pub struct SolvedLp {
    /// Full variable vector, clamped to bounds and chain-monotone.
    pub values: Vec<f64>,
    /// Float objective value of `values`.
    pub value: f64,
    presolved: PresolvedCore,
    /// Approximate duals of the core rows, in the sign convention where
    /// inequality duals are nonnegative.
    core_duals: Vec<f64>,
}

impl SolvedLp {
    /// Exact rational lower bound on the optimum of the solved model.
    pub fn certified_lower_bound(&self) -> Rat {
        let exact: Vec<Rat> = self
            .core_duals
            .iter()
            .map(|&y| rat_from_f64(y, DUAL_DENOMINATOR_LIMIT))
            .collect();
        self.presolved.certified_lower_bound(&exact)
    }
}

pub enum LpOutcome {
    Optimal(Box<SolvedLp>),
    Infeasible,
}

fn should_dualize(core: &CoreLp<Rat>) -> bool {
    core.rows.len() > 200 && core.rows.len() > 2 * core.ncols
}

fn repair_chains(model: &LpModel, values: &mut [f64]) {
    for v in 0..model.n_vertices() {
        let cl = model.chain_len(v);
        let mut prev = 1.0f64;
        for t in 0..=cl {
            let idx = model.var(v, t) as usize;
            let mut x = values[idx].clamp(0.0, 1.0);
            if x > prev {
                x = prev;
            }
            values[idx] = x;
            prev = x;
        }
    }
}

fn solve_core_float(
    core: &CoreLp<Rat>,
    force_dual: Option<bool>,
) -> Result<Option<(Vec<f64>, Vec<f64>)>, SolveError> {
    let use_dual = force_dual.unwrap_or_else(|| should_dualize(core));
    if !use_dual {
        let fl = core.to_f64();
        return match simplex_solve(&fl) {
            SimplexOutcome::Optimal { x, duals, .. } => {
                let yhat = core
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(i, (_, op, _))| {
                        let y = -duals[i];
                        if *op == Op::Le && y < 0.0 {
                            0.0
                        } else {
                            y
                        }
                    })
                    .collect();
                Ok(Some((x, yhat)))
            }
            SimplexOutcome::Infeasible => Ok(None),
            SimplexOutcome::Unbounded => Err(SolveError::Internal(
                "a boxed problem cannot be unbounded",
            )),
            SimplexOutcome::Stalled => Err(SolveError::Stalled),
        };
    }
    let dual = dualize(core);
    let fl = dual.prob.to_f64();
    match simplex_solve(&fl) {
        SimplexOutcome::Optimal { x, duals, .. } => {
            let primal_x = duals.iter().map(|d| -d).collect();
            let yhat = x[..dual.n_rows_orig].to_vec();
            Ok(Some((primal_x, yhat)))
        }
        SimplexOutcome::Unbounded => Ok(None),
        SimplexOutcome::Infeasible => Err(SolveError::Internal(
            "the dual of a boxed problem cannot be infeasible",
        )),
        SimplexOutcome::Stalled => Err(SolveError::Stalled),
    }
}

fn solve_with(
    model: &LpModel,
    fixings: &[(u32, bool)],
    force_dual: Option<bool>,
) -> Result<LpOutcome, SolveError> {
    let presolved = match presolve(model, fixings) {
        Ok(p) => p,
        Err(PresolveInfeasible) => return Ok(LpOutcome::Infeasible),
    };
    let Some((core_x, core_duals)) = solve_core_float(&presolved.core, force_dual)? else {
        return Ok(LpOutcome::Infeasible);
    };
    let mut values = presolved.full_values(&core_x);
    repair_chains(model, &mut values);
    let mut value = 0.0;
    for (var, coeff) in &model.objective {
        value += f64::from_rat(coeff) * values[*var as usize];
    }
    Ok(LpOutcome::Optimal(Box::new(SolvedLp {
        values,
        value,
        presolved,
        core_duals,
    })))
}

/// Solves the relaxation in floating point, dualizing row-heavy systems.
pub fn solve(model: &LpModel) -> Result<LpOutcome, SolveError> {
    solve_with(model, &[], None)
}

pub enum ExactLpOutcome {
    Optimal { values: Vec<Rat>, value: Rat },
    Infeasible,
}

/// Solves the relaxation in exact rational arithmetic.
pub fn solve_exact(model: &LpModel) -> Result<ExactLpOutcome, SolveError> {
    let presolved = match presolve(model, &[]) {
        Ok(p) => p,
        Err(PresolveInfeasible) => return Ok(ExactLpOutcome::Infeasible),
    };
    let core = &presolved.core;
    let use_dual = should_dualize(core);
    let core_x: Option<Vec<Rat>> = if use_dual {
        let dual = dualize(core);
        match simplex_solve(&dual.prob) {
            SimplexOutcome::Optimal { duals, .. } => {
                Some(duals.iter().map(|d| -d.clone()).collect())
            }
            SimplexOutcome::Unbounded => None,
            SimplexOutcome::Infeasible => {
                return Err(SolveError::Internal(
                    "the dual of a boxed problem cannot be infeasible",
                ))
            }
            SimplexOutcome::Stalled => return Err(SolveError::Stalled),
        }
    } else {
        match simplex_solve(core) {
            SimplexOutcome::Optimal { x, .. } => Some(x),
            SimplexOutcome::Infeasible => None,
            SimplexOutcome::Unbounded => {
                return Err(SolveError::Internal(
                    "a boxed problem cannot be unbounded",
                ))
            }
            SimplexOutcome::Stalled => return Err(SolveError::Stalled),
        }
    };
    let Some(core_x) = core_x else {
        return Ok(ExactLpOutcome::Infeasible);
    };
    let values = presolved.full_values::<Rat>(&core_x);
    let mut value = rat_int(0);
    for (var, coeff) in &model.objective {
        value += coeff.clone() * values[*var as usize].clone();
    }
    Ok(ExactLpOutcome::Optimal { values, value })
}

pub struct IlpResult {
    pub map: Vec<usize>,
    pub value: Rat,
    pub nodes: usize,
}

pub enum IlpOutcome {
    Optimal(IlpResult),
    Infeasible,
}

/// Expands a single 0/1 fixing along its chain: a slot at 1 pulls every
/// earlier slot to 1, a slot at 0 pushes every later slot to 0.
fn chain_fixings(model: &LpModel, var: u32, val: bool) -> Vec<(u32, bool)> {
    let vertex = model.var_meta[var as usize].vertex;
    let slot = (var - model.chains[vertex].offset) as usize;
    let mut out = Vec::new();
    if val {
        for t in 0..=slot {
            out.push((model.var(vertex, t), true));
        }
    } else {
        for t in slot..=model.chain_len(vertex) {
            out.push((model.var(vertex, t), false));
        }
    }
    out
}

/// Minimizes over integral encodings by branch and bound on the chain
/// variables. Nodes are bounded by certified rational lower bounds, and the
/// incumbent is always the exact cost of a validated assignment.
pub fn solve_integer(
    inst: &Instance,
    model: &LpModel,
    warm: Option<&Homomorphism>,
    node_budget: usize,
) -> Result<IlpOutcome, SolveError> {
    let mut incumbent: Option<(Vec<usize>, Rat)> = warm.map(|h| (h.map.clone(), h.cost.clone()));
    let mut stack: Vec<Vec<(u32, bool)>> = vec![Vec::new()];
    let mut nodes = 0usize;
    while let Some(fixings) = stack.pop() {
        nodes += 1;
        if nodes > node_budget {
            return Err(SolveError::Budget {
                budget: node_budget,
            });
        }
        let solved = match solve_with(model, &fixings, None)? {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => continue,
        };
        let bound = solved.certified_lower_bound();
        if let Some((_, best)) = &incumbent {
            if &bound >= best {
                continue;
            }
        }
        let map = model.decode_integral_f64(&solved.values);
        if validate_hom(inst, &map).is_ok() {
            if let Some(cost) = crate::model::eval_cost(inst, &map) {
                match &incumbent {
                    Some((_, best)) if *best <= cost => {}
                    _ => incumbent = Some((map.clone(), cost)),
                }
            }
        }
        let fractional = (0..model.nvars() as u32)
            .filter(|&v| {
                let x = solved.values[v as usize];
                x > 1e-6 && x < 1.0 - 1e-6
            })
            .min_by(|&a, &b| {
                let fa = (solved.values[a as usize] - 0.5).abs();
                let fb = (solved.values[b as usize] - 0.5).abs();
                fa.partial_cmp(&fb).unwrap().then(a.cmp(&b))
            });
        let Some(branch_var) = fractional else {
            continue;
        };
        let up_first = solved.values[branch_var as usize] >= 0.5;
        let child = |val: bool| {
            let mut f = fixings.clone();
            f.extend(chain_fixings(model, branch_var, val));
            f
        };
        if up_first {
            stack.push(child(false));
            stack.push(child(true));
        } else {
            stack.push(child(true));
            stack.push(child(false));
        }
    }
    Ok(match incumbent {
        Some((map, value)) => IlpOutcome::Optimal(IlpResult { map, value, nodes }),
        None => IlpOutcome::Infeasible,
    })
}

//! Bounded-variable revised simplex in computational form.
//!
//! Every row `i` gets a logical variable `s_i = a_i^T x` whose bounds encode
//! the row sense, so the constraint matrix is `[A | -I]` with right-hand
//! side zero. Both the primal method (with a sum-of-infeasibilities phase 1)
//! and the dual method run on the same basis representation, which lets
//! branch-and-bound reoptimize after bound changes without a cold start.

use crate::factor::LuFactor;
use crate::model::MilpInstance;

const REFACTOR_EVERY: usize = 100;
const BLAND_AFTER: usize = 60;
/// Dual pivots without objective progress before the dual method hands
/// over to the primal one, which has an anti-cycling rule.
const DUAL_STALL: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub primal: f64,
    pub dual: f64,
    pub pivot: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            primal: 1e-9,
            dual: 1e-9,
            pivot: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum St {
    Basic,
    Lower,
    Upper,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    Cutoff,
}

/// Sparse LP data in computational form.
#[derive(Debug, Clone)]
pub(crate) struct LpData {
    pub m: usize,
    pub n: usize,
    cstart: Vec<usize>,
    cidx: Vec<usize>,
    cval: Vec<f64>,
    rstart: Vec<usize>,
    ridx: Vec<usize>,
    rval: Vec<f64>,
    pub cost: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LpData {
    pub(crate) fn from_instance(inst: &MilpInstance) -> Self {
        let n = inst.vars.len();
        let m = inst.rows.len();
        let mut counts = vec![0usize; n];
        let mut rstart = Vec::with_capacity(m + 1);
        let mut ridx = Vec::new();
        let mut rval = Vec::new();
        rstart.push(0);
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for row in &inst.rows {
            merged.clear();
            merged.extend(row.coeffs.iter().copied());
            merged.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < merged.len() {
                let j = merged[k].0;
                let mut v = 0.0;
                while k < merged.len() && merged[k].0 == j {
                    v += merged[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    ridx.push(j);
                    rval.push(v);
                    counts[j] += 1;
                }
            }
            rstart.push(ridx.len());
        }
        let mut cstart = vec![0usize; n + 1];
        for j in 0..n {
            cstart[j + 1] = cstart[j] + counts[j];
        }
        let mut fill = cstart.clone();
        let mut cidx = vec![0usize; ridx.len()];
        let mut cval = vec![0.0; ridx.len()];
        for i in 0..m {
            for t in rstart[i]..rstart[i + 1] {
                let j = ridx[t];
                cidx[fill[j]] = i;
                cval[fill[j]] = rval[t];
                fill[j] += 1;
            }
        }
        let mut cost = vec![0.0; n + m];
        let mut lo = vec![0.0; n + m];
        let mut hi = vec![0.0; n + m];
        for (j, v) in inst.vars.iter().enumerate() {
            cost[j] = v.obj;
            lo[j] = v.lower;
            hi[j] = v.upper;
        }
        for (i, row) in inst.rows.iter().enumerate() {
            let (a, b) = row.range();
            lo[n + i] = a;
            hi[n + i] = b;
        }
        LpData {
            m,
            n,
            cstart,
            cidx,
            cval,
            rstart,
            ridx,
            rval,
            cost,
            lo,
            hi,
        }
    }

    fn column(&self, j: usize) -> (Vec<usize>, Vec<f64>) {
        if j < self.n {
            let r = self.cstart[j]..self.cstart[j + 1];
            (self.cidx[r.clone()].to_vec(), self.cval[r].to_vec())
        } else {
            (vec![j - self.n], vec![-1.0])
        }
    }

    /// Scatters column `j` into the dense vector `out` (indexed by row).
    fn scatter(&self, j: usize, out: &mut [f64]) {
        if j < self.n {
            for t in self.cstart[j]..self.cstart[j + 1] {
                out[self.cidx[t]] = self.cval[t];
            }
        } else {
            out[j - self.n] = -1.0;
        }
    }

    fn dot_col(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            (self.cstart[j]..self.cstart[j + 1])
                .map(|t| self.cval[t] * y[self.cidx[t]])
                .sum()
        } else {
            -y[j - self.n]
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Simplex {
    pub lp: LpData,
    pub status: Vec<St>,
    head: Vec<usize>,
    pos: Vec<usize>,
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    factor: LuFactor,
    tol: Tolerances,
    pub iterations: usize,
    /// Iterations allowed per call to `solve`.
    pub iter_limit: usize,
    stop_at: usize,
    alpha: Vec<f64>,
    touched: Vec<usize>,
    in_touched: Vec<bool>,
    work: Vec<f64>,
    work2: Vec<f64>,
}

/// Snapshot of a basis, enough to warm start a later solve.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BasisSnapshot {
    status: Vec<St>,
    head: Vec<usize>,
}

impl Simplex {
    pub(crate) fn new(lp: LpData, tol: Tolerances) -> Self {
        let (m, n) = (lp.m, lp.n);
        let mut status = vec![St::Lower; n + m];
        let mut head = vec![0; m];
        let mut pos = vec![usize::MAX; n + m];
        for j in 0..n {
            status[j] = initial_status(lp.cost[j], lp.lo[j], lp.hi[j]);
        }
        for i in 0..m {
            status[n + i] = St::Basic;
            head[i] = n + i;
            pos[n + i] = i;
        }
        let iter_limit = 50 * (n + m) + 10_000;
        Simplex {
            lp,
            status,
            head,
            pos,
            x: vec![0.0; n + m],
            d: vec![0.0; n + m],
            y: vec![0.0; m],
            factor: LuFactor::default(),
            tol,
            iterations: 0,
            iter_limit,
            stop_at: iter_limit,
            alpha: vec![0.0; n + m],
            touched: Vec::new(),
            in_touched: vec![false; n + m],
            work: vec![0.0; m],
            work2: vec![0.0; m],
        }
    }

    pub(crate) fn snapshot(&self) -> BasisSnapshot {
        BasisSnapshot {
            status: self.status.clone(),
            head: self.head.clone(),
        }
    }

    pub(crate) fn restore(&mut self, snap: &BasisSnapshot) {
        self.status.clone_from(&snap.status);
        self.head.clone_from(&snap.head);
        for p in self.pos.iter_mut() {
            *p = usize::MAX;
        }
        for (k, &v) in self.head.iter().enumerate() {
            self.pos[v] = k;
        }
    }

    fn total(&self) -> usize {
        self.lp.n + self.lp.m
    }

    /// Makes nonbasic statuses consistent with the current bounds.
    fn normalize_status(&mut self) {
        for j in 0..self.total() {
            if self.status[j] == St::Basic {
                continue;
            }
            let (lo, hi) = (self.lp.lo[j], self.lp.hi[j]);
            self.status[j] = match self.status[j] {
                St::Lower if lo.is_finite() => St::Lower,
                St::Upper if hi.is_finite() => St::Upper,
                _ => initial_status(self.lp.cost[j], lo, hi),
            };
        }
    }

    fn nb_value(&self, j: usize) -> f64 {
        match self.status[j] {
            St::Lower => self.lp.lo[j],
            St::Upper => self.lp.hi[j],
            _ => 0.0,
        }
    }

    fn refactor(&mut self) {
        let m = self.lp.m;
        loop {
            let cols: Vec<_> = self.head.iter().map(|&v| self.lp.column(v)).collect();
            match LuFactor::factorize(m, &cols) {
                Ok(f) => {
                    self.factor = f;
                    return;
                }
                Err(s) => {
                    for (&p, &r) in s.positions.iter().zip(&s.rows) {
                        let v = self.head[p];
                        let (lo, hi, xv) = (self.lp.lo[v], self.lp.hi[v], self.x[v]);
                        self.status[v] = if lo.is_finite() && (!hi.is_finite() || (xv - lo).abs() <= (hi - xv).abs()) {
                            St::Lower
                        } else if hi.is_finite() {
                            St::Upper
                        } else {
                            St::Free
                        };
                        self.pos[v] = usize::MAX;
                        let l = self.lp.n + r;
                        self.head[p] = l;
                        self.pos[l] = p;
                        self.status[l] = St::Basic;
                    }
                }
            }
        }
    }

    fn compute_x(&mut self) {
        let n = self.lp.n;
        let m = self.lp.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.total() {
            if self.status[j] == St::Basic {
                continue;
            }
            let v = self.nb_value(j);
            self.x[j] = v;
            if v == 0.0 {
                continue;
            }
            if j < n {
                for t in self.lp.cstart[j]..self.lp.cstart[j + 1] {
                    rhs[self.lp.cidx[t]] -= self.lp.cval[t] * v;
                }
            } else {
                rhs[j - n] += v;
            }
        }
        let mut xb = vec![0.0; m];
        self.factor.ftran(&mut rhs, &mut xb);
        for (p, &v) in self.head.iter().enumerate() {
            self.x[v] = xb[p];
        }
    }

    /// Recomputes duals and reduced costs for the given cost vector.
    fn compute_duals(&mut self, cost: &[f64]) {
        let m = self.lp.m;
        let mut cb: Vec<f64> = self.head.iter().map(|&v| cost[v]).collect();
        let mut y = vec![0.0; m];
        self.factor.btran(&mut cb, &mut y);
        for j in 0..self.total() {
            self.d[j] = if self.status[j] == St::Basic {
                0.0
            } else {
                cost[j] - self.lp.dot_col(j, &y)
            };
        }
        self.y = y;
    }

    fn reinvert(&mut self) {
        self.refactor();
        self.compute_x();
        let cost = self.lp.cost.clone();
        self.compute_duals(&cost);
    }

    pub(crate) fn objective(&self) -> f64 {
        (0..self.lp.n).map(|j| self.lp.cost[j] * self.x[j]).sum()
    }

    fn infeasibility(&self, v: usize) -> f64 {
        (self.lp.lo[v] - self.x[v]).max(self.x[v] - self.lp.hi[v]).max(0.0)
    }

    fn dual_infeasibility(&self, j: usize) -> f64 {
        if self.lp.lo[j] == self.lp.hi[j] {
            return 0.0;
        }
        match self.status[j] {
            St::Basic => 0.0,
            St::Lower => (-self.d[j]).max(0.0),
            St::Upper => self.d[j].max(0.0),
            St::Free => self.d[j].abs(),
        }
    }

    pub(crate) fn dual_feasible(&self) -> bool {
        (0..self.total()).all(|j| self.dual_infeasibility(j) <= self.tol.dual * 10.0)
    }

    /// Solves from the current basis. Bounds may have changed since the last call.
    pub(crate) fn solve(&mut self, cutoff: f64) -> Outcome {
        self.stop_at = self.iterations.saturating_add(self.iter_limit);
        self.normalize_status();
        self.reinvert();
        if self.dual_feasible() {
            let o = self.dual(cutoff);
            if o != Outcome::Optimal {
                return o;
            }
            let cost = self.lp.cost.clone();
            self.compute_duals(&cost);
            if self.dual_feasible() {
                return Outcome::Optimal;
            }
        }
        let o = self.primal();
        if o == Outcome::Optimal {
            let cost = self.lp.cost.clone();
            self.compute_duals(&cost);
        }
        o
    }

    fn maybe_refactor(&mut self) -> bool {
        let m = self.lp.m;
        if self.factor.num_etas() >= REFACTOR_EVERY || self.factor.eta_nnz() > 4 * self.factor.lu_nnz() + 10 * m {
            self.reinvert();
            return true;
        }
        false
    }

    fn ftran_col(&mut self, q: usize) -> Vec<f64> {
        for w in self.work.iter_mut() {
            *w = 0.0;
        }
        self.lp.scatter(q, &mut self.work);
        let mut out = vec![0.0; self.lp.m];
        self.factor.ftran(&mut self.work, &mut out);
        out
    }

    /// Fills `alpha` with row `r` of `B^{-1} [A | -I]` over nonbasic columns.
    fn row_alpha(&mut self, r: usize) {
        for &j in &self.touched {
            self.alpha[j] = 0.0;
            self.in_touched[j] = false;
        }
        self.touched.clear();
        for w in self.work.iter_mut() {
            *w = 0.0;
        }
        self.work[r] = 1.0;
        for w in self.work2.iter_mut() {
            *w = 0.0;
        }
        self.factor.btran(&mut self.work, &mut self.work2);
        let n = self.lp.n;
        for i in 0..self.lp.m {
            let rho = self.work2[i];
            if rho == 0.0 {
                continue;
            }
            for t in self.lp.rstart[i]..self.lp.rstart[i + 1] {
                let j = self.lp.ridx[t];
                if self.status[j] == St::Basic {
                    continue;
                }
                if !self.in_touched[j] {
                    self.in_touched[j] = true;
                    self.touched.push(j);
                }
                self.alpha[j] += rho * self.lp.rval[t];
            }
            let l = n + i;
            if self.status[l] != St::Basic {
                if !self.in_touched[l] {
                    self.in_touched[l] = true;
                    self.touched.push(l);
                }
                self.alpha[l] = -rho;
            }
        }
    }

    fn replace(&mut self, r: usize, q: usize, w: &[f64], leaving_status: St) {
        let p = self.head[r];
        self.factor.update(r, w);
        self.head[r] = q;
        self.pos[q] = r;
        self.pos[p] = usize::MAX;
        self.status[q] = St::Basic;
        self.status[p] = leaving_status;
        self.d[q] = 0.0;
    }

    pub(crate) fn dual(&mut self, cutoff: f64) -> Outcome {
        let mut retried = false;
        let mut stalled = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        loop {
            if stalled > DUAL_STALL {
                return self.primal();
            }
            if self.iterations >= self.stop_at {
                return Outcome::IterationLimit;
            }
            self.maybe_refactor();
            let mut r = usize::MAX;
            let mut worst = self.tol.primal;
            for (p, &v) in self.head.iter().enumerate() {
                let inf = self.infeasibility(v);
                if inf > worst {
                    worst = inf;
                    r = p;
                }
            }
            if r == usize::MAX {
                return Outcome::Optimal;
            }
            let pv = self.head[r];
            let above = self.x[pv] > self.lp.hi[pv];
            let s = if above { 1.0 } else { -1.0 };
            self.row_alpha(r);

            let mut theta_max = f64::INFINITY;
            for &j in &self.touched {
                if let Some(dj) = self.dual_candidate(j, s) {
                    theta_max = theta_max.min((dj + self.tol.dual) / self.alpha[j].abs());
                }
            }
            let mut q = usize::MAX;
            let mut best = 0.0;
            for &j in &self.touched {
                if let Some(dj) = self.dual_candidate(j, s) {
                    let a = self.alpha[j].abs();
                    if dj / a <= theta_max && (a > best || (a == best && j < q)) {
                        best = a;
                        q = j;
                    }
                }
            }
            if q == usize::MAX {
                if !retried && self.factor.num_etas() > 0 {
                    self.reinvert();
                    retried = true;
                    continue;
                }
                return Outcome::Infeasible;
            }
            let w = self.ftran_col(q);
            let aq = self.alpha[q];
            if (w[r] - aq).abs() > 1e-7 * (1.0 + aq.abs()) && self.factor.num_etas() > 0 {
                self.reinvert();
                continue;
            }
            retried = false;

            let theta_d = self.d[q] / aq;
            for &j in &self.touched {
                self.d[j] -= theta_d * self.alpha[j];
            }
            self.d[pv] = -theta_d;

            let target = if above { self.lp.hi[pv] } else { self.lp.lo[pv] };
            let delta = (self.x[pv] - target) / w[r];
            for (p, &v) in self.head.iter().enumerate() {
                if w[p] != 0.0 {
                    self.x[v] -= w[p] * delta;
                }
            }
            self.x[q] += delta;
            self.x[pv] = target;
            let leaving = if above && self.lp.lo[pv] != self.lp.hi[pv] {
                St::Upper
            } else {
                St::Lower
            };
            self.replace(r, q, &w, leaving);
            self.iterations += 1;
            let obj = self.objective();
            if obj > last_obj + 1e-9 * (1.0 + obj.abs()) {
                last_obj = obj;
                stalled = 0;
            } else {
                stalled += 1;
            }
            if cutoff.is_finite() && self.objective() > cutoff {
                return Outcome::Cutoff;
            }
        }
    }

    /// Returns the clipped reduced cost if `j` may enter for a leaving
    /// variable moving in direction `s`.
    fn dual_candidate(&self, j: usize, s: f64) -> Option<f64> {
        let a = self.alpha[j];
        if a.abs() <= self.tol.pivot || self.lp.lo[j] == self.lp.hi[j] {
            return None;
        }
        match self.status[j] {
            St::Lower if s * a > 0.0 => Some(self.d[j].max(0.0)),
            St::Upper if s * a < 0.0 => Some((-self.d[j]).max(0.0)),
            St::Free => Some(self.d[j].abs()),
            _ => None,
        }
    }

    pub(crate) fn primal(&mut self) -> Outcome {
        let total = self.total();
        let mut degenerate = 0usize;
        let mut phase_cost = vec![0.0; total];
        loop {
            if self.iterations >= self.stop_at {
                return Outcome::IterationLimit;
            }
            self.maybe_refactor();
            let mut infeasible = false;
            for c in phase_cost.iter_mut() {
                *c = 0.0;
            }
            for &v in &self.head {
                if self.x[v] < self.lp.lo[v] - self.tol.primal {
                    phase_cost[v] = -1.0;
                    infeasible = true;
                } else if self.x[v] > self.lp.hi[v] + self.tol.primal {
                    phase_cost[v] = 1.0;
                    infeasible = true;
                }
            }
            if infeasible {
                self.compute_duals(&phase_cost);
            } else {
                let cost = self.lp.cost.clone();
                self.compute_duals(&cost);
            }

            let bland = degenerate > BLAND_AFTER;
            let mut q = usize::MAX;
            let mut best = self.tol.dual;
            let mut gain_q = 0.0;
            let mut dir = 0.0;
            for j in 0..total {
                if self.status[j] == St::Basic || self.lp.lo[j] == self.lp.hi[j] {
                    continue;
                }
                let dj = self.d[j];
                let (gain, dj_dir) = match self.status[j] {
                    St::Lower => (-dj, 1.0),
                    St::Upper => (dj, -1.0),
                    _ => (dj.abs(), if dj > 0.0 { -1.0 } else { 1.0 }),
                };
                if gain > best {
                    q = j;
                    gain_q = gain;
                    dir = dj_dir;
                    if bland {
                        break;
                    }
                    best = gain;
                }
            }
            if q == usize::MAX {
                return if infeasible {
                    Outcome::Infeasible
                } else {
                    Outcome::Optimal
                };
            }

            let w = self.ftran_col(q);
            // Harris two-pass ratio test over basic variables.
            let ptol = self.tol.primal;
            let mut t_max = f64::INFINITY;
            let mut limits: Vec<(usize, f64, f64, St)> = Vec::new();
            for (p, &v) in self.head.iter().enumerate() {
                if w[p].abs() <= self.tol.pivot {
                    continue;
                }
                let rate = -w[p] * dir;
                let (lo, hi, xv) = (self.lp.lo[v], self.lp.hi[v], self.x[v]);
                // Harris slack is measured from half a tolerance past the
                // bound, so variables already sitting slightly outside it
                // are not pushed further out and never read as infeasible
                // on the next pass.
                let lim = if rate < 0.0 {
                    if xv > hi + ptol {
                        Some((xv - hi, xv - hi + 0.5 * ptol, St::Upper))
                    } else if xv >= lo - ptol && lo.is_finite() {
                        Some(((xv - lo).max(0.0), (xv - lo + 0.5 * ptol).max(0.0), St::Lower))
                    } else {
                        None
                    }
                } else if xv < lo - ptol {
                    Some((lo - xv, lo - xv + 0.5 * ptol, St::Lower))
                } else if xv <= hi + ptol && hi.is_finite() {
                    Some(((hi - xv).max(0.0), (hi - xv + 0.5 * ptol).max(0.0), St::Upper))
                } else {
                    None
                };
                if let Some((gap, slack, st)) = lim {
                    let a = rate.abs();
                    t_max = t_max.min(slack / a);
                    limits.push((p, gap, a, st));
                }
            }
            let mut chosen: Option<(usize, f64, St)> = None;
            if bland {
                // Exact minimum ratio, ties to the lowest variable index.
                let t_min = limits
                    .iter()
                    .map(|&(_, gap, a, _)| gap / a)
                    .fold(f64::INFINITY, f64::min);
                let mut best_v = usize::MAX;
                for &(p, gap, a, st) in &limits {
                    if gap / a <= t_min + 1e-12 && self.head[p] < best_v {
                        best_v = self.head[p];
                        chosen = Some((p, gap / a, st));
                    }
                }
            } else {
                let mut best_a = 0.0;
                for &(p, gap, a, st) in &limits {
                    if gap / a <= t_max && a > best_a {
                        best_a = a;
                        chosen = Some((p, gap / a, st));
                    }
                }
            }
            let range = self.lp.hi[q] - self.lp.lo[q];
            let flip = range.is_finite() && chosen.map_or(true, |(_, t, _)| range <= t);
            if chosen.is_none() && !flip {
                if infeasible {
                    return Outcome::Infeasible;
                }
                return Outcome::Unbounded;
            }
            let t = if flip { range } else { chosen.unwrap().1.max(0.0) };
            for (p, &v) in self.head.iter().enumerate() {
                if w[p] != 0.0 {
                    self.x[v] -= w[p] * dir * t;
                }
            }
            self.iterations += 1;
            // Steps that barely move the objective count as degenerate; Harris
            // steps can be tiny without being zero.
            degenerate = if t * gain_q <= 1e-11 { degenerate + 1 } else { 0 };
            if flip {
                self.status[q] = if self.status[q] == St::Lower {
                    St::Upper
                } else {
                    St::Lower
                };
                self.x[q] = self.nb_value(q);
                continue;
            }
            self.x[q] += dir * t;
            let (r, _, st) = chosen.unwrap();
            let pv = self.head[r];
            let st = if self.lp.lo[pv] == self.lp.hi[pv] {
                St::Lower
            } else {
                st
            };
            self.x[pv] = match st {
                St::Lower => self.lp.lo[pv],
                _ => self.lp.hi[pv],
            };
            self.replace(r, q, &w, st);
        }
    }
}

fn initial_status(cost: f64, lo: f64, hi: f64) -> St {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            if cost < 0.0 {
                St::Upper
            } else {
                St::Lower
            }
        }
        (true, false) => St::Lower,
        (false, true) => St::Upper,
        (false, false) => St::Free,
    }
}

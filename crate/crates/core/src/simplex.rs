//! Bounded-variable simplex on a dense tableau.
//!
//! [`LinearProgram::solve`] is the cold two-phase primal method with explicit
//! artificials. [`WarmLp`] keeps a tableau alive between calls so branch and
//! bound can change variable bounds or append rows and re-optimize with the
//! dual simplex from the previous basis.

use std::time::Instant;

use thiserror::Error;

use crate::model::{MipModel, Sense};

/// Primal feasibility tolerance on rows.
pub const FEAS_TOL: f64 = 1e-7;
/// Tolerance on variable bounds in reported solutions.
pub const BOUND_TOL: f64 = 1e-9;
/// Integrality tolerance used by branch and bound.
pub const INT_TOL: f64 = 1e-6;

const PIVOT_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-13;
const HARRIS_TOL: f64 = 1e-9;
const PERTURB: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex stopped after {pivots} pivots without converging")]
    NumericalLimit { pivots: usize },
    #[error("deadline reached during simplex")]
    Deadline,
    #[error("variable {0} has inconsistent bounds")]
    BadBounds(usize),
    #[error("model has a quadratic objective; linearize it first")]
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `maximize obj . x` subject to `rows` and `lo <= x <= hi`. Bounds may be
/// infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub obj: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LpOptions {
    pub deadline: Option<Instant>,
    pub max_pivots: Option<usize>,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        Self { obj: vec![0.0; n], lo: vec![0.0; n], hi: vec![f64::INFINITY; n], rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.obj.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(LpRow { coeffs, sense, rhs });
    }

    /// Relaxation of `model` (all rows, lazy ones included) with integrality
    /// dropped.
    pub fn from_model(model: &MipModel) -> Result<Self, LpError> {
        if !model.is_linear() {
            return Err(LpError::Quadratic);
        }
        let n = model.num_vars();
        let mut lp = Self::new(n);
        for v in &model.vars {
            lp.lo[v.index] = v.lo;
            lp.hi[v.index] = v.hi;
        }
        for &(v, c) in &model.linear_obj {
            lp.obj[v] += c;
        }
        for c in &model.constraints {
            lp.add_row(c.coeffs.clone(), c.sense, c.rhs);
        }
        Ok(lp)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.obj.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            let a: f64 = r.coeffs.iter().map(|&(v, c)| c * x[v]).sum();
            let viol = match r.sense {
                Sense::Le => a - r.rhs,
                Sense::Ge => r.rhs - a,
                Sense::Eq => (a - r.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lo[j] - v).max(v - self.hi[j]);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpResult, LpError> {
        self.solve_with(&LpOptions::default())
    }

    /// Two-phase primal simplex. Phase 1 minimizes the sum of explicit
    /// artificials; phase 2 optimizes the true objective.
    pub fn solve_with(&self, opts: &LpOptions) -> Result<LpResult, LpError> {
        for j in 0..self.num_vars() {
            if self.lo[j] > self.hi[j] || self.lo[j] == f64::INFINITY || self.hi[j] == f64::NEG_INFINITY {
                return Err(LpError::BadBounds(j));
            }
        }
        let mut tab = Tableau::with_slack_basis(self, None);
        let limit = opts.max_pivots.unwrap_or(50 * (tab.m + tab.w) + 1000);

        let arts = tab.add_artificials();
        if !arts.is_empty() {
            let mut cost = vec![0.0; tab.w];
            for &a in &arts {
                cost[a] = -1.0;
            }
            tab.set_cost(&cost);
            tab.primal(limit, opts.deadline)?;
            let infeas: f64 = arts.iter().map(|&a| tab.value(a)).sum();
            if infeas > FEAS_TOL {
                return Ok(LpResult {
                    status: LpStatus::Infeasible,
                    objective: f64::NAN,
                    primal: tab.structural_values(),
                    pivots: tab.pivots,
                });
            }
            tab.expel_artificials(&arts);
        }
        let mut cost = vec![0.0; tab.w];
        cost[..self.num_vars()].copy_from_slice(&self.obj);
        tab.set_cost(&cost);
        let status = tab.primal(limit, opts.deadline)?;
        let primal = tab.structural_values();
        let objective = if status == LpStatus::Optimal { self.objective_at(&primal) } else { f64::NAN };
        Ok(LpResult { status, objective, primal, pivots: tab.pivots })
    }
}

/// LP relaxation of `model` with per-variable bound overrides
/// `(var, lo, hi)`, solved cold by the primal simplex.
pub fn solve_lp(model: &MipModel, overrides: &[(usize, f64, f64)]) -> Result<LpResult, LpError> {
    let mut lp = LinearProgram::from_model(model)?;
    for &(v, lo, hi) in overrides {
        lp.lo[v] = lo;
        lp.hi[v] = hi;
    }
    lp.solve()
}

/// Dense tableau over structural, slack and artificial columns. Row `r`
/// reads `sum_j a_rj x_j + s_r = b_r`, with the slack bounds encoding the row
/// sense.
#[derive(Debug, Clone)]
struct Tableau {
    m: usize,
    w: usize,
    n_struct: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    val: Vec<f64>,
    head: Vec<usize>,
    row_of: Vec<usize>,
    pivots: usize,
    prow: Vec<f64>,
    nz: Vec<usize>,
    /// Row that proved infeasibility in the last dual run.
    infeasible_row: Option<usize>,
}

const NONBASIC: usize = usize::MAX;

fn slack_bounds(sense: Sense) -> (f64, f64) {
    match sense {
        Sense::Le => (0.0, f64::INFINITY),
        Sense::Ge => (f64::NEG_INFINITY, 0.0),
        Sense::Eq => (0.0, 0.0),
    }
}

impl Tableau {
    /// Slack basis. Structurals sit at a finite bound; with `d_sign` given,
    /// boxed columns are placed at the bound favoured by their cost.
    fn with_slack_basis(lp: &LinearProgram, d_sign: Option<&[f64]>) -> Self {
        let n = lp.num_vars();
        let m = lp.rows.len();
        let w = n + m;
        let mut t = vec![0.0; m * w];
        let mut lo = lp.lo.clone();
        let mut hi = lp.hi.clone();
        for (r, row) in lp.rows.iter().enumerate() {
            for &(v, c) in &row.coeffs {
                t[r * w + v] += c;
            }
            t[r * w + n + r] = 1.0;
            let (sl, sh) = slack_bounds(row.sense);
            lo.push(sl);
            hi.push(sh);
        }
        let mut val = vec![0.0; w];
        for j in 0..n {
            let prefer_hi = d_sign.is_some_and(|c| c[j] > 0.0);
            val[j] = if prefer_hi && hi[j].is_finite() {
                hi[j]
            } else if lo[j].is_finite() {
                lo[j]
            } else if hi[j].is_finite() {
                hi[j]
            } else {
                0.0
            };
        }
        let mut beta = vec![0.0; m];
        for (r, row) in lp.rows.iter().enumerate() {
            let act: f64 = row.coeffs.iter().map(|&(v, c)| c * val[v]).sum();
            beta[r] = row.rhs - act;
        }
        let head: Vec<usize> = (n..n + m).collect();
        let mut row_of = vec![NONBASIC; w];
        for r in 0..m {
            row_of[n + r] = r;
        }
        let mut tab = Self {
            m,
            w,
            n_struct: n,
            t,
            beta,
            d: vec![0.0; w],
            cost: vec![0.0; w],
            lo,
            hi,
            val,
            head,
            row_of,
            pivots: 0,
            prow: vec![0.0; w],
            nz: Vec::with_capacity(w),
            infeasible_row: None,
        };
        let mut cost = vec![0.0; w];
        cost[..n].copy_from_slice(&lp.obj);
        tab.set_cost(&cost);
        tab
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.w + j]
    }

    fn value(&self, j: usize) -> f64 {
        match self.row_of[j] {
            NONBASIC => self.val[j],
            r => self.beta[r],
        }
    }

    fn structural_values(&self) -> Vec<f64> {
        (0..self.n_struct)
            .map(|j| {
                let v = self.value(j);
                // clean up rounding noise just outside a bound
                if v < self.lo[j] && v > self.lo[j] - BOUND_TOL * 100.0 {
                    self.lo[j]
                } else if v > self.hi[j] && v < self.hi[j] + BOUND_TOL * 100.0 {
                    self.hi[j]
                } else {
                    v
                }
            })
            .collect()
    }

    fn set_cost(&mut self, cost: &[f64]) {
        self.cost.clear();
        self.cost.extend_from_slice(cost);
        self.cost.resize(self.w, 0.0);
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.head[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.w..(i + 1) * self.w];
                for (dj, &a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.head[i]] = 0.0;
        }
    }

    /// Appends `count` zero columns.
    fn widen(&mut self, count: usize) {
        let (m, w, nw) = (self.m, self.w, self.w + count);
        let mut t = vec![0.0; m * nw];
        for i in 0..m {
            t[i * nw..i * nw + w].copy_from_slice(&self.t[i * w..(i + 1) * w]);
        }
        self.t = t;
        self.w = nw;
        for v in [&mut self.d, &mut self.cost, &mut self.val] {
            v.resize(nw, 0.0);
        }
        self.lo.resize(nw, 0.0);
        self.hi.resize(nw, 0.0);
        self.row_of.resize(nw, NONBASIC);
        self.prow.resize(nw, 0.0);
    }

    /// Replaces each infeasible slack in the basis by an artificial column
    /// carrying the row's infeasibility.
    fn add_artificials(&mut self) -> Vec<usize> {
        let bad: Vec<usize> = (0..self.m)
            .filter(|&r| {
                let h = self.head[r];
                self.beta[r] < self.lo[h] - FEAS_TOL || self.beta[r] > self.hi[h] + FEAS_TOL
            })
            .collect();
        if bad.is_empty() {
            return bad;
        }
        let first = self.w;
        self.widen(bad.len());
        let w = self.w;
        let mut arts = Vec::with_capacity(bad.len());
        for (idx, &r) in bad.iter().enumerate() {
            let a = first + idx;
            let s = self.head[r];
            let clamp = self.beta[r].clamp(self.lo[s], self.hi[s]);
            let sigma = if self.beta[r] > clamp { 1.0 } else { -1.0 };
            // slack leaves at its nearest bound, artificial absorbs the rest
            let residual = self.beta[r] - clamp;
            let row = &mut self.t[r * w..(r + 1) * w];
            for x in row.iter_mut() {
                *x *= sigma;
            }
            row[a] = 1.0;
            self.beta[r] = sigma * residual;
            self.row_of[s] = NONBASIC;
            self.val[s] = clamp;
            self.head[r] = a;
            self.row_of[a] = r;
            self.lo[a] = 0.0;
            self.hi[a] = f64::INFINITY;
            arts.push(a);
        }
        arts
    }

    /// After a successful phase 1: pivot zero-valued artificials out of the
    /// basis where possible and pin every artificial to zero.
    fn expel_artificials(&mut self, arts: &[usize]) {
        let is_art = |j: usize| j >= arts[0];
        for &a in arts {
            let r = self.row_of[a];
            if r == NONBASIC {
                continue;
            }
            let mut best = None;
            let mut best_abs = PIVOT_TOL;
            for j in 0..self.w {
                if is_art(j) || self.row_of[j] != NONBASIC {
                    continue;
                }
                let v = self.at(r, j).abs();
                if v > best_abs {
                    best_abs = v;
                    best = Some(j);
                }
            }
            if let Some(q) = best {
                let dx = (self.beta[r] - 0.0) / self.at(r, q);
                self.shift_basics(q, dx);
                self.val[q] += dx;
                self.leave(r, 0.0);
                self.pivot(r, q);
                self.beta[r] = self.val[q];
            }
        }
        for &a in arts {
            self.lo[a] = 0.0;
            self.hi[a] = 0.0;
            if self.row_of[a] == NONBASIC {
                self.val[a] = 0.0;
            }
        }
    }

    /// Moves nonbasic `q` by `dx`, updating basic values.
    fn shift_basics(&mut self, q: usize, dx: f64) {
        if dx == 0.0 {
            return;
        }
        let w = self.w;
        for i in 0..self.m {
            let a = self.t[i * w + q];
            if a != 0.0 {
                self.beta[i] -= a * dx;
            }
        }
    }

    /// Marks the basic variable of row `r` nonbasic at value `at`.
    fn leave(&mut self, r: usize, at: f64) {
        let h = self.head[r];
        self.row_of[h] = NONBASIC;
        self.val[h] = at;
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.w;
        let p = self.t[r * w + q];
        debug_assert!(p.abs() > 0.0);
        let inv = 1.0 / p;
        self.nz.clear();
        for j in 0..w {
            let mut v = self.t[r * w + j] * inv;
            if v.abs() < DROP_TOL {
                v = 0.0;
            }
            self.t[r * w + j] = v;
            self.prow[j] = v;
            if v != 0.0 {
                self.nz.push(j);
            }
        }
        self.t[r * w + q] = 1.0;
        self.prow[q] = 1.0;
        let sparse = self.nz.len() * 4 < w;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            if sparse {
                for &j in &self.nz {
                    let v = row[j] - f * self.prow[j];
                    row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
                }
            } else {
                for (x, &pj) in row.iter_mut().zip(&self.prow) {
                    *x -= f * pj;
                }
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &j in &self.nz {
                self.d[j] -= f * self.prow[j];
            }
        }
        self.d[q] = 0.0;
        self.head[r] = q;
        self.row_of[q] = r;
        self.pivots += 1;
    }

    /// Direction in which nonbasic `j` can improve the objective, if any.
    fn improving_dir(&self, j: usize) -> Option<f64> {
        if self.row_of[j] != NONBASIC || self.lo[j] == self.hi[j] {
            return None;
        }
        let dj = self.d[j];
        if dj > DUAL_TOL && self.val[j] < self.hi[j] {
            Some(1.0)
        } else if dj < -DUAL_TOL && self.val[j] > self.lo[j] {
            Some(-1.0)
        } else {
            None
        }
    }

    fn check_budget(&self, start: usize, limit: usize, deadline: Option<Instant>) -> Result<(), LpError> {
        let done = self.pivots - start;
        if done > limit {
            return Err(LpError::NumericalLimit { pivots: done });
        }
        if done % 32 == 0 {
            if let Some(dl) = deadline {
                if Instant::now() >= dl {
                    return Err(LpError::Deadline);
                }
            }
        }
        Ok(())
    }

    /// Primal simplex from a primal-feasible basis. Dantzig pricing, switching
    /// to Bland's rule after a long run of degenerate pivots.
    fn primal(&mut self, limit: usize, deadline: Option<Instant>) -> Result<LpStatus, LpError> {
        let start = self.pivots;
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > limit {
                return Err(LpError::NumericalLimit { pivots: self.pivots - start });
            }
            self.check_budget(start, limit, deadline)?;
            let mut entering = None;
            let mut best = 0.0;
            for j in 0..self.w {
                if let Some(dir) = self.improving_dir(j) {
                    if bland {
                        entering = Some((j, dir));
                        break;
                    }
                    if self.d[j].abs() > best {
                        best = self.d[j].abs();
                        entering = Some((j, dir));
                    }
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(LpStatus::Optimal);
            };

            let flip = self.hi[q] - self.lo[q];
            // Harris two-pass ratio test: find the loosest step that keeps
            // every basic within tolerance, then take the largest pivot
            // among the rows that bind at or before it.
            let mut candidates = Vec::new();
            let mut theta_max = f64::INFINITY;
            for i in 0..self.m {
                let alpha = self.at(i, q) * dir;
                let h = self.head[i];
                let (dist, target) = if alpha > PIVOT_TOL && self.lo[h].is_finite() {
                    ((self.beta[i] - self.lo[h]).max(0.0), self.lo[h])
                } else if alpha < -PIVOT_TOL && self.hi[h].is_finite() {
                    ((self.hi[h] - self.beta[i]).max(0.0), self.hi[h])
                } else {
                    continue;
                };
                let a = alpha.abs();
                let relaxed = if bland { dist / a } else { (dist + HARRIS_TOL) / a };
                theta_max = theta_max.min(relaxed);
                candidates.push((i, dist / a, a, target));
            }
            let mut theta = f64::INFINITY;
            let mut leave: Option<(usize, f64)> = None;
            let mut best_a = 0.0;
            for &(i, ratio, a, target) in &candidates {
                if ratio > theta_max {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((r, _)) => {
                        if bland {
                            self.head[i] < self.head[r]
                        } else {
                            a > best_a
                        }
                    }
                };
                if better {
                    leave = Some((i, target));
                    theta = ratio;
                    best_a = a;
                }
            }
            if leave.is_none() && !flip.is_finite() {
                return Ok(LpStatus::Unbounded);
            }
            if flip <= theta {
                let target = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                let dx = target - self.val[q];
                self.shift_basics(q, dx);
                self.val[q] = target;
                degenerate = 0;
                continue;
            }
            let (r, target) = leave.unwrap();
            let dx = dir * theta;
            self.shift_basics(q, dx);
            let entering_value = self.val[q] + dx;
            self.leave(r, target);
            self.pivot(r, q);
            self.beta[r] = entering_value;
            if theta < 1e-12 {
                degenerate += 1;
                if degenerate > 2 * (self.m + self.w) {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
        }
    }

    /// Dual simplex from a dual-feasible basis. Returns `Infeasible` when a
    /// row has no eligible entering column.
    fn dual(&mut self, limit: usize, deadline: Option<Instant>) -> Result<LpStatus, LpError> {
        let start = self.pivots;
        let mut skip = vec![false; self.m];
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            self.check_budget(start, limit, deadline)?;
            let mut pick = None;
            let mut worst = 0.0;
            for i in 0..self.m {
                if skip[i] {
                    continue;
                }
                let h = self.head[i];
                let viol = (self.lo[h] - self.beta[i]).max(self.beta[i] - self.hi[h]);
                let tol = BOUND_TOL * (1.0 + self.beta[i].abs());
                if viol > tol {
                    let better = match pick {
                        None => true,
                        Some(p) if bland => h < self.head[p],
                        Some(_) => viol > worst,
                    };
                    if better {
                        worst = viol;
                        pick = Some(i);
                    }
                }
            }
            let Some(r) = pick else {
                return Ok(LpStatus::Optimal);
            };
            let h = self.head[r];
            let (target, s) = if self.beta[r] < self.lo[h] { (self.lo[h], 1.0) } else { (self.hi[h], -1.0) };

            let w = self.w;
            let mut candidates = Vec::new();
            let mut theta_max = f64::INFINITY;
            for j in 0..w {
                if self.row_of[j] != NONBASIC || self.lo[j] == self.hi[j] {
                    continue;
                }
                let a = self.t[r * w + j];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let up = a * s < 0.0;
                let ok = if up { self.val[j] < self.hi[j] } else { self.val[j] > self.lo[j] };
                if !ok {
                    continue;
                }
                // reduced-cost room in the dual-feasible direction
                let room = if up { (-self.d[j]).max(0.0) } else { self.d[j].max(0.0) };
                let relaxed = if bland { room / a.abs() } else { (room + HARRIS_TOL) / a.abs() };
                theta_max = theta_max.min(relaxed);
                candidates.push((j, room / a.abs(), a.abs()));
            }
            let mut entering = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_abs = 0.0;
            for &(j, ratio, a) in &candidates {
                if ratio > theta_max {
                    continue;
                }
                let better = if bland { entering.is_none() } else { a > best_abs };
                if better {
                    entering = Some(j);
                    best_ratio = ratio;
                    best_abs = a;
                }
            }
            let Some(q) = entering else {
                let viol = (self.lo[h] - self.beta[r]).max(self.beta[r] - self.hi[h]);
                if viol > FEAS_TOL * (1.0 + target.abs()) {
                    self.infeasible_row = Some(r);
                    return Ok(LpStatus::Infeasible);
                }
                skip[r] = true;
                continue;
            };
            let dx = (self.beta[r] - target) / self.at(r, q);
            self.shift_basics(q, dx);
            let entering_value = self.val[q] + dx;
            self.leave(r, target);
            self.pivot(r, q);
            self.beta[r] = entering_value;
            if best_ratio < 1e-12 {
                degenerate += 1;
                if degenerate > 2 * (self.m + self.w) {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
        }
    }

    /// Cost vector with a small deterministic perturbation on every
    /// structural column, signed so the current nonbasic position stays
    /// dual feasible. Breaks the heavy dual degeneracy of zero-cost columns.
    fn perturbed_cost(&self, true_cost: &[f64]) -> Vec<f64> {
        let scale = true_cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
        let mut c = true_cost.to_vec();
        c.resize(self.w, 0.0);
        for (j, cj) in c.iter_mut().enumerate().take(self.n_struct) {
            let h = (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
            let delta = PERTURB * scale * (1.0 + h as f64 / (1u64 << 24) as f64);
            let at_upper = self.row_of[j] == NONBASIC && self.val[j] == self.hi[j] && self.lo[j] < self.hi[j];
            *cj += if at_upper { delta } else { -delta };
        }
        c
    }

    /// True reduced costs of the current basis are correctly signed.
    fn dual_feasible_for(&self, cost: &[f64]) -> bool {
        let w = self.w;
        let mut d = cost.to_vec();
        d.resize(w, 0.0);
        for i in 0..self.m {
            let cb = d[self.head[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (j, &a) in row.iter().enumerate() {
                    if self.row_of[j] == NONBASIC {
                        d[j] -= cb * a;
                    }
                }
            }
        }
        (0..w).all(|j| {
            if self.row_of[j] != NONBASIC || self.lo[j] == self.hi[j] {
                return true;
            }
            !(d[j] > DUAL_TOL && self.val[j] < self.hi[j] || d[j] < -DUAL_TOL && self.val[j] > self.lo[j])
        })
    }

    /// Moves boxed nonbasics to the bound matching their reduced cost and
    /// shifts the cost of one-sided columns that cannot move.
    fn restore_dual_feasibility(&mut self) {
        for j in 0..self.w {
            if self.row_of[j] != NONBASIC || self.lo[j] == self.hi[j] {
                continue;
            }
            let dj = self.d[j];
            let want_up = dj > DUAL_TOL;
            let want_down = dj < -DUAL_TOL;
            if !(want_up && self.val[j] < self.hi[j]) && !(want_down && self.val[j] > self.lo[j]) {
                continue;
            }
            let target = if want_up { self.hi[j] } else { self.lo[j] };
            if target.is_finite() {
                let dx = target - self.val[j];
                self.shift_basics(j, dx);
                self.val[j] = target;
            } else {
                let keep = if want_up { -PERTURB } else { PERTURB };
                self.cost[j] += keep - dj;
                self.d[j] = keep;
            }
        }
    }

    /// Appends a row and its basic slack, expressed in the current basis.
    fn push_row(&mut self, row: &LpRow) {
        self.widen(1);
        let w = self.w;
        let s = w - 1;
        let mut new = vec![0.0; w];
        for &(v, c) in &row.coeffs {
            new[v] += c;
        }
        new[s] = 1.0;
        let mut act = 0.0;
        for &(v, c) in &row.coeffs {
            act += c * self.value(v);
        }
        for i in 0..self.m {
            let f = new[self.head[i]];
            if f != 0.0 {
                let src = &self.t[i * w..(i + 1) * w];
                for (x, &a) in new.iter_mut().zip(src) {
                    *x -= f * a;
                }
                new[self.head[i]] = 0.0;
            }
        }
        self.t.extend_from_slice(&new);
        let (sl, sh) = slack_bounds(row.sense);
        self.lo[s] = sl;
        self.hi[s] = sh;
        self.beta.push(row.rhs - act);
        self.head.push(s);
        self.row_of[s] = self.m;
        self.m += 1;
    }
}

/// Persistent LP workspace for re-optimization under bound changes and
/// appended rows. All structural columns must be boxed.
#[derive(Debug, Clone)]
pub struct WarmLp {
    lp: LinearProgram,
    tab: Tableau,
    pivots_since_build: usize,
    pub total_pivots: usize,
    /// Pivots spent restoring optimality for the unperturbed costs.
    pub cleanup_pivots: usize,
    pub rebuilds: usize,
}

impl WarmLp {
    pub fn new(lp: LinearProgram) -> Result<Self, LpError> {
        for j in 0..lp.num_vars() {
            if !(lp.lo[j].is_finite() && lp.hi[j].is_finite()) || lp.lo[j] > lp.hi[j] {
                return Err(LpError::BadBounds(j));
            }
        }
        let tab = Tableau::with_slack_basis(&lp, Some(&lp.obj));
        Ok(Self { lp, tab, pivots_since_build: 0, total_pivots: 0, cleanup_pivots: 0, rebuilds: 0 })
    }

    pub fn program(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn num_rows(&self) -> usize {
        self.lp.rows.len()
    }

    /// Replaces the structural bounds.
    pub fn set_bounds(&mut self, lo: &[f64], hi: &[f64]) {
        let n = self.lp.num_vars();
        for j in 0..n {
            if self.lp.lo[j] == lo[j] && self.lp.hi[j] == hi[j] {
                continue;
            }
            self.lp.lo[j] = lo[j];
            self.lp.hi[j] = hi[j];
            let tab = &mut self.tab;
            tab.lo[j] = lo[j];
            tab.hi[j] = hi[j];
            if tab.row_of[j] == NONBASIC {
                let target = if tab.d[j] > DUAL_TOL {
                    hi[j]
                } else if tab.d[j] < -DUAL_TOL {
                    lo[j]
                } else if tab.val[j] >= hi[j] {
                    hi[j]
                } else {
                    lo[j]
                };
                let dx = target - tab.val[j];
                tab.shift_basics(j, dx);
                tab.val[j] = target;
            }
        }
    }

    pub fn add_row(&mut self, row: LpRow) {
        self.tab.push_row(&row);
        self.lp.rows.push(row);
    }

    fn rebuild(&mut self) {
        self.tab = Tableau::with_slack_basis(&self.lp, Some(&self.lp.obj));
        self.pivots_since_build = 0;
        self.rebuilds += 1;
    }

    /// Checks the dual ray of the row that stopped the dual simplex against
    /// the original rows. Any multiplier vector `y` yields a valid implied
    /// row `y (A x + s) = y b`; multipliers that would leave the tested side
    /// of its range unbounded are dropped, and the row must then be
    /// unsatisfiable within the current bounds.
    fn certified_infeasible(&self) -> bool {
        let Some(r) = self.tab.infeasible_row else {
            return false;
        };
        let (n, w) = (self.tab.n_struct, self.tab.w);
        if w != n + self.lp.rows.len() {
            return false;
        }
        let ray = &self.tab.t[r * w + n..(r + 1) * w];
        let big = ray.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        [1.0, -1.0].into_iter().any(|side| self.implied_row_excludes(ray, big, side))
    }

    /// `side = 1` tests `y b < min(y (A x + s))`, `side = -1` tests
    /// `y b > max(...)`.
    fn implied_row_excludes(&self, ray: &[f64], big: f64, side: f64) -> bool {
        let n = self.tab.n_struct;
        let y: Vec<f64> = ray
            .iter()
            .enumerate()
            .map(|(i, &yi)| {
                let (lo, hi) = (self.tab.lo[n + i], self.tab.hi[n + i]);
                // bound that the tested side of the range picks for y_i * s_i
                let pick = if yi * side > 0.0 { lo } else { hi };
                if yi.abs() <= 1e-11 * big || !pick.is_finite() {
                    0.0
                } else {
                    yi
                }
            })
            .collect();
        let mut g = vec![0.0; n];
        let mut rhs = 0.0;
        let mut scale = 0.0;
        for (row, &yi) in self.lp.rows.iter().zip(&y) {
            if yi == 0.0 {
                continue;
            }
            for &(v, c) in &row.coeffs {
                g[v] += yi * c;
            }
            rhs += yi * row.rhs;
            scale += (yi * row.rhs).abs();
        }
        let mut extreme = 0.0;
        let terms = g.iter().copied().enumerate().chain(y.iter().enumerate().map(|(i, &yi)| (n + i, yi)));
        for (j, c) in terms {
            if c == 0.0 {
                continue;
            }
            let bound = if c * side > 0.0 { self.tab.lo[j] } else { self.tab.hi[j] };
            if !bound.is_finite() {
                return false;
            }
            extreme += c * bound;
            scale += (c * bound).abs();
        }
        (extreme - rhs) * side > 1e-9 * (1.0 + scale)
    }

    fn attempt(&mut self, opts: &LpOptions) -> Result<LpStatus, LpError> {
        let limit = opts.max_pivots.unwrap_or(20 * (self.tab.m + self.tab.w) + 1000);
        let before = self.tab.pivots;
        let mut true_cost = self.lp.obj.clone();
        true_cost.resize(self.tab.w, 0.0);
        let perturbed = self.tab.perturbed_cost(&true_cost);
        self.tab.set_cost(&perturbed);
        self.tab.restore_dual_feasibility();
        self.tab.infeasible_row = None;
        let status = self.tab.dual(limit, opts.deadline);
        let mid = self.tab.pivots;
        let status = match status {
            Ok(LpStatus::Optimal) if !self.tab.dual_feasible_for(&true_cost) => {
                self.tab.set_cost(&true_cost);
                self.tab.primal(limit, opts.deadline)
            }
            other => other,
        };
        self.cleanup_pivots += self.tab.pivots - mid;
        let used = self.tab.pivots - before;
        self.pivots_since_build += used;
        self.total_pivots += used;
        status
    }

    /// Re-optimizes from the current basis. Falls back to a fresh slack
    /// basis when the warm tableau fails its residual check.
    pub fn solve(&mut self, opts: &LpOptions) -> Result<LpResult, LpError> {
        if self.pivots_since_build > 40 * (self.tab.m + self.tab.w) {
            self.rebuild();
        }
        for round in 0..2 {
            let status = match self.attempt(opts) {
                Ok(s) => s,
                Err(LpError::NumericalLimit { .. }) if round == 0 => {
                    self.rebuild();
                    continue;
                }
                Err(e) => return Err(e),
            };
            let primal = self.tab.structural_values();
            match status {
                LpStatus::Optimal => {
                    if self.lp.max_violation(&primal) <= FEAS_TOL {
                        let objective = self.lp.objective_at(&primal);
                        return Ok(LpResult { status, objective, primal, pivots: self.total_pivots });
                    }
                }
                LpStatus::Infeasible => {
                    if round == 1 || self.pivots_since_build == 0 || self.certified_infeasible() {
                        return Ok(LpResult { status, objective: f64::NAN, primal, pivots: self.total_pivots });
                    }
                }
                LpStatus::Unbounded => {
                    return Ok(LpResult { status, objective: f64::NAN, primal, pivots: self.total_pivots });
                }
            }
            self.rebuild();
        }
        Err(LpError::NumericalLimit { pivots: self.total_pivots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bound_row() {
        let mut lp = LinearProgram::new(1);
        lp.obj[0] = 1.0;
        lp.hi[0] = 10.0;
        lp.add_row(vec![(0, 1.0)], Sense::Le, 1.0);
        let r = lp.solve().unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-12);
        assert!((r.primal[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_pair() {
        let mut lp = LinearProgram::new(2);
        lp.obj = vec![1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.0);
        lp.add_row(vec![(0, 1.0)], Sense::Ge, 0.6);
        lp.add_row(vec![(1, 1.0)], Sense::Ge, 0.6);
        assert_eq!(lp.solve().unwrap().status, LpStatus::Infeasible);
        let mut warm = WarmLp::new({
            let mut b = lp.clone();
            b.hi = vec![5.0, 5.0];
            b
        })
        .unwrap();
        assert_eq!(warm.solve(&LpOptions::default()).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LinearProgram::new(2);
        lp.obj = vec![1.0, 0.0];
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Sense::Le, 1.0);
        assert_eq!(lp.solve().unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_free_variable() {
        // max -y with x + y = 3, x in [0, 1], y free
        let mut lp = LinearProgram::new(2);
        lp.obj = vec![0.0, -1.0];
        lp.hi[0] = 1.0;
        lp.lo[1] = f64::NEG_INFINITY;
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 3.0);
        let r = lp.solve().unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.primal[0] - 1.0).abs() < 1e-12);
        assert!((r.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn warm_rows_and_bounds() {
        let mut lp = LinearProgram::new(3);
        lp.obj = vec![3.0, 2.0, 4.0];
        lp.hi = vec![1.0; 3];
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 2.0)], Sense::Le, 2.0);
        let mut warm = WarmLp::new(lp.clone()).unwrap();
        let a = warm.solve(&LpOptions::default()).unwrap();
        let b = lp.solve().unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
        warm.set_bounds(&[0.0, 0.0, 0.0], &[0.0, 1.0, 1.0]);
        warm.add_row(LpRow { coeffs: vec![(1, 1.0), (2, 1.0)], sense: Sense::Le, rhs: 1.0 });
        let c = warm.solve(&LpOptions::default()).unwrap();
        let mut cold = warm.program().clone();
        cold.hi[0] = 0.0;
        let d = cold.solve().unwrap();
        assert_eq!(c.status, LpStatus::Optimal);
        assert!((c.objective - d.objective).abs() < 1e-9, "{} vs {}", c.objective, d.objective);
    }
}

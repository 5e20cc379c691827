//! Convex QP by a primal-dual interior-point method (Mehrotra
//! predictor-corrector).
//!
//! Variables with `lo == hi` are substituted out before the solve and finite
//! bounds are stacked into the inequality block, so the core iteration only
//! sees `min ½xᵀQx + cᵀx  s.t.  Ax = b, Gx ≤ h`.

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::ldl::SparseLdl;
use crate::sparse::SparseMatrix;

/// `min ½xᵀQx + qᵀx + offset  s.t.  Ax = b, Gx ≤ h, lo ≤ x ≤ hi`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub n: usize,
    /// Full symmetric storage (both triangles).
    pub quadratic: SparseMatrix,
    pub linear: Vec<f64>,
    pub offset: f64,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub g: SparseMatrix,
    pub h: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Duals follow `∇f(x) + Aᵀ·duals_eq + Gᵀ·duals_ineq + duals_bounds = 0`,
/// with `duals_ineq ≥ 0` and `duals_bounds[i] > 0` on an active upper bound,
/// `< 0` on an active lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub duals_eq: Vec<f64>,
    pub duals_ineq: Vec<f64>,
    pub duals_bounds: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Total constraint violation of the phase-1 problem when the main
    /// iteration failed; zero otherwise.
    pub infeasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub iter_limit: usize,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            iter_limit: 200,
            warm_start: None,
        }
    }
}

/// Phase-1 violation above which a problem is declared infeasible.
pub const INFEASIBILITY_THRESHOLD: f64 = 1e-6;

impl QpProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        quadratic: SparseMatrix,
        linear: Vec<f64>,
        a: SparseMatrix,
        b: Vec<f64>,
        g: SparseMatrix,
        h: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<Self, SolverError> {
        let p = Self {
            n: linear.len(),
            quadratic,
            linear,
            offset: 0.0,
            a,
            b,
            g,
            h,
            lo,
            hi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n;
        let dim = |what: &str| Err(SolverError::Dimension(what.to_string()));
        if self.linear.len() != n {
            return dim("linear term length");
        }
        if self.quadratic.nrows() != n || self.quadratic.ncols() != n {
            return dim("quadratic matrix shape");
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return dim("equality block shape");
        }
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return dim("inequality block shape");
        }
        if self.lo.len() != n || self.hi.len() != n {
            return dim("bound vector length");
        }
        for i in 0..n {
            if self.lo[i] > self.hi[i] || self.lo[i].is_nan() || self.hi[i].is_nan() {
                return Err(SolverError::Bounds {
                    index: i,
                    lo: self.lo[i],
                    hi: self.hi[i],
                });
            }
        }
        let asym = self.quadratic.asymmetry();
        if asym > 1e-9 {
            return Err(SolverError::Asymmetric(asym));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.quadratic.mul_vec(x);
        0.5 * dot(x, &qx) + dot(&self.linear, x) + self.offset
    }

    /// Largest violation of any equality, inequality or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (ax, b) in self.a.mul_vec(x).iter().zip(&self.b) {
            v = v.max((ax - b).abs());
        }
        for (gx, h) in self.g.mul_vec(x).iter().zip(&self.h) {
            v = v.max(gx - h);
        }
        for i in 0..self.n {
            v = v.max(self.lo[i] - x[i]).max(x[i] - self.hi[i]);
        }
        v
    }
}

/// Incremental construction of a [`QpProblem`] row by row.
#[derive(Debug, Clone, Default)]
pub struct QpBuilder {
    lo: Vec<f64>,
    hi: Vec<f64>,
    linear: Vec<f64>,
    quad: Vec<(usize, usize, f64)>,
    offset: f64,
    eq: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
}

impl QpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lo.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.lo.push(lo);
        self.hi.push(hi);
        self.linear.push(0.0);
        self.lo.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lo[var] = lo;
        self.hi[var] = hi;
    }

    pub fn add_linear(&mut self, var: usize, c: f64) {
        self.linear[var] += c;
    }

    /// Adds `½·c·x_i²` when `i == j`, and `c·x_i·x_j` otherwise.
    pub fn add_quadratic(&mut self, i: usize, j: usize, c: f64) {
        if i == j {
            self.quad.push((i, i, c));
        } else {
            self.quad.push((i, j, c));
            self.quad.push((j, i, c));
        }
    }

    pub fn add_offset(&mut self, c: f64) {
        self.offset += c;
    }

    /// `Σ coef·x = rhs`, returns the row index.
    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.b.len();
        self.eq.extend(terms.iter().map(|&(v, c)| (r, v, c)));
        self.b.push(rhs);
        r
    }

    /// `Σ coef·x ≤ rhs`, returns the row index.
    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.h.len();
        self.ineq.extend(terms.iter().map(|&(v, c)| (r, v, c)));
        self.h.push(rhs);
        r
    }

    /// `Σ coef·x ≥ rhs`, stored negated; returns the row index.
    pub fn add_ge(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let neg: Vec<_> = terms.iter().map(|&(v, c)| (v, -c)).collect();
        self.add_le(&neg, -rhs)
    }

    pub fn build(self) -> Result<QpProblem, SolverError> {
        let n = self.lo.len();
        let check = |t: &[(usize, usize, f64)]| t.iter().all(|&(_, c, _)| c < n);
        if !check(&self.quad) || !check(&self.eq) || !check(&self.ineq) {
            return Err(SolverError::Dimension("term refers to unknown variable".into()));
        }
        let mut p = QpProblem::new(
            SparseMatrix::from_triplets(n, n, &self.quad),
            self.linear,
            SparseMatrix::from_triplets(self.b.len(), n, &self.eq),
            self.b,
            SparseMatrix::from_triplets(self.h.len(), n, &self.ineq),
            self.h,
            self.lo,
            self.hi,
        )?;
        p.offset = self.offset;
        Ok(p)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// KKT residual (max-norm over stationarity, primal feasibility, dual sign
/// and complementarity) of a candidate primal-dual point.
pub fn kkt_residual(
    p: &QpProblem,
    x: &[f64],
    duals_eq: &[f64],
    duals_ineq: &[f64],
    duals_bounds: &[f64],
) -> f64 {
    let mut grad = p.quadratic.mul_vec(x);
    for i in 0..p.n {
        grad[i] += p.linear[i] + duals_bounds[i];
    }
    let at = p.a.tr_mul_vec(duals_eq);
    let gt = p.g.tr_mul_vec(duals_ineq);
    let mut r: f64 = 0.0;
    for i in 0..p.n {
        r = r.max((grad[i] + at[i] + gt[i]).abs());
    }
    for (ax, b) in p.a.mul_vec(x).iter().zip(&p.b) {
        r = r.max((ax - b).abs());
    }
    for ((gx, h), z) in p.g.mul_vec(x).iter().zip(&p.h).zip(duals_ineq) {
        r = r.max(gx - h).max(-z).max((z * (gx - h)).abs());
    }
    for i in 0..p.n {
        r = r.max(p.lo[i] - x[i]).max(x[i] - p.hi[i]);
        let d = duals_bounds[i];
        if d > 0.0 {
            let gap = if p.hi[i].is_finite() { (p.hi[i] - x[i]).abs() * d } else { d };
            r = r.max(gap);
        } else if d < 0.0 {
            let gap = if p.lo[i].is_finite() { (x[i] - p.lo[i]).abs() * -d } else { -d };
            r = r.max(gap);
        }
    }
    r
}

pub fn solve_qp(p: &QpProblem, tol: f64, iter_limit: usize) -> QpSolution {
    solve_qp_with(
        p,
        &QpSettings {
            tol,
            iter_limit,
            warm_start: None,
        },
    )
}

pub fn solve_qp_with(p: &QpProblem, settings: &QpSettings) -> QpSolution {
    solve_qp_bounds(p, &p.lo, &p.hi, settings)
}

/// Solves `p` with its bounds replaced by `lo`/`hi`. Used by branch and
/// bound to avoid copying the constraint matrices at every node.
pub fn solve_qp_bounds(p: &QpProblem, lo: &[f64], hi: &[f64], settings: &QpSettings) -> QpSolution {
    let red = Reduced::new(p, lo, hi);
    let tol = settings.tol;

    if let Some(viol) = red.trivial_violation {
        if viol > tol {
            return red.infeasible(p, lo, hi, viol);
        }
    }

    let x0 = settings
        .warm_start
        .as_ref()
        .filter(|w| w.len() == p.n)
        .map(|w| red.free.iter().map(|&i| w[i]).collect::<Vec<_>>());
    let core = Core {
        q: &red.q,
        c: &red.c,
        a: &red.a,
        b: &red.b,
        g: &red.g,
        h: &red.h,
    };
    let res = core.solve(0.1 * tol, settings.iter_limit, x0.as_deref());
    let mut sol = red.expand(p, lo, hi, &res);
    if res.converged && sol.kkt_residual <= tol {
        sol.status = QpStatus::Optimal;
        return sol;
    }

    let viol = red.phase1(settings.iter_limit);
    sol.infeasibility = viol;
    sol.status = if viol > INFEASIBILITY_THRESHOLD {
        QpStatus::Infeasible
    } else {
        QpStatus::IterationLimit
    };
    sol
}

/// The problem after fixed-variable substitution and bound stacking.
struct Reduced {
    free: Vec<usize>,
    x_fixed: Vec<f64>,
    q: SparseMatrix,
    c: Vec<f64>,
    a: SparseMatrix,
    b: Vec<f64>,
    eq_rows: Vec<usize>,
    g: SparseMatrix,
    h: Vec<f64>,
    ineq_rows: Vec<usize>,
    /// stacked bound rows: (free index, is_upper)
    bound_rows: Vec<(usize, bool)>,
    /// largest violation among rows left with no free variable
    trivial_violation: Option<f64>,
}

impl Reduced {
    fn new(p: &QpProblem, lo: &[f64], hi: &[f64]) -> Self {
        let n = p.n;
        let mut map = vec![usize::MAX; n];
        let mut free = Vec::new();
        let mut x_fixed = vec![0.0; n];
        for i in 0..n {
            if lo[i] == hi[i] {
                x_fixed[i] = lo[i];
            } else {
                map[i] = free.len();
                free.push(i);
            }
        }
        let nf = free.len();

        let mut qt = Vec::new();
        let mut c: Vec<f64> = free.iter().map(|&i| p.linear[i]).collect();
        for (r, col, v) in p.quadratic.iter() {
            match (map[r] != usize::MAX, map[col] != usize::MAX) {
                (true, true) => qt.push((map[r], map[col], v)),
                (true, false) => c[map[r]] += v * x_fixed[col],
                _ => {}
            }
        }
        let q = SparseMatrix::from_triplets(nf, nf, &qt);

        let mut trivial: Option<f64> = None;
        let mut note = |v: f64| trivial = Some(trivial.unwrap_or(0.0).max(v));

        let mut at = Vec::new();
        let mut b = Vec::new();
        let mut eq_rows = Vec::new();
        for r in 0..p.a.nrows() {
            let (cols, vals) = p.a.row(r);
            let mut rhs = p.b[r];
            let mut terms = Vec::new();
            for (&col, &v) in cols.iter().zip(vals) {
                if map[col] == usize::MAX {
                    rhs -= v * x_fixed[col];
                } else {
                    terms.push((map[col], v));
                }
            }
            if terms.is_empty() {
                note(rhs.abs());
                continue;
            }
            let k = b.len();
            at.extend(terms.into_iter().map(|(j, v)| (k, j, v)));
            b.push(rhs);
            eq_rows.push(r);
        }
        let a = SparseMatrix::from_triplets(b.len(), nf, &at);

        let mut gt = Vec::new();
        let mut h = Vec::new();
        let mut ineq_rows = Vec::new();
        for r in 0..p.g.nrows() {
            if p.h[r] == f64::INFINITY {
                continue;
            }
            let (cols, vals) = p.g.row(r);
            let mut rhs = p.h[r];
            let mut terms = Vec::new();
            for (&col, &v) in cols.iter().zip(vals) {
                if map[col] == usize::MAX {
                    rhs -= v * x_fixed[col];
                } else {
                    terms.push((map[col], v));
                }
            }
            if terms.is_empty() {
                note((-rhs).max(0.0));
                continue;
            }
            let k = h.len();
            gt.extend(terms.into_iter().map(|(j, v)| (k, j, v)));
            h.push(rhs);
            ineq_rows.push(r);
        }
        let mut bound_rows = Vec::new();
        for (j, &i) in free.iter().enumerate() {
            if hi[i].is_finite() {
                let k = h.len();
                gt.push((k, j, 1.0));
                h.push(hi[i]);
                bound_rows.push((j, true));
            }
            if lo[i].is_finite() {
                let k = h.len();
                gt.push((k, j, -1.0));
                h.push(-lo[i]);
                bound_rows.push((j, false));
            }
        }
        let g = SparseMatrix::from_triplets(h.len(), nf, &gt);

        Self {
            free,
            x_fixed,
            q,
            c,
            a,
            b,
            eq_rows,
            g,
            h,
            ineq_rows,
            bound_rows,
            trivial_violation: trivial,
        }
    }

    fn expand(&self, p: &QpProblem, lo: &[f64], hi: &[f64], res: &CoreResult) -> QpSolution {
        let n = p.n;
        let mut x = self.x_fixed.clone();
        for (j, &i) in self.free.iter().enumerate() {
            x[i] = res.x[j].clamp(lo[i], hi[i]);
        }
        let mut duals_eq = vec![0.0; p.b.len()];
        for (k, &r) in self.eq_rows.iter().enumerate() {
            duals_eq[r] = res.y[k];
        }
        let mut duals_ineq = vec![0.0; p.h.len()];
        for (k, &r) in self.ineq_rows.iter().enumerate() {
            duals_ineq[r] = res.z[k];
        }
        let mut duals_bounds = vec![0.0; n];
        let off = self.ineq_rows.len();
        for (k, &(j, upper)) in self.bound_rows.iter().enumerate() {
            let z = res.z[off + k];
            duals_bounds[self.free[j]] += if upper { z } else { -z };
        }
        // fixed variables absorb their stationarity residual into the bound dual
        let mut grad = p.quadratic.mul_vec(&x);
        let at = p.a.tr_mul_vec(&duals_eq);
        let gt = p.g.tr_mul_vec(&duals_ineq);
        for i in 0..n {
            grad[i] += p.linear[i] + at[i] + gt[i];
        }
        for i in 0..n {
            if lo[i] == hi[i] {
                duals_bounds[i] = -grad[i];
            }
        }
        let mut view = p.clone();
        view.lo = lo.to_vec();
        view.hi = hi.to_vec();
        let kkt = kkt_residual(&view, &x, &duals_eq, &duals_ineq, &duals_bounds);
        QpSolution {
            objective: p.objective(&x),
            x,
            duals_eq,
            duals_ineq,
            duals_bounds,
            kkt_residual: kkt,
            status: QpStatus::IterationLimit,
            iterations: res.iterations,
            infeasibility: 0.0,
        }
    }

    fn infeasible(&self, p: &QpProblem, lo: &[f64], hi: &[f64], viol: f64) -> QpSolution {
        let x: Vec<f64> = (0..p.n)
            .map(|i| {
                if lo[i].is_finite() {
                    lo[i]
                } else if hi[i].is_finite() {
                    hi[i]
                } else {
                    0.0
                }
            })
            .collect();
        QpSolution {
            objective: p.objective(&x),
            x,
            duals_eq: vec![0.0; p.b.len()],
            duals_ineq: vec![0.0; p.h.len()],
            duals_bounds: vec![0.0; p.n],
            kkt_residual: f64::INFINITY,
            status: QpStatus::Infeasible,
            iterations: 0,
            infeasibility: viol,
        }
    }

    /// Minimum total violation: `min Σu⁺ + Σu⁻ + Σv` with elastic
    /// equality and general inequality rows; variable bounds stay hard.
    fn phase1(&self, iter_limit: usize) -> f64 {
        let nf = self.free.len();
        let me = self.b.len();
        let mi = self.ineq_rows.len();
        let nv = nf + 2 * me + mi;
        let mut c = vec![0.0; nv];
        c[nf..].iter_mut().for_each(|v| *v = 1.0);
        let qt: Vec<_> = (0..nf).map(|j| (j, j, 1e-9)).collect();
        let q = SparseMatrix::from_triplets(nv, nv, &qt);

        let mut at = self.a.triplets();
        for k in 0..me {
            at.push((k, nf + k, 1.0));
            at.push((k, nf + me + k, -1.0));
        }
        let a = SparseMatrix::from_triplets(me, nv, &at);

        let mut gt = self.g.triplets();
        for r in 0..mi {
            gt.push((r, nf + 2 * me + r, -1.0));
        }
        let mut h = self.h.clone();
        for k in 0..(2 * me + mi) {
            let r = h.len();
            gt.push((r, nf + k, -1.0));
            h.push(0.0);
        }
        let g = SparseMatrix::from_triplets(h.len(), nv, &gt);

        let core = Core {
            q: &q,
            c: &c,
            a: &a,
            b: &self.b,
            g: &g,
            h: &h,
        };
        let res = core.solve(1e-9, iter_limit.max(100), None);
        let viol: f64 = res.x[nf..].iter().map(|v| v.max(0.0)).sum();
        if res.converged {
            viol
        } else {
            // a bound-only infeasibility or numerical trouble; report what we have
            viol.max(res.primal_residual)
        }
    }
}

struct Core<'a> {
    q: &'a SparseMatrix,
    c: &'a [f64],
    a: &'a SparseMatrix,
    b: &'a [f64],
    g: &'a SparseMatrix,
    h: &'a [f64],
}

struct CoreResult {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    converged: bool,
    iterations: usize,
    primal_residual: f64,
}

const REG_PRIMAL: f64 = 1e-9;
const REG_DUAL: f64 = 1e-9;
const PIVOT_REL: f64 = 1e-16;

/// Factorized Newton system `[H Aᵀ; A 0]` with `H = Q + GᵀWG`.
struct Newton<'a> {
    core: &'a Core<'a>,
    w: Vec<f64>,
    fact: &'a SparseLdl,
}

impl Newton<'_> {
    fn apply(&self, dx: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.core;
        let mut top = c.q.mul_vec(dx);
        let mut gdx = c.g.mul_vec(dx);
        for (v, w) in gdx.iter_mut().zip(&self.w) {
            *v *= w;
        }
        for (t, v) in top.iter_mut().zip(c.g.tr_mul_vec(&gdx)) {
            *t += v;
        }
        for (t, v) in top.iter_mut().zip(c.a.tr_mul_vec(dy)) {
            *t += v;
        }
        (top, c.a.mul_vec(dx))
    }

    fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = r1.len();
        let rhs: Vec<f64> = r1.iter().chain(r2).copied().collect();
        let mut sol = self.fact.solve(&rhs);
        let scale = norm_inf(&rhs).max(1.0);
        for _ in 0..6 {
            let (t, bt) = self.apply(&sol[..n], &sol[n..]);
            let res: Vec<f64> = rhs
                .iter()
                .zip(t.iter().chain(&bt))
                .map(|(r, v)| r - v)
                .collect();
            if norm_inf(&res) <= 1e-13 * scale {
                break;
            }
            let corr = self.fact.solve(&res);
            for (s, d) in sol.iter_mut().zip(corr) {
                *s += d;
            }
        }
        let dy = sol.split_off(n);
        (sol, dy)
    }
}

impl Core<'_> {
    fn symbolic(&self) -> SparseLdl {
        let n = self.c.len();
        let me = self.b.len();
        let mut pattern = Vec::new();
        for (r, c, _) in self.q.iter() {
            if r > c {
                pattern.push((r, c));
            }
        }
        for r in 0..self.g.nrows() {
            let (cols, _) = self.g.row(r);
            for (k, &c1) in cols.iter().enumerate() {
                for &c2 in &cols[..k] {
                    pattern.push((c1, c2));
                }
            }
        }
        for (r, c, _) in self.a.iter() {
            pattern.push((n + r, c));
        }
        pattern.sort_unstable();
        pattern.dedup();
        let signs: Vec<f64> = (0..n + me).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        SparseLdl::new(n + me, &pattern, &signs)
    }

    fn factor(&self, fact: &mut SparseLdl, w: &[f64]) {
        let n = self.c.len();
        let me = self.b.len();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in self.q.iter() {
            if r >= c {
                entries.push((r, c, v));
            }
        }
        for r in 0..self.g.nrows() {
            let (cols, vals) = self.g.row(r);
            for k in 0..cols.len() {
                for l in 0..=k {
                    entries.push((cols[k], cols[l], w[r] * vals[k] * vals[l]));
                }
            }
        }
        for (r, c, v) in self.a.iter() {
            entries.push((n + r, c, v));
        }
        for i in 0..n {
            entries.push((i, i, REG_PRIMAL));
        }
        for i in 0..me {
            entries.push((n + i, n + i, -REG_DUAL));
        }
        let big = entries.iter().fold(1.0_f64, |m, e| m.max(e.2.abs()));
        fact.load(entries);
        // late iterations put entries near 1e12 on the diagonal; absolute
        // pivot thresholds then trigger on roundoff and wreck the factor
        fact.factor(PIVOT_REL * big, PIVOT_REL * big);
    }

    fn solve(&self, tol: f64, iter_limit: usize, x0: Option<&[f64]>) -> CoreResult {
        let n = self.c.len();
        let me = self.b.len();
        let m = self.h.len();
        let mut fact = self.symbolic();

        // starting point: minimize ½xᵀQx + cᵀx + ½‖Gx − h‖² on Ax = b
        let mut x;
        let mut y = vec![0.0; me];
        match x0 {
            Some(x0) => x = x0.to_vec(),
            None => {
                let w = vec![1.0; m];
                self.factor(&mut fact, &w);
                let nt = Newton {
                    core: self,
                    w,
                    fact: &fact,
                };
                let gth = self.g.tr_mul_vec(self.h);
                let r1: Vec<f64> = (0..n).map(|i| gth[i] - self.c[i]).collect();
                let (sx, sy) = nt.solve(&r1, self.b);
                x = sx;
                y = sy;
            }
        }
        let gx = self.g.mul_vec(&x);
        let mut s: Vec<f64> = (0..m).map(|i| (self.h[i] - gx[i]).max(1.0)).collect();
        let mut z = vec![1.0; m];

        let mut converged = false;
        let mut iterations = 0;
        let mut small_steps = 0;
        let mut primal_residual = f64::INFINITY;
        let mut best = (f64::INFINITY, f64::INFINITY, x.clone(), y.clone(), z.clone());
        let mut since_best = 0;

        for it in 0..=iter_limit {
            iterations = it;
            let qx = self.q.mul_vec(&x);
            let aty = self.a.tr_mul_vec(&y);
            let gtz = self.g.tr_mul_vec(&z);
            let rd: Vec<f64> = (0..n).map(|i| qx[i] + self.c[i] + aty[i] + gtz[i]).collect();
            let ax = self.a.mul_vec(&x);
            let rp: Vec<f64> = (0..me).map(|i| ax[i] - self.b[i]).collect();
            let gx = self.g.mul_vec(&x);
            let rg: Vec<f64> = (0..m).map(|i| gx[i] + s[i] - self.h[i]).collect();
            let mu = if m > 0 { dot(&s, &z) / m as f64 } else { 0.0 };

            let comp = (0..m).fold(0.0_f64, |acc, i| acc.max((z[i] * (self.h[i] - gx[i])).abs()));
            let viol = (0..m).fold(0.0_f64, |acc, i| acc.max(gx[i] - self.h[i]));
            primal_residual = norm_inf(&rp).max(viol);
            let res = norm_inf(&rd).max(primal_residual).max(comp).max(norm_inf(&rg));
            if res <= tol && mu <= tol {
                converged = true;
                break;
            }
            if !res.is_finite() {
                break;
            }
            // near the end the Newton systems degrade; keep the best point
            if res < best.0 {
                best = (res, primal_residual, x.clone(), y.clone(), z.clone());
                since_best = 0;
            } else {
                since_best += 1;
            }
            if it == iter_limit || small_steps >= 5 || norm_inf(&z) > 1e10 || (since_best >= 8 && mu <= tol) {
                break;
            }

            let w: Vec<f64> = (0..m).map(|i| z[i] / s[i]).collect();
            self.factor(&mut fact, &w);
            let nt = Newton {
                core: self,
                w: w.clone(),
                fact: &fact,
            };

            let direction = |rsz: &[f64]| {
                let t: Vec<f64> = (0..m).map(|i| (z[i] * rg[i] - rsz[i]) / s[i]).collect();
                let gt = self.g.tr_mul_vec(&t);
                let r1: Vec<f64> = (0..n).map(|i| -rd[i] - gt[i]).collect();
                let r2: Vec<f64> = rp.iter().map(|v| -v).collect();
                let (dx, dy) = nt.solve(&r1, &r2);
                let gdx = self.g.mul_vec(&dx);
                let dz: Vec<f64> = (0..m).map(|i| w[i] * gdx[i] + t[i]).collect();
                let ds: Vec<f64> = (0..m).map(|i| -rg[i] - gdx[i]).collect();
                (dx, dy, dz, ds)
            };
            let max_step = |ds: &[f64], dz: &[f64]| {
                let mut a: f64 = 1.0 / 0.99;
                for i in 0..m {
                    if ds[i] < 0.0 {
                        a = a.min(-s[i] / ds[i]);
                    }
                    if dz[i] < 0.0 {
                        a = a.min(-z[i] / dz[i]);
                    }
                }
                a
            };

            let sz: Vec<f64> = (0..m).map(|i| s[i] * z[i]).collect();
            let (dx, dy, dz, ds) = if m > 0 {
                let (_, _, dz_a, ds_a) = direction(&sz);
                let a_aff = max_step(&ds_a, &dz_a).min(1.0);
                let mu_aff = (0..m)
                    .map(|i| (s[i] + a_aff * ds_a[i]) * (z[i] + a_aff * dz_a[i]))
                    .sum::<f64>()
                    / m as f64;
                let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
                let rsz: Vec<f64> = (0..m)
                    .map(|i| sz[i] + ds_a[i] * dz_a[i] - sigma * mu)
                    .collect();
                direction(&rsz)
            } else {
                direction(&sz)
            };
            let alpha = (0.99 * max_step(&ds, &dz)).min(1.0);
            let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
            if !(finite(&dx) && finite(&dy) && finite(&dz) && finite(&ds)) {
                break;
            }
            if alpha < 1e-8 {
                small_steps += 1;
            } else {
                small_steps = 0;
            }
            for i in 0..n {
                x[i] += alpha * dx[i];
            }
            for i in 0..me {
                y[i] += alpha * dy[i];
            }
            for i in 0..m {
                s[i] = (s[i] + alpha * ds[i]).max(1e-300);
                z[i] = (z[i] + alpha * dz[i]).max(1e-300);
            }
        }
        if !converged && best.0.is_finite() {
            // the residual check upstream decides whether this is good enough
            converged = best.0 <= 10.0 * tol;
            (primal_residual, x, y, z) = (best.1, best.2, best.3, best.4);
        }
        CoreResult {
            x,
            y,
            z,
            converged,
            iterations,
            primal_residual,
        }
    }
}

//! Dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀHx + gᵀx
//! subject to  A x ≤ b
//!             lb ≤ x ≤ ub
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The method starts
//! from the unconstrained minimum and adds violated constraints one at a
//! time while keeping the multipliers non-negative, so it never needs a
//! feasible starting point and detects infeasibility directly. Problems in
//! this crate have at most a few dozen variables, so each step re-solves the
//! KKT system of the working set with a dense LU factorization instead of
//! updating factors.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Inequality rows, `m × n`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Largest constraint violation.
    pub primal_residual: f64,
    /// `‖Hx + g + Aᵀλ + μ‖∞`.
    pub stationarity_residual: f64,
    /// Largest `|multiplier · slack|`.
    pub complementarity: f64,
    /// Multipliers of the inequality rows (non-negative).
    pub row_multipliers: DVector<f64>,
    /// Net bound multipliers: positive on an active upper bound, negative on
    /// an active lower bound.
    pub bound_multipliers: DVector<f64>,
    /// Indices of the working set at exit, in the constraint numbering used
    /// by [`QpProblem::constraint_count`]. Can seed a warm start.
    pub active_set: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-8,
            max_iter: 4000,
        }
    }
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        QpProblem {
            h,
            g,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Number of scalar constraints: rows, then upper bounds, then lower bounds.
    pub fn constraint_count(&self) -> usize {
        self.rows() + 2 * self.dim()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        if self.rows() > 0 {
            let ax = &self.a * x;
            for i in 0..self.rows() {
                v = v.max(ax[i] - self.b[i]);
            }
        }
        for j in 0..self.dim() {
            v = v.max(x[j] - self.ub[j]).max(self.lb[j] - x[j]);
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::domain(format!("H is {}x{}, expected {n}x{n}", self.h.nrows(), self.h.ncols())));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::domain("inequality block dimensions disagree"));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::domain("bound vectors have the wrong length"));
        }
        for j in 0..n {
            if self.lb[j].is_nan() || self.ub[j].is_nan() || self.lb[j] > self.ub[j] {
                return Err(Error::domain(format!(
                    "empty box on variable {j}: [{}, {}]",
                    self.lb[j], self.ub[j]
                )));
            }
        }
        let asym = (&self.h - self.h.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + self.h.abs().max()) {
            return Err(Error::domain(format!("H is not symmetric (max asymmetry {asym:e})")));
        }
        Ok(())
    }

    /// Constraint `k` as `(normal, rhs)` meaning `normal · x ≤ rhs`, or
    /// `None` for an infinite bound.
    fn constraint(&self, k: usize) -> Option<(DVector<f64>, f64)> {
        let (m, n) = (self.rows(), self.dim());
        if k < m {
            return Some((self.a.row(k).transpose(), self.b[k]));
        }
        let j = (k - m) % n;
        let upper = k - m < n;
        let mut e = DVector::zeros(n);
        if upper {
            if self.ub[j] == f64::INFINITY {
                return None;
            }
            e[j] = 1.0;
            Some((e, self.ub[j]))
        } else {
            if self.lb[j] == f64::NEG_INFINITY {
                return None;
            }
            e[j] = -1.0;
            Some((e, -self.lb[j]))
        }
    }

    /// Plain-text dump: one block per matrix, a header line `NAME rows cols`
    /// followed by row-major values.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut block = |name: &str, rows: usize, cols: usize, at: &dyn Fn(usize, usize) -> f64| {
            let _ = writeln!(out, "{name} {rows} {cols}");
            for i in 0..rows {
                let line: Vec<String> = (0..cols).map(|j| format!("{:e}", at(i, j))).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        let n = self.dim();
        block("H", n, n, &|i, j| self.h[(i, j)]);
        block("g", n, 1, &|i, _| self.g[i]);
        block("A", self.rows(), n, &|i, j| self.a[(i, j)]);
        block("b", self.rows(), 1, &|i, _| self.b[i]);
        block("lb", n, 1, &|i, _| self.lb[i]);
        block("ub", n, 1, &|i, _| self.ub[i]);
        out
    }
}

pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    solve_qp_with(p, &QpSettings { tol, max_iter }, &[])
}

struct Working<'a> {
    p: &'a QpProblem,
    h_scale: f64,
    /// Active constraint indices with their normals and multipliers.
    active: Vec<(usize, DVector<f64>, f64)>,
    x: DVector<f64>,
}

impl Working<'_> {
    /// Solves `[H N; Nᵀ 0] [x; y] = [rhs_x; rhs_y]` for the current working set.
    fn kkt(&self, rhs_x: &DVector<f64>, rhs_y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.p.dim();
        let k = self.active.len();
        let mut m = DMatrix::zeros(n + k, n + k);
        m.view_mut((0, 0), (n, n)).copy_from(&self.p.h);
        for (c, (_, normal, _)) in self.active.iter().enumerate() {
            m.view_mut((0, n + c), (n, 1)).copy_from(normal);
            m.view_mut((n + c, 0), (1, n)).copy_from(&normal.transpose());
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(rhs_x);
        rhs.rows_mut(n, k).copy_from(rhs_y);
        let sol = m.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
    }

    /// Re-solves the equality-constrained subproblem on the working set.
    fn polish(&mut self) -> bool {
        let rhs_y = DVector::from_iterator(self.active.len(), self.active.iter().map(|(i, _, _)| self.p.constraint(*i).unwrap().1));
        match self.kkt(&-&self.p.g, &rhs_y) {
            Some((x, u)) => {
                self.x = x;
                for (c, entry) in self.active.iter_mut().enumerate() {
                    entry.2 = u[c];
                }
                true
            }
            None => false,
        }
    }

    fn most_violated(&self, threshold: f64) -> Option<(usize, DVector<f64>, f64)> {
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        let mut worst = threshold;
        for k in 0..self.p.constraint_count() {
            if self.active.iter().any(|(i, _, _)| *i == k) {
                continue;
            }
            if let Some((normal, rhs)) = self.p.constraint(k) {
                let viol = (normal.dot(&self.x) - rhs) / normal.norm();
                if viol > worst {
                    worst = viol;
                    best = Some((k, normal, rhs));
                }
            }
        }
        best
    }
}

/// Solves `p`, optionally seeding the working set with `warm_start`
/// constraint indices (e.g. [`QpSolution::active_set`] of a related solve).
pub fn solve_qp_with(p: &QpProblem, settings: &QpSettings, warm_start: &[usize]) -> Result<QpSolution> {
    p.validate()?;
    let n = p.dim();
    let h_scale = p.h.abs().max().max(1e-300);
    let mut w = Working {
        p,
        h_scale,
        active: Vec::new(),
        x: DVector::zeros(n),
    };

    if !w.polish() {
        return Err(Error::domain("H is singular"));
    }

    // Warm start: adopt the guessed working set, dropping constraints with
    // negative multipliers until the subproblem solution is dual feasible.
    if !warm_start.is_empty() {
        let mut seeded: Vec<(usize, DVector<f64>, f64)> = Vec::new();
        for &k in warm_start {
            if k < p.constraint_count() && !seeded.iter().any(|(i, _, _)| *i == k) {
                if let Some((normal, _)) = p.constraint(k) {
                    seeded.push((k, normal, 0.0));
                }
            }
        }
        w.active = seeded;
        loop {
            if !w.polish() {
                w.active.clear();
                w.polish();
                break;
            }
            let worst = w
                .active
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
                .map(|(c, e)| (c, e.2));
            match worst {
                Some((c, u)) if u < 0.0 => {
                    w.active.remove(c);
                }
                _ => break,
            }
        }
    }

    let feas_threshold = 0.1 * settings.tol;
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        let Some((pk, np, rp)) = w.most_violated(feas_threshold) else {
            break;
        };
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            let Some((z, dir)) = w.kkt(&-&np, &DVector::zeros(w.active.len())) else {
                // Working set became dependent; treat as a failed step.
                status = QpStatus::Infeasible;
                break 'outer;
            };
            let curvature = -np.dot(&z);
            let z_is_zero = curvature <= 1e-13 * np.norm_squared() / w.h_scale;

            // Largest step keeping working-set multipliers non-negative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (c, (_, _, u)) in w.active.iter().enumerate() {
                if dir[c] < 0.0 {
                    let t = -u / dir[c];
                    if t < t1 {
                        t1 = t;
                        drop = Some(c);
                    }
                }
            }
            let t2 = if z_is_zero {
                f64::INFINITY
            } else {
                (np.dot(&w.x) - rp) / curvature
            };

            if t1.is_infinite() && t2.is_infinite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }
            let t = t1.min(t2);
            if !z_is_zero {
                w.x += &z * t;
            }
            for (c, entry) in w.active.iter_mut().enumerate() {
                entry.2 += t * dir[c];
            }
            u_p += t;

            if t2 <= t1 {
                w.active.push((pk, np.clone(), u_p));
                if !w.polish() {
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
                // Clean round-off that can push a multiplier just below zero.
                w.active.retain(|(_, _, u)| *u >= -1e-12);
                continue 'outer;
            }
            let c = drop.expect("partial step implies a blocking multiplier");
            w.active.remove(c);
        }
    }

    if status == QpStatus::Optimal {
        w.polish();
    }
    Ok(finish(p, w, status, iterations))
}

fn finish(p: &QpProblem, w: Working<'_>, status: QpStatus, iterations: usize) -> QpSolution {
    let (m, n) = (p.rows(), p.dim());
    let mut row_mult = DVector::zeros(m);
    let mut bound_mult = DVector::zeros(n);
    let mut grad = &p.h * &w.x + &p.g;
    let mut complementarity: f64 = 0.0;
    for (k, normal, u) in &w.active {
        let u = u.max(0.0);
        grad += normal * u;
        let rhs = p.constraint(*k).unwrap().1;
        complementarity = complementarity.max((u * (rhs - normal.dot(&w.x))).abs());
        if *k < m {
            row_mult[*k] = u;
        } else if k - m < n {
            bound_mult[k - m] += u;
        } else {
            bound_mult[k - m - n] -= u;
        }
    }
    let primal_residual = p.max_violation(&w.x).max(0.0);
    let stationarity_residual = grad.amax();
    let mut status = status;
    if status == QpStatus::Optimal && (!primal_residual.is_finite() || w.x.iter().any(|v| !v.is_finite())) {
        status = QpStatus::Infeasible;
    }
    QpSolution {
        active_set: w.active.iter().map(|(k, _, _)| *k).collect(),
        x: w.x,
        status,
        iterations,
        primal_residual,
        stationarity_residual,
        complementarity,
        row_multipliers: row_mult,
        bound_multipliers: bound_mult,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![-1.0, -1.0]);
        let s = solve_qp(&p, 1e-8, 4000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, dvector![1.0, 1.0], epsilon = 1e-14);
    }

    #[test]
    fn box_clipping() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![-1.0, -1.0]);
        p.ub[0] = 0.5;
        let s = solve_qp(&p, 1e-8, 4000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, dvector![0.5, 1.0], epsilon = 1e-14);
        assert_abs_diff_eq!(s.bound_multipliers[0], 0.5, epsilon = 1e-14);
        assert!(s.stationarity_residual < 1e-12);
    }

    #[test]
    fn general_row_and_multiplier() {
        // min ½‖x‖² - x₀ - x₁  s.t. x₀ + x₁ ≤ 1  →  x = (½, ½), λ = ½
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![-1.0, -1.0]);
        p.a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b = dvector![1.0];
        let s = solve_qp(&p, 1e-8, 4000).unwrap();
        assert_abs_diff_eq!(s.x, dvector![0.5, 0.5], epsilon = 1e-14);
        assert_abs_diff_eq!(s.row_multipliers[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![0.0, 0.0]);
        p.a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        p.b = dvector![-1.0, -1.0]; // x₀ ≤ -1 and x₀ ≥ 1
        let s = solve_qp(&p, 1e-8, 4000).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(s.primal_residual > 0.5);
    }

    #[test]
    fn rows_conflicting_with_box() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(1, 1), dvector![0.0]);
        p.ub[0] = 0.0;
        p.a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        p.b = dvector![-0.5]; // x ≥ 0.5
        assert_eq!(solve_qp(&p, 1e-8, 4000).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn empty_box_is_a_domain_error() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![0.0, 0.0]);
        p.lb[1] = 1.0;
        p.ub[1] = 0.0;
        assert!(matches!(solve_qp(&p, 1e-8, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn asymmetric_h_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(solve_qp(&QpProblem::unconstrained(h, dvector![0.0, 0.0]), 1e-8, 10).is_err());
    }

    #[test]
    fn fixed_variable() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![-1.0, 3.0]);
        p.lb[0] = 0.25;
        p.ub[0] = 0.25;
        let s = solve_qp(&p, 1e-8, 4000).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x, dvector![0.25, -3.0], epsilon = 1e-14);
    }

    #[test]
    fn dump_has_all_blocks() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), dvector![1.0, 2.0]);
        let d = p.dump();
        for header in ["H 2 2", "g 2 1", "A 0 2", "b 0 1", "lb 2 1", "ub 2 1"] {
            assert!(d.contains(header), "{d}");
        }
        assert!(d.contains("inf"));
    }
}

//! Dual active-set solver (Goldfarb–Idnani) for small strictly convex QPs
//! with diagonal Hessian:
//!
//! ```text
//! minimize   ½ xᵀ H x + aᵀ x
//! subject to e_iᵀ x  = b_i   (equalities)
//!            c_jᵀ x ≥ d_j   (inequalities)
//! ```
//!
//! The problem is rescaled to unit Hessian, so the factor `J` starts as the
//! identity and is kept orthogonal through Givens rotations.

use crate::error::{Error, Result};
use crate::linalg::dot;

/// One linear constraint row `coeffs · x (= or ≥) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equalities, in input order.
    pub eq_multipliers: Vec<f64>,
    /// Multipliers of the inequalities, in input order (zero when inactive).
    pub ineq_multipliers: Vec<f64>,
    pub iterations: usize,
}

const DEP_TOL: f64 = 1e-13;

struct Factor {
    n: usize,
    /// `J`, row-major `n × n`.
    j: Vec<f64>,
    /// Upper-triangular `R`, column-major with stride `n`.
    r: Vec<f64>,
    q: usize,
}

impl Factor {
    fn new(n: usize) -> Self {
        let mut j = vec![0.0; n * n];
        for i in 0..n {
            j[i * n + i] = 1.0;
        }
        Self {
            n,
            j,
            r: vec![0.0; n * n],
            q: 0,
        }
    }

    fn jt_times(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![0.0; n];
        for (row, vi) in v.iter().enumerate() {
            if *vi != 0.0 {
                let jr = &self.j[row * n..(row + 1) * n];
                for (dk, jk) in d.iter_mut().zip(jr) {
                    *dk += jk * vi;
                }
            }
        }
        d
    }

    /// Primal step `z = J_2 d_2`.
    fn primal_dir(&self, d: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|row| (self.q..n).map(|c| self.j[row * n + c] * d[c]).sum())
            .collect()
    }

    /// Dual step `r = R⁻¹ d_1`.
    fn dual_dir(&self, d: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; self.q];
        for i in (0..self.q).rev() {
            let mut s = d[i];
            for k in i + 1..self.q {
                s -= self.r[k * n + i] * r[k];
            }
            r[i] = s / self.r[i * n + i];
        }
        r
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.n;
        for row in 0..n {
            let x = self.j[row * n + a];
            let y = self.j[row * n + b];
            self.j[row * n + a] = c * x + s * y;
            self.j[row * n + b] = -s * x + c * y;
        }
    }

    /// Appends the constraint whose transformed normal is `d`; false when it
    /// is linearly dependent on the active set.
    fn add(&mut self, mut d: Vec<f64>) -> bool {
        let n = self.n;
        for k in (self.q + 1..n).rev() {
            let (x, y) = (d[k - 1], d[k]);
            if y == 0.0 {
                continue;
            }
            let h = x.hypot(y);
            let (c, s) = (x / h, y / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        if d[self.q].abs() <= DEP_TOL {
            return false;
        }
        let col = self.q;
        for i in 0..=col {
            self.r[col * n + i] = d[i];
        }
        self.q += 1;
        true
    }

    /// Removes active column `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let n = self.n;
        for col in l..self.q - 1 {
            for i in 0..n {
                self.r[col * n + i] = self.r[(col + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(self.q - 1) * n + i] = 0.0;
        }
        self.q -= 1;
        for k in l..self.q {
            let (x, y) = (self.r[k * n + k], self.r[k * n + k + 1]);
            if y == 0.0 {
                continue;
            }
            let h = x.hypot(y);
            let (c, s) = (x / h, y / h);
            for col in k..self.q {
                let a = self.r[col * n + k];
                let b = self.r[col * n + k + 1];
                self.r[col * n + k] = c * a + s * b;
                self.r[col * n + k + 1] = -s * a + c * b;
            }
            self.rotate_j(k, k + 1, c, s);
        }
    }
}

/// Solves the QP with diagonal Hessian `h` (all entries positive).
pub fn solve_diag_qp(
    h: &[f64],
    a: &[f64],
    eqs: &[LinearRow],
    ineqs: &[LinearRow],
) -> Result<QpSolution> {
    let n = h.len();
    if a.len() != n {
        return Err(Error::dim("qp linear term", n, a.len()));
    }
    if let Some(v) = h.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "qp hessian entry {v} is not positive"
        )));
    }
    for row in eqs.iter().chain(ineqs) {
        if row.coeffs.len() != n {
            return Err(Error::dim("qp constraint row", n, row.coeffs.len()));
        }
    }
    let scale: Vec<f64> = h.iter().map(|v| 1.0 / v.sqrt()).collect();
    let rescale = |row: &LinearRow| LinearRow {
        coeffs: row.coeffs.iter().zip(&scale).map(|(c, s)| c * s).collect(),
        rhs: row.rhs,
    };
    let eqs_s: Vec<LinearRow> = eqs.iter().map(rescale).collect();
    let ineqs_s: Vec<LinearRow> = ineqs.iter().map(rescale).collect();
    let a_s: Vec<f64> = a.iter().zip(&scale).map(|(a, s)| a * s).collect();
    let mut sol = solve_unit_qp(&a_s, &eqs_s, &ineqs_s)?;
    for (x, s) in sol.x.iter_mut().zip(&scale) {
        *x *= s;
    }
    Ok(sol)
}

/// Euclidean projection of `point` onto `{eqs, ineqs}`.
pub fn project(point: &[f64], eqs: &[LinearRow], ineqs: &[LinearRow]) -> Result<QpSolution> {
    let a: Vec<f64> = point.iter().map(|v| -v).collect();
    solve_unit_qp(&a, eqs, ineqs)
}

/// Solves `min ½‖x‖² + aᵀx` under the given constraints.
pub fn solve_unit_qp(a: &[f64], eqs: &[LinearRow], ineqs: &[LinearRow]) -> Result<QpSolution> {
    let n = a.len();
    let me = eqs.len();
    // Active entries index the combined list: equalities first, then
    // inequalities. Equalities may be stored sign-flipped.
    let row = |k: usize| -> (&[f64], f64) {
        if k < me {
            (&eqs[k].coeffs, eqs[k].rhs)
        } else {
            (&ineqs[k - me].coeffs, ineqs[k - me].rhs)
        }
    };
    let mut x: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut f = Factor::new(n);
    let mut active: Vec<usize> = Vec::new();
    let mut sign: Vec<f64> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 50 * (n + me + ineqs.len()) + 1000;
    let mut iterations = 0;

    // equalities first
    for k in 0..me {
        let (c, b) = row(k);
        let s = dot(c, &x) - b;
        let sg = if s > 0.0 { -1.0 } else { 1.0 };
        let np: Vec<f64> = c.iter().map(|v| sg * v).collect();
        let mut uplus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Numerical("qp iteration cap reached".into()));
            }
            let d = f.jt_times(&np);
            let z = f.primal_dir(&d);
            let r = f.dual_dir(&d);
            let slack = sg * (dot(c, &x) - b);
            let zn = dot(&z, &np);
            let t2 = if zn.abs() > DEP_TOL {
                -slack / zn
            } else {
                f64::INFINITY
            };
            let (t1, l) = step_limit(&r, &u, &active, me);
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::InfeasibleProgram);
            }
            let t = t1.min(t2);
            for (ui, ri) in u.iter_mut().zip(&r) {
                *ui -= t * ri;
            }
            uplus += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                if !f.add(d) {
                    return Err(Error::Numerical("dependent equality constraints".into()));
                }
                active.push(k);
                sign.push(sg);
                u.push(uplus);
                break;
            }
            f.drop(l);
            active.remove(l);
            sign.remove(l);
            u.remove(l);
        }
    }

    loop {
        // most violated inequality
        let mut worst = None;
        let mut worst_s = 0.0;
        for (j, c) in ineqs.iter().enumerate() {
            let k = me + j;
            if active.contains(&k) {
                continue;
            }
            let s = dot(&c.coeffs, &x) - c.rhs;
            let tol = 1e-12 * (1.0 + c.rhs.abs());
            if s < -tol && s < worst_s {
                worst_s = s;
                worst = Some(k);
            }
        }
        let Some(p) = worst else { break };
        let (c, b) = row(p);
        let mut uplus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Numerical("qp iteration cap reached".into()));
            }
            let d = f.jt_times(c);
            let z = f.primal_dir(&d);
            let r = f.dual_dir(&d);
            let slack = dot(c, &x) - b;
            let zn = dot(&z, c);
            let t2 = if zn > DEP_TOL {
                -slack / zn
            } else {
                f64::INFINITY
            };
            let (t1, l) = step_limit(&r, &u, &active, me);
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::InfeasibleProgram);
            }
            let t = t1.min(t2);
            for (ui, ri) in u.iter_mut().zip(&r) {
                *ui -= t * ri;
            }
            uplus += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                if f.add(d) {
                    active.push(p);
                    sign.push(1.0);
                    u.push(uplus);
                }
                break;
            }
            f.drop(l);
            active.remove(l);
            sign.remove(l);
            u.remove(l);
        }
    }

    let mut eq_multipliers = vec![0.0; me];
    let mut ineq_multipliers = vec![0.0; ineqs.len()];
    for ((k, s), ui) in active.iter().zip(&sign).zip(&u) {
        if *k < me {
            eq_multipliers[*k] = s * ui;
        } else {
            ineq_multipliers[k - me] = *ui;
        }
    }
    Ok(QpSolution {
        x,
        eq_multipliers,
        ineq_multipliers,
        iterations,
    })
}

/// Largest dual step before an active inequality multiplier hits zero.
fn step_limit(r: &[f64], u: &[f64], active: &[usize], me: usize) -> (f64, usize) {
    let mut t1 = f64::INFINITY;
    let mut l = 0;
    for (i, (&ri, &ui)) in r.iter().zip(u).enumerate() {
        if active[i] >= me && ri > 0.0 {
            let t = ui / ri;
            if t < t1 {
                t1 = t;
                l = i;
            }
        }
    }
    (t1.max(0.0), l)
}

/// Euclidean projection onto the probability simplex (sort based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

//! Strictly convex quadratic programs by the dual active-set method of
//! Goldfarb and Idnani.
//!
//! Solves `min 1/2 p'Hp + g'p` subject to `E p + e = 0` and `G p + d >= 0`.
//! Multipliers follow `H p + g = E' lambda + G' mu` with `mu >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rows `a_i` and offsets `b_i` of linear constraints `a_i p + b_i (=, >=) 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearConstraints {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.nrows(), b.len(), "one offset per constraint row");
        Self { a, b }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub p: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub mu: DVector<f64>,
    /// Active inequality indices at the solution.
    pub active: Vec<usize>,
    pub iterations: usize,
}

struct Factors {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let h = a.hypot(b);
    (a / h, b / h, h)
}

impl Factors {
    /// Rotates `d = J' n` so that only its first `q + 1` entries are nonzero,
    /// then appends it as the new last column of `R`. Returns false when the
    /// constraint is linearly dependent on the active set.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        let (n, q) = (self.n, self.q);
        for k in (q + 1..n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if d[k] == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            for row in 0..n {
                let (x, y) = (self.j[(row, k - 1)], self.j[(row, k)]);
                self.j[(row, k - 1)] = c * x + s * y;
                self.j[(row, k)] = -s * x + c * y;
            }
        }
        let scale = d.amax().max(1.0);
        if d[q].abs() <= 1e-13 * scale {
            return false;
        }
        for row in 0..=q {
            self.r[(row, q)] = d[row];
        }
        self.q += 1;
        true
    }

    /// Removes active column `k` and restores triangularity.
    fn drop(&mut self, k: usize) {
        let q = self.q;
        for col in k..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in k..q - 1 {
            let (a, b) = (self.r[(col, col)], self.r[(col + 1, col)]);
            let (c, s, h) = givens(a, b);
            if b == 0.0 {
                continue;
            }
            self.r[(col, col)] = h;
            self.r[(col + 1, col)] = 0.0;
            for cc in col + 1..q - 1 {
                let (x, y) = (self.r[(col, cc)], self.r[(col + 1, cc)]);
                self.r[(col, cc)] = c * x + s * y;
                self.r[(col + 1, cc)] = -s * x + c * y;
            }
            for row in 0..self.n {
                let (x, y) = (self.j[(row, col)], self.j[(row, col + 1)]);
                self.j[(row, col)] = c * x + s * y;
                self.j[(row, col + 1)] = -s * x + c * y;
            }
        }
        self.q -= 1;
    }

    /// Primal direction `z` and dual direction `r` for constraint normal `a`.
    fn directions(&self, a: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let d = self.j.tr_mul(a);
        let q = self.q;
        let z = self.j.columns(q, self.n - q) * d.rows(q, self.n - q);
        let mut r = d.rows(0, q).clone_owned();
        for i in (0..q).rev() {
            let mut s = r[i];
            for k in i + 1..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (d, z, r)
    }
}

/// Default bound on active-set changes.
pub fn default_max_iter(n: usize, m: usize) -> usize {
    10 * (n + m) + 50
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    eq: &LinearConstraints,
    ineq: &LinearConstraints,
    max_iter: usize,
) -> Result<QpSolution> {
    let n = g.len();
    let chol = h.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite)?;
    let mut f = Factors {
        n,
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    let mut x = -chol.solve(g);
    // active constraints: (is_eq, index) aligned with columns of R
    let mut active: Vec<(bool, usize)> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let row = |c: &LinearConstraints, i: usize| c.a.row(i).transpose();
    let value = |c: &LinearConstraints, i: usize, x: &DVector<f64>| c.a.row(i).dot(&x.transpose()) + c.b[i];
    let tol_of = |c: &LinearConstraints, i: usize, x: &DVector<f64>| {
        let mag: f64 = c.a.row(i).iter().zip(x.iter()).map(|(a, v)| (a * v).abs()).sum();
        1e-11 * (1.0 + c.b[i].abs() + mag)
    };

    for i in 0..eq.len() {
        let a = row(eq, i);
        let (_, z, r) = f.directions(&a);
        let s = value(eq, i, &x);
        let za = z.dot(&a);
        if za.abs() <= 1e-14 * a.norm().max(1.0) * z.norm().max(1.0) || z.norm() == 0.0 {
            if s.abs() <= tol_of(eq, i, &x).max(1e-9) {
                continue; // redundant
            }
            return Err(Error::QpInfeasible);
        }
        let t = -s / za;
        x += t * &z;
        for (uk, rk) in u.iter_mut().zip(r.iter()) {
            *uk -= t * rk;
        }
        u.push(t);
        let d = f.j.tr_mul(&a);
        if !f.add(d) {
            return Err(Error::QpInfeasible);
        }
        active.push((true, i));
    }

    loop {
        // most violated inactive inequality
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..ineq.len() {
            if active.iter().any(|&(e, k)| !e && k == i) {
                continue;
            }
            let s = value(ineq, i, &x);
            if s < -tol_of(ineq, i, &x) {
                let norm = ineq.a.row(i).norm().max(1e-300);
                let score = s / norm;
                if pick.map_or(true, |(_, best)| score < best) {
                    pick = Some((i, score));
                }
            }
        }
        let Some((p, _)) = pick else {
            break;
        };
        let a = row(ineq, p);
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::QpMaxCycles(max_iter));
            }
            let (d, z, r) = f.directions(&a);
            let s = value(ineq, p, &x);
            // partial step: the blocking active inequality
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &(is_eq, _)) in active.iter().enumerate() {
                if !is_eq && r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let za = z.dot(&a);
            let t2 = if z.amax() > 1e-14 * a.amax().max(1.0) && za > 0.0 {
                -s / za
            } else {
                f64::INFINITY
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::QpInfeasible);
            }
            if t2.is_infinite() {
                for (uk, rk) in u.iter_mut().zip(r.iter()) {
                    *uk -= t1 * rk;
                }
                u_p += t1;
                let k = drop_at.expect("finite partial step");
                f.drop(k);
                active.remove(k);
                u.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += t * &z;
            for (uk, rk) in u.iter_mut().zip(r.iter()) {
                *uk -= t * rk;
            }
            u_p += t;
            if t2 <= t1 {
                if !f.add(d) {
                    // numerically dependent: treat as satisfied
                    break;
                }
                active.push((false, p));
                u.push(u_p);
                break;
            }
            let k = drop_at.expect("finite partial step");
            f.drop(k);
            active.remove(k);
            u.remove(k);
        }
    }

    let mut lambda_eq = DVector::zeros(eq.len());
    let mut mu = DVector::zeros(ineq.len());
    let mut act = Vec::new();
    for (&(is_eq, i), &ui) in active.iter().zip(&u) {
        if is_eq {
            lambda_eq[i] = ui;
        } else {
            mu[i] = ui.max(0.0);
            act.push(i);
        }
    }
    act.sort_unstable();
    Ok(QpSolution {
        p: x,
        lambda_eq,
        mu,
        active: act,
        iterations,
    })
}

//! Reduced-space sequential quadratic programming.
//!
//! Each iteration splits the step into a range-space part that zeroes the
//! linearized equality constraints and a null-space part from a small convex
//! QP carrying the (linear) inequality constraints. The reduced Hessian is a
//! Powell-damped BFGS approximation and steps are globalized by backtracking
//! on an l1 merit function, with a second-order correction against the
//! Maratos effect.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{default_max_iter, solve_qp, LinearConstraints};
use crate::error::{Error, Result};

/// Sparse linear inequality `sum_k coef_k x[idx_k] + offset >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIneq {
    pub idx: Vec<usize>,
    pub coef: Vec<f64>,
    pub offset: f64,
}

impl LinearIneq {
    pub fn new(terms: &[(usize, f64)], offset: f64) -> Self {
        Self {
            idx: terms.iter().map(|t| t.0).collect(),
            coef: terms.iter().map(|t| t.1).collect(),
            offset,
        }
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.idx.iter().zip(&self.coef).map(|(&i, &a)| a * v[i]).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.dot(x) + self.offset
    }
}

/// Linearized equality constraints at a point, as needed by the reduced
/// step: a null-space basis `Z` of the Jacobian `A`, a particular solution of
/// `A p = -c`, multiplier estimates and products with `A'`.
pub trait EqLinearization {
    fn null_basis(&self) -> &DMatrix<f64>;

    /// A step `p` with `A p = -c` and no component along the null basis.
    fn particular(&self, c: &[f64]) -> Result<Vec<f64>>;

    /// Multipliers for which `g + A' lambda` has no range-space component.
    fn multipliers(&self, g: &[f64]) -> Result<Vec<f64>>;

    fn jac_t_mul(&self, lambda: &[f64]) -> Vec<f64>;
}

/// Orthonormal range/null-space split from a QR factorization of `A'`.
pub struct DenseLinearization {
    a: DMatrix<f64>,
    y: DMatrix<f64>,
    z: DMatrix<f64>,
    r11: DMatrix<f64>,
}

impl DenseLinearization {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 {
            return Ok(Self {
                a,
                y: DMatrix::zeros(n, 0),
                z: DMatrix::identity(n, n),
                r11: DMatrix::zeros(0, 0),
            });
        }
        if m > n {
            return Err(Error::Singular);
        }
        // QR of [A' | I] yields a full orthogonal Q whose first m columns span A'
        let mut aug = DMatrix::zeros(n, m + n);
        aug.view_mut((0, 0), (n, m)).copy_from(&a.transpose());
        aug.view_mut((0, m), (n, n)).fill_with_identity();
        let qr = aug.qr();
        let q = qr.q();
        let r = qr.r();
        let r11 = r.view((0, 0), (m, m)).clone_owned();
        let scale = r11.amax().max(f64::MIN_POSITIVE);
        if (0..m).any(|i| r11[(i, i)].abs() <= 1e-12 * scale) {
            return Err(Error::Singular);
        }
        Ok(Self {
            y: q.columns(0, m).clone_owned(),
            z: q.columns(m, n - m).clone_owned(),
            a,
            r11,
        })
    }
}

impl EqLinearization for DenseLinearization {
    fn null_basis(&self) -> &DMatrix<f64> {
        &self.z
    }

    fn particular(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.is_empty() {
            return Ok(vec![0.0; self.z.nrows()]);
        }
        let rhs = -DVector::from_column_slice(c);
        let v = self
            .r11
            .transpose()
            .solve_lower_triangular(&rhs)
            .ok_or(Error::Singular)?;
        Ok((&self.y * v).as_slice().to_vec())
    }

    fn multipliers(&self, g: &[f64]) -> Result<Vec<f64>> {
        if self.r11.nrows() == 0 {
            return Ok(Vec::new());
        }
        let yg = self.y.tr_mul(&DVector::from_column_slice(g));
        let lam = self.r11.solve_upper_triangular(&-yg).ok_or(Error::Singular)?;
        Ok(lam.as_slice().to_vec())
    }

    fn jac_t_mul(&self, lambda: &[f64]) -> Vec<f64> {
        if lambda.is_empty() {
            return vec![0.0; self.a.ncols()];
        }
        (self.a.tr_mul(&DVector::from_column_slice(lambda)))
            .as_slice()
            .to_vec()
    }
}

/// A smooth nonlinear program with equality constraints and linear
/// inequality constraints.
pub trait Nlp {
    fn n_vars(&self) -> usize;

    fn n_eq(&self) -> usize {
        0
    }

    fn objective(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], g: &mut [f64]);

    fn eq_constraints(&self, _x: &[f64], _c: &mut [f64]) {}

    /// Dense equality Jacobian; the default uses central differences.
    fn eq_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (n, m) = (self.n_vars(), self.n_eq());
        let mut jac = DMatrix::zeros(m, n);
        let mut xp = x.to_vec();
        let (mut cp, mut cm) = (vec![0.0; m], vec![0.0; m]);
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            self.eq_constraints(&xp, &mut cp);
            xp[j] = x[j] - h;
            self.eq_constraints(&xp, &mut cm);
            xp[j] = x[j];
            for i in 0..m {
                jac[(i, j)] = (cp[i] - cm[i]) / (2.0 * h);
            }
        }
        jac
    }

    fn inequalities(&self) -> &[LinearIneq] {
        &[]
    }

    /// Diagonal of the objective Hessian when it is diagonal. When given, the
    /// reduced Hessian is built from it (Gauss-Newton style) instead of from
    /// quasi-Newton updates.
    fn objective_hessian_diag(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// A point near `x` that satisfies the equality constraints exactly,
    /// if the problem knows how to compute one.
    fn restore(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn linearize(&self, x: &[f64]) -> Result<Box<dyn EqLinearization + '_>> {
        Ok(Box::new(DenseLinearization::new(self.eq_jacobian(x))?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    LineSearchFail,
    QpInfeasible,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIter => "max_iter",
            Self::LineSearchFail => "line_search_fail",
            Self::QpInfeasible => "qp_infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqpConfig {
    /// Bound on reduced stationarity and complementarity.
    pub tol: f64,
    /// Bound on equality and inequality violation.
    pub feas_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// Second-order corrections tried per trial point; 0 disables them.
    pub max_corrections: usize,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            feas_tol: 1e-10,
            max_iter: 500,
            max_backtracks: 40,
            armijo: 1e-4,
            max_corrections: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Largest of stationarity, complementarity and constraint violation.
    pub kkt_residual: f64,
    pub stationarity: f64,
    pub max_violation: f64,
    pub eq_multipliers: Vec<f64>,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    c: Vec<f64>,
}

fn evaluate<P: Nlp + ?Sized>(nlp: &P, x: Vec<f64>) -> Point {
    let mut g = vec![0.0; x.len()];
    let mut c = vec![0.0; nlp.n_eq()];
    let f = nlp.objective(&x);
    nlp.gradient(&x, &mut g);
    nlp.eq_constraints(&x, &mut c);
    Point { x, f, g, c }
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|a| a.abs()).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn ineq_violation(ineqs: &[LinearIneq], x: &[f64]) -> f64 {
    ineqs.iter().map(|q| (-q.value(x)).max(0.0)).sum()
}

/// Damped BFGS update of `b` with step `s` and gradient change `y`.
pub fn damped_bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r = theta * y + (1.0 - theta) * &bs;
    let sr = s.dot(&r);
    if !(sr > 0.0) || !sr.is_finite() {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
    // keep exact symmetry
    let bt = b.transpose();
    *b = (&*b + bt) * 0.5;
}

pub fn sqp_solve<P: Nlp + ?Sized>(nlp: &P, x0: &[f64], cfg: &SqpConfig) -> Result<SqpOutcome> {
    let n = nlp.n_vars();
    if x0.len() != n {
        return Err(Error::invalid("x0", format!("expected {n} variables, got {}", x0.len())));
    }
    let ineqs = nlp.inequalities();
    let mut pt = evaluate(nlp, x0.to_vec());
    if !pt.f.is_finite() || pt.g.iter().chain(&pt.c).any(|v| !v.is_finite()) {
        return Err(Error::invalid("x0", "objective or constraints not finite at start"));
    }
    let mut lin = nlp.linearize(&pt.x)?;
    let nz = lin.null_basis().ncols();
    let mut b = DMatrix::<f64>::identity(nz, nz);
    let mut first_update = true;
    let mut rho = 0.0f64;
    let mut last = None;
    // Levenberg shift for the exact-objective reduced Hessian
    let mut shift = f64::NAN;

    for iter in 0..cfg.max_iter {
        let z = lin.null_basis();
        let exact = nlp.objective_hessian_diag(&pt.x);
        if let Some(h) = &exact {
            let mut hz = z.clone();
            for (mut row, &hk) in hz.row_iter_mut().zip(h) {
                row *= hk;
            }
            b = z.tr_mul(&hz);
            let top = (0..nz).map(|j| b[(j, j)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
            if shift.is_nan() {
                shift = 1e-6 * top;
            }
            shift = shift.clamp(1e-12 * top, 1e6 * top);
            for j in 0..nz {
                b[(j, j)] += shift;
            }
        }
        let lam = lin.multipliers(&pt.g)?;
        let gz = z.tr_mul(&DVector::from_column_slice(&pt.g));
        let py = lin.particular(&pt.c)?;

        // inequality rows in the reduced space
        let mi = ineqs.len();
        let mut gmat = DMatrix::zeros(mi, nz);
        let mut resid = vec![0.0; mi];
        let mut along_py = vec![0.0; mi];
        for (i, q) in ineqs.iter().enumerate() {
            for (&k, &a) in q.idx.iter().zip(&q.coef) {
                for j in 0..nz {
                    gmat[(i, j)] += a * z[(k, j)];
                }
            }
            resid[i] = q.value(&pt.x);
            along_py[i] = q.dot(&py);
        }
        let empty = LinearConstraints::empty(nz);
        let qp_budget = default_max_iter(nz, mi);
        let mut tau = 1.0;
        let qp = loop {
            let d = DVector::from_iterator(mi, (0..mi).map(|i| resid[i] + tau * along_py[i]));
            let cons = LinearConstraints::new(gmat.clone(), d);
            match solve_qp(&b, &gz, &empty, &cons, qp_budget) {
                Ok(sol) => break sol,
                Err(Error::QpInfeasible) if tau > 0.0 => {
                    // shorten the range-space step until the QP is feasible
                    tau = if tau < 1e-3 { 0.0 } else { tau * 0.5 };
                }
                Err(Error::QpInfeasible) => {
                    let kkt = norm_inf(&pt.c).max(norm_inf(&gz.as_slice().to_vec()));
                    return Ok(SqpOutcome {
                        objective: pt.f,
                        x: pt.x,
                        status: FitStatus::QpInfeasible,
                        iterations: iter,
                        kkt_residual: kkt,
                        stationarity: norm_inf(gz.as_slice()),
                        max_violation: norm_inf(&resid.iter().map(|r| (-r).max(0.0)).collect::<Vec<_>>()),
                        eq_multipliers: lam,
                    });
                }
                Err(Error::NotPositiveDefinite) => {
                    b = DMatrix::identity(nz, nz);
                }
                Err(e) => return Err(e),
            }
        };
        let pz = &qp.p;
        let stat_vec = &gz - gmat.tr_mul(&qp.mu);
        let stationarity = stat_vec.amax();
        let complementarity = (0..mi)
            .map(|i| (qp.mu[i] * resid[i]).abs())
            .fold(0.0f64, f64::max);
        let ineq_viol = resid.iter().fold(0.0f64, |a, &r| a.max(-r));
        let eq_viol = norm_inf(&pt.c);
        let max_violation = eq_viol.max(ineq_viol);
        let kkt = stationarity.max(complementarity).max(max_violation);
        let outcome = |pt: &Point, status, iterations| SqpOutcome {
            x: pt.x.clone(),
            objective: pt.f,
            status,
            iterations,
            kkt_residual: kkt,
            stationarity,
            max_violation,
            eq_multipliers: lam.clone(),
        };
        if stationarity <= cfg.tol && complementarity <= cfg.tol && max_violation <= cfg.feas_tol {
            return Ok(outcome(&pt, FitStatus::Converged, iter));
        }

        let zp = z * pz;
        let p: Vec<f64> = (0..n).map(|k| tau * py[k] + zp[k]).collect();
        let dir: f64 = pt.g.iter().zip(&p).map(|(a, b)| a * b).sum();
        let quad = pz.dot(&(&b * pz));
        // curvature of the objective along the full step, which the reduced
        // Hessian does not see
        let curvature = {
            let xp: Vec<f64> = (0..n).map(|k| pt.x[k] + p[k]).collect();
            let mut gp = vec![0.0; n];
            nlp.gradient(&xp, &mut gp);
            let v: f64 = (0..n).map(|k| (gp[k] - pt.g[k]) * p[k]).sum();
            if v.is_finite() { v.max(0.0) } else { 0.0 }
        };
        let viol_sum: f64 = resid.iter().map(|r| (-r).max(0.0)).sum();
        let infeas = norm1(&pt.c) + viol_sum;
        let reduction = tau * norm1(&pt.c) + viol_sum;
        let mut rho_need = norm_inf(&lam).max(qp.mu.amax());
        // the ratio rule is meaningless once the constraints hold to tolerance
        if max_violation > cfg.feas_tol && reduction > 0.0 {
            rho_need = rho_need.max((dir + 0.5 * quad.max(curvature)) / (0.5 * reduction));
        }
        if rho < rho_need {
            rho = 1.5 * rho_need + 1e-12;
        }
        let phi0 = pt.f + rho * infeas;
        let slope = dir - rho * reduction;
        let merit = |x: &[f64], f: f64, c: &[f64]| f + rho * (norm1(c) + ineq_violation(ineqs, x));

        let step_size = norm_inf(&p);
        if step_size <= 1e-15 * (1.0 + norm_inf(&pt.x)) {
            // nothing left to do, but the KKT test failed
            last = Some(outcome(&pt, FitStatus::LineSearchFail, iter));
            break;
        }

        let mut t = 1.0;
        let mut accepted: Option<(Point, f64)> = None;
        for _ in 0..cfg.max_backtracks {
            let xt: Vec<f64> = (0..n).map(|k| pt.x[k] + t * p[k]).collect();
            let mut trial = evaluate(nlp, xt);
            let mut phi_t = merit(&trial.x, trial.f, &trial.c);
            let target = phi0 + cfg.armijo * t * slope;
            let uncorrected = trial.x.clone();
            // second-order corrections: range-space steps back onto the
            // constraints with the Jacobian of the current point
            for _ in 0..cfg.max_corrections {
                if phi_t <= target || !trial.c.iter().all(|v| v.is_finite()) {
                    break;
                }
                let Ok(corr) = lin.particular(&trial.c) else { break };
                let xs: Vec<f64> = (0..n).map(|k| trial.x[k] + corr[k]).collect();
                if ineq_violation(ineqs, &xs) > ineq_violation(ineqs, &trial.x) {
                    break;
                }
                let soc = evaluate(nlp, xs);
                let phi_s = merit(&soc.x, soc.f, &soc.c);
                if !(phi_s < phi_t) {
                    break;
                }
                trial = soc;
                phi_t = phi_s;
            }
            if !(phi_t <= target) {
                if let Some(xr) = nlp.restore(&uncorrected) {
                    if ineq_violation(ineqs, &xr) <= ineq_violation(ineqs, &uncorrected) {
                        let rest = evaluate(nlp, xr);
                        let phi_r = merit(&rest.x, rest.f, &rest.c);
                        if phi_r < phi_t {
                            trial = rest;
                            phi_t = phi_r;
                        }
                    }
                }
            }
            if phi_t.is_finite() && phi_t <= target {
                accepted = Some((trial, t));
                break;
            }
            t *= 0.5;
        }
        let Some((next, t)) = accepted else {
            last = Some(outcome(&pt, FitStatus::LineSearchFail, iter));
            break;
        };
        if next.g.iter().chain(&next.c).any(|v| !v.is_finite()) {
            last = Some(outcome(&pt, FitStatus::LineSearchFail, iter));
            break;
        }

        let new_lin = nlp.linearize(&next.x)?;
        if exact.is_some() {
            shift *= if t == 1.0 { 0.25 } else { 4.0 };
            pt = next;
            lin = new_lin;
            last = None;
            continue;
        }
        let sz = t * pz;
        // the reduced curvature pair is only meaningful when the tangential
        // move is not swamped by the normal step
        let tangential = t * zp.norm();
        let normal = tau * py.iter().map(|v| v * v).sum::<f64>().sqrt();
        if tangential > 1e-12 * (1.0 + norm_inf(&pt.x)) && tangential >= normal {
            // change of the Lagrangian gradient, projected with the old basis
            let at_new = new_lin.jac_t_mul(&lam);
            let at_old = lin.jac_t_mul(&lam);
            let dl: Vec<f64> = (0..n)
                .map(|k| next.g[k] + at_new[k] - pt.g[k] - at_old[k])
                .collect();
            let yz = z.tr_mul(&DVector::from_column_slice(&dl));
            let sy = sz.dot(&yz);
            if first_update && sy > 0.0 {
                let scale = yz.dot(&yz) / sy;
                if scale.is_finite() && scale > 0.0 {
                    b = DMatrix::identity(nz, nz) * scale;
                }
                first_update = false;
            }
            damped_bfgs_update(&mut b, &sz, &yz);
        }
        pt = next;
        lin = new_lin;
        last = None;
    }
    if let Some(out) = last {
        return Ok(out);
    }
    // budget exhausted: report the final point
    let g = &pt.g;
    let gz = lin.null_basis().tr_mul(&DVector::from_column_slice(g));
    let viol = norm_inf(&pt.c).max(
        ineqs
            .iter()
            .map(|q| (-q.value(&pt.x)).max(0.0))
            .fold(0.0, f64::max),
    );
    Ok(SqpOutcome {
        eq_multipliers: lin.multipliers(g)?,
        objective: pt.f,
        status: FitStatus::MaxIter,
        iterations: cfg.max_iter,
        kkt_residual: gz.amax().max(viol),
        stationarity: gz.amax(),
        max_violation: viol,
        x: pt.x,
    })
}

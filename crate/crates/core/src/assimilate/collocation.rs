//! Direct collocation of the IR model on the weekly data grid.
//!
//! Every node state and both Gauss–Legendre stage values of every interval
//! are decision variables next to the forcing parameters. The defect
//! Jacobian is block lower bidiagonal in time, so the dependent variables
//! (stages and nodes after the first) are eliminated by forward sweeps and
//! the multipliers by a backward sweep. The independent variables are the
//! parameters and the initial state.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sqp::{EqLinearization, LinearIneq, Nlp};
use crate::error::{Error, Result};
use crate::integrate::{GL2_A, GL2_B, GL2_C};
use crate::linalg::Lu;
use crate::model::{basic_reproduction_number, ir_jacobian_with_beta, IrParams};
use crate::timeseries::{Cadence, IncidenceSeries};

/// Frequency of the dominant peak of the weekly training data.
pub const DEFAULT_OMEGA_STAR: f64 = 0.017822;
pub const DEFAULT_EPSILON: f64 = 1e-2;
pub const DEFAULT_LAMBDA_S3: f64 = 1e4;
pub const DEFAULT_LAMBDA_S4: f64 = 10.0;
/// Lower bound keeping `I + nu N` away from zero.
pub const NU_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    S1,
    S2,
    S3,
    S4,
    #[serde(rename = "MF")]
    Mf,
}

impl SchemeId {
    pub const SINGLE: [SchemeId; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::S1 => "1",
            Self::S2 => "2",
            Self::S3 => "3",
            Self::S4 => "4",
            Self::Mf => "mf",
        }
    }

    pub fn has_box(self) -> bool {
        matches!(self, Self::S2 | Self::S4 | Self::Mf)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "s1" => Ok(Self::S1),
            "2" | "s2" => Ok(Self::S2),
            "3" | "s3" => Ok(Self::S3),
            "4" | "s4" => Ok(Self::S4),
            "mf" => Ok(Self::Mf),
            other => Err(Error::invalid("scheme", format!("unknown scheme '{other}'"))),
        }
    }
}

/// Variant of the fitting problem: regularization weight, frequency box
/// and positivity of the initial recovered compartment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub id: SchemeId,
    pub lambda: f64,
    /// Half-width of the frequency box, 1/weeks.
    pub epsilon: f64,
    pub omega_star: Vec<f64>,
    pub m: usize,
    pub enforce_r0_positivity: bool,
}

impl SchemeSpec {
    /// Default settings of a single-harmonic scheme around `omega_star`.
    pub fn single(id: SchemeId, omega_star: f64) -> Self {
        let lambda = match id {
            SchemeId::S3 => DEFAULT_LAMBDA_S3,
            SchemeId::S4 => DEFAULT_LAMBDA_S4,
            _ => 0.0,
        };
        Self {
            id,
            lambda,
            epsilon: if id.has_box() { DEFAULT_EPSILON } else { 0.0 },
            omega_star: vec![omega_star],
            m: 1,
            enforce_r0_positivity: false,
        }
    }

    pub fn multi_frequency(omega_star: Vec<f64>, epsilon: f64) -> Self {
        Self {
            id: SchemeId::Mf,
            lambda: 0.0,
            epsilon,
            m: omega_star.len(),
            omega_star,
            enforce_r0_positivity: false,
        }
    }

    pub fn with_positivity(mut self, on: bool) -> Self {
        self.enforce_r0_positivity = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InconsistentScheme(msg));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda = {} must be >= 0", self.lambda));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon = {} must be >= 0", self.epsilon));
        }
        if matches!(self.id, SchemeId::S1 | SchemeId::S2) && self.lambda != 0.0 {
            return bad(format!("scheme {} has no regularization", self.id));
        }
        if self.id.has_box() && self.epsilon <= 0.0 {
            return bad(format!("scheme {} needs epsilon > 0", self.id));
        }
        if self.m == 0 || self.omega_star.len() != self.m {
            return bad(format!(
                "{} target frequencies for m = {}",
                self.omega_star.len(),
                self.m
            ));
        }
        if self.id != SchemeId::Mf && self.m != 1 {
            return bad(format!("scheme {} has a single harmonic", self.id));
        }
        if self.omega_star.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("target frequencies must be positive".into());
        }
        Ok(())
    }
}

/// Host constants held fixed during the fit (everything but `nu`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub population: f64,
    pub mu: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl FixedParams {
    pub fn new(population: f64, mu: f64, gamma: f64, kappa: f64) -> Result<Self> {
        let out = Self {
            population,
            mu,
            gamma,
            kappa,
        };
        out.with_nu(1.0)?;
        Ok(out)
    }

    pub fn with_nu(&self, nu: f64) -> Result<IrParams> {
        IrParams::new(self.population, self.mu, self.gamma, self.kappa, nu)
    }

    fn unchecked(&self, nu: f64) -> IrParams {
        IrParams {
            population: self.population,
            mu: self.mu,
            gamma: self.gamma,
            kappa: self.kappa,
            nu,
        }
    }
}

impl From<IrParams> for FixedParams {
    fn from(p: IrParams) -> Self {
        Self {
            population: p.population,
            mu: p.mu,
            gamma: p.gamma,
            kappa: p.kappa,
        }
    }
}

/// Index map of the flat decision vector:
/// `[alpha, delta_1..m, omega_1..m, nu, (s_1..m), I0, R0, per interval
/// (X1_I, X1_R, X2_I, X2_R, I_{k+1}, R_{k+1})]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub m: usize,
    pub slacks: bool,
    pub intervals: usize,
}

impl Layout {
    pub const ALPHA: usize = 0;

    pub fn delta(&self, j: usize) -> usize {
        1 + j
    }

    pub fn omega(&self, j: usize) -> usize {
        1 + self.m + j
    }

    pub fn nu(&self) -> usize {
        1 + 2 * self.m
    }

    pub fn slack(&self, j: usize) -> usize {
        2 + 2 * self.m + j
    }

    /// Forcing parameters plus slacks.
    pub fn n_params(&self) -> usize {
        2 + 2 * self.m + if self.slacks { self.m } else { 0 }
    }

    /// Component `c` of node `k`.
    pub fn node(&self, k: usize, c: usize) -> usize {
        if k == 0 {
            self.n_params() + c
        } else {
            self.n_params() + 2 + 6 * (k - 1) + 4 + c
        }
    }

    /// Component `c` of stage `s` of interval `k`.
    pub fn stage(&self, k: usize, s: usize, c: usize) -> usize {
        self.n_params() + 2 + 6 * k + 2 * s + c
    }

    /// Parameters and initial state.
    pub fn n_independent(&self) -> usize {
        self.n_params() + 2
    }

    pub fn n_vars(&self) -> usize {
        self.n_independent() + 6 * self.intervals
    }

    pub fn n_eq(&self) -> usize {
        6 * self.intervals
    }
}

/// Structured view of a decision vector in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub alpha: f64,
    pub deltas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub nu: f64,
    /// Bounds on `|delta_j|` (multi-frequency scheme only).
    pub slacks: Vec<f64>,
    /// Node states `(I_k, R_k)`, `k = 0..=K`; the first is `(I0, R0)`.
    pub states: Vec<[f64; 2]>,
    /// Stage values `(X1_I, X1_R, X2_I, X2_R)` of each interval.
    pub stages: Vec<[f64; 4]>,
}

impl DecisionVector {
    pub fn i0(&self) -> f64 {
        self.states[0][0]
    }

    pub fn r0_init(&self) -> f64 {
        self.states[0][1]
    }

    pub fn layout(&self) -> Layout {
        Layout {
            m: self.deltas.len(),
            slacks: !self.slacks.is_empty(),
            intervals: self.stages.len(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let lay = self.layout();
        let mut x = vec![0.0; lay.n_vars()];
        x[Layout::ALPHA] = self.alpha;
        for j in 0..lay.m {
            x[lay.delta(j)] = self.deltas[j];
            x[lay.omega(j)] = self.omegas[j];
            if lay.slacks {
                x[lay.slack(j)] = self.slacks[j];
            }
        }
        x[lay.nu()] = self.nu;
        for (k, s) in self.states.iter().enumerate() {
            x[lay.node(k, 0)] = s[0];
            x[lay.node(k, 1)] = s[1];
        }
        for (k, st) in self.stages.iter().enumerate() {
            for (c, v) in st.iter().enumerate() {
                x[lay.stage(k, c / 2, c % 2)] = *v;
            }
        }
        x
    }

    pub fn from_flat(lay: &Layout, x: &[f64]) -> Self {
        Self {
            alpha: x[Layout::ALPHA],
            deltas: (0..lay.m).map(|j| x[lay.delta(j)]).collect(),
            omegas: (0..lay.m).map(|j| x[lay.omega(j)]).collect(),
            nu: x[lay.nu()],
            slacks: if lay.slacks {
                (0..lay.m).map(|j| x[lay.slack(j)]).collect()
            } else {
                Vec::new()
            },
            states: (0..=lay.intervals)
                .map(|k| [x[lay.node(k, 0)], x[lay.node(k, 1)]])
                .collect(),
            stages: (0..lay.intervals)
                .map(|k| {
                    [
                        x[lay.stage(k, 0, 0)],
                        x[lay.stage(k, 0, 1)],
                        x[lay.stage(k, 1, 0)],
                        x[lay.stage(k, 1, 1)],
                    ]
                })
                .collect(),
        }
    }

    pub fn infective(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[0]).collect()
    }

    pub fn recovered(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[1]).collect()
    }
}

/// The transcribed fitting problem.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    scheme: SchemeSpec,
    fixed: FixedParams,
    data: Vec<f64>,
    weights: Vec<f64>,
    layout: Layout,
    h: f64,
    ineqs: Vec<LinearIneq>,
}

/// Transcribes the fit of `scheme` to the weekly training series.
pub fn transcribe(scheme: &SchemeSpec, train: &IncidenceSeries, fixed: FixedParams) -> Result<NlpProblem> {
    scheme.validate()?;
    if train.cadence() != Cadence::Weekly {
        return Err(Error::WrongCadence {
            expected: "weekly",
            got: train.cadence().as_str(),
        });
    }
    if train.len() < 8 {
        return Err(Error::TooShort {
            needed: 8,
            got: train.len(),
        });
    }
    NlpProblem::new(scheme.clone(), fixed, train.counts())
}

impl NlpProblem {
    /// Problem on data sampled every week starting at `t = 0`.
    pub fn new(scheme: SchemeSpec, fixed: FixedParams, data: Vec<f64>) -> Result<Self> {
        scheme.validate()?;
        if data.len() < 2 || data.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("data", "need at least two finite values"));
        }
        let h = 1.0;
        let intervals = data.len() - 1;
        let mut weights = vec![h; data.len()];
        weights[0] = 0.5 * h;
        weights[intervals] = 0.5 * h;
        let layout = Layout {
            m: scheme.m,
            slacks: scheme.id == SchemeId::Mf,
            intervals,
        };
        let ineqs = build_inequalities(&scheme, &layout);
        Ok(Self {
            scheme,
            fixed,
            data,
            weights,
            layout,
            h,
            ineqs,
        })
    }

    pub fn scheme(&self) -> &SchemeSpec {
        &self.scheme
    }

    pub fn fixed(&self) -> &FixedParams {
        &self.fixed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn n_eq(&self) -> usize {
        self.layout.n_eq()
    }

    /// Linear inequalities in physical variables.
    pub fn inequalities(&self) -> &[LinearIneq] {
        &self.ineqs
    }

    /// Trapezoidal `sum_k w_k (I_k - d_k)^2`.
    pub fn sse(&self, x: &[f64]) -> f64 {
        (0..self.data.len())
            .map(|k| self.weights[k] * (x[self.layout.node(k, 0)] - self.data[k]).powi(2))
            .sum()
    }

    /// Indices of `(alpha, delta, omega, nu)`, contiguous in the layout.
    fn penalized(&self) -> std::ops::RangeInclusive<usize> {
        Layout::ALPHA..=self.layout.nu()
    }

    /// Objective on the flat physical vector.
    pub fn objective_flat(&self, x: &[f64]) -> f64 {
        let reg: f64 = x[self.penalized()].iter().map(|v| v * v).sum();
        0.5 * self.sse(x) + 0.5 * self.scheme.lambda * reg
    }

    pub fn gradient_flat(&self, x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        for k in 0..self.data.len() {
            let i = self.layout.node(k, 0);
            g[i] = self.weights[k] * (x[i] - self.data[k]);
        }
        if self.scheme.lambda != 0.0 {
            for i in self.penalized() {
                g[i] += self.scheme.lambda * x[i];
            }
        }
    }

    fn dynamics<'a>(&'a self, x: &'a [f64]) -> Dynamics<'a> {
        let lay = &self.layout;
        Dynamics {
            alpha: x[Layout::ALPHA],
            deltas: &x[lay.delta(0)..lay.delta(0) + lay.m],
            omegas: &x[lay.omega(0)..lay.omega(0) + lay.m],
            params: self.fixed.unchecked(x[lay.nu()]),
        }
    }

    /// Collocation defects: per interval the two stage equations and the
    /// continuity equation, each for `(I, R)`.
    pub fn defects(&self, x: &[f64], c: &mut [f64]) {
        let lay = &self.layout;
        let dy = self.dynamics(x);
        let h = self.h;
        for k in 0..lay.intervals {
            let t = k as f64 * h;
            let xk = [x[lay.node(k, 0)], x[lay.node(k, 1)]];
            let xn = [x[lay.node(k + 1, 0)], x[lay.node(k + 1, 1)]];
            let st = [
                [x[lay.stage(k, 0, 0)], x[lay.stage(k, 0, 1)]],
                [x[lay.stage(k, 1, 0)], x[lay.stage(k, 1, 1)]],
            ];
            let f = [dy.rhs(t + GL2_C[0] * h, st[0]), dy.rhs(t + GL2_C[1] * h, st[1])];
            let row = &mut c[6 * k..6 * k + 6];
            for comp in 0..2 {
                for s in 0..2 {
                    row[2 * s + comp] = st[s][comp]
                        - xk[comp]
                        - h * (GL2_A[s][0] * f[0][comp] + GL2_A[s][1] * f[1][comp]);
                }
                row[4 + comp] =
                    xn[comp] - xk[comp] - h * (GL2_B[0] * f[0][comp] + GL2_B[1] * f[1][comp]);
            }
        }
    }

    /// Solves the collocation equations interval by interval for fixed
    /// parameters and initial state, starting Newton from the stage values
    /// in `x`. Returns `None` when a stage solve fails.
    pub fn restore(&self, x: &[f64]) -> Option<Vec<f64>> {
        let lay = &self.layout;
        let dy = self.dynamics(x);
        let h = self.h;
        let mut out = x.to_vec();
        let mut m = [0.0; 16];
        let mut lu = Lu::with_size(4);
        for k in 0..lay.intervals {
            let t = k as f64 * h;
            let xk = [out[lay.node(k, 0)], out[lay.node(k, 1)]];
            let ts = [t + GL2_C[0] * h, t + GL2_C[1] * h];
            let mut st = [
                [out[lay.stage(k, 0, 0)], out[lay.stage(k, 0, 1)]],
                [out[lay.stage(k, 1, 0)], out[lay.stage(k, 1, 1)]],
            ];
            let mut converged = false;
            for _ in 0..30 {
                let f = [dy.rhs(ts[0], st[0]), dy.rhs(ts[1], st[1])];
                let jac = [dy.jac(ts[0], st[0]), dy.jac(ts[1], st[1])];
                let mut r = [0.0; 4];
                for s in 0..2 {
                    for c in 0..2 {
                        r[2 * s + c] = -(st[s][c]
                            - xk[c]
                            - h * (GL2_A[s][0] * f[0][c] + GL2_A[s][1] * f[1][c]));
                    }
                }
                for s in 0..2 {
                    for q in 0..2 {
                        for a in 0..2 {
                            for b in 0..2 {
                                let id = if s == q && a == b { 1.0 } else { 0.0 };
                                m[(2 * s + a) * 4 + 2 * q + b] = id - h * GL2_A[s][q] * jac[q][a][b];
                            }
                        }
                    }
                }
                if lu.refactor(&m).is_err() {
                    return None;
                }
                lu.solve(&mut r);
                let mut size = 0.0f64;
                for s in 0..2 {
                    for c in 0..2 {
                        st[s][c] += r[2 * s + c];
                        size = size.max(r[2 * s + c].abs() / (1.0 + st[s][c].abs()));
                    }
                }
                if !size.is_finite() {
                    return None;
                }
                if size <= 1e-14 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return None;
            }
            let f = [dy.rhs(ts[0], st[0]), dy.rhs(ts[1], st[1])];
            for s in 0..2 {
                for c in 0..2 {
                    out[lay.stage(k, s, c)] = st[s][c];
                }
            }
            for c in 0..2 {
                out[lay.node(k + 1, c)] = xk[c] + h * (GL2_B[0] * f[0][c] + GL2_B[1] * f[1][c]);
            }
        }
        Some(out)
    }

    /// Largest absolute collocation defect.
    pub fn max_defect(&self, x: &[f64]) -> f64 {
        let mut c = vec![0.0; self.n_eq()];
        self.defects(x, &mut c);
        c.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    /// Largest violation of the linear inequalities.
    pub fn max_ineq_violation(&self, x: &[f64]) -> f64 {
        self.ineqs
            .iter()
            .fold(0.0f64, |a, q| a.max(-q.value(x)))
    }

    pub fn r0(&self, x: &[f64]) -> f64 {
        basic_reproduction_number(
            x[Layout::ALPHA],
            self.fixed.gamma,
            self.fixed.mu,
            x[self.layout.nu()],
        )
    }

    /// Decision vector with the given parameters whose infective states
    /// follow the data, recovered states solve the linear `R` equation
    /// driven by the data from `r0_init`, and stages interpolate the nodes.
    pub fn guess(
        &self,
        alpha: f64,
        deltas: &[f64],
        omegas: &[f64],
        nu: f64,
        r0_init: f64,
    ) -> DecisionVector {
        let lay = &self.layout;
        let decay = self.fixed.mu + self.fixed.kappa;
        let h = self.h;
        let mut states = Vec::with_capacity(self.data.len());
        let mut r = r0_init;
        for (k, &d) in self.data.iter().enumerate() {
            if k > 0 {
                // trapezoidal step of R' = gamma I - (mu + kappa) R
                let src = 0.5 * h * self.fixed.gamma * (self.data[k - 1] + d);
                r = (r * (1.0 - 0.5 * h * decay) + src) / (1.0 + 0.5 * h * decay);
            }
            states.push([d.max(0.0), r]);
        }
        let stages = (0..lay.intervals)
            .map(|k| {
                let (a, b) = (states[k], states[k + 1]);
                let at = |c: f64| [a[0] + c * (b[0] - a[0]), a[1] + c * (b[1] - a[1])];
                let (x1, x2) = (at(GL2_C[0]), at(GL2_C[1]));
                [x1[0], x1[1], x2[0], x2[1]]
            })
            .collect();
        DecisionVector {
            alpha,
            deltas: deltas.to_vec(),
            omegas: omegas.to_vec(),
            nu,
            slacks: if lay.slacks {
                deltas.iter().map(|d| d.abs()).collect()
            } else {
                Vec::new()
            },
            states,
            stages,
        }
    }

    /// Nearest point satisfying the parameter and sign constraints: `alpha`
    /// and `nu` floored, `delta` clipped into the amplitude bound, `omega`
    /// into its box and the states to nonnegative values where required.
    pub fn project(&self, z: &DecisionVector) -> Result<DecisionVector> {
        let lay = &self.layout;
        if z.deltas.len() != lay.m || z.stages.len() != lay.intervals {
            return Err(Error::invalid(
                "decision",
                "dimensions do not match the problem",
            ));
        }
        let mut out = z.clone();
        out.alpha = out.alpha.max(0.0);
        out.nu = out.nu.max(10.0 * NU_FLOOR);
        let cap = out.alpha / lay.m as f64;
        for j in 0..lay.m {
            let bound = if lay.slacks { cap } else { out.alpha };
            out.deltas[j] = out.deltas[j].clamp(-bound, bound);
            if self.scheme.id.has_box() {
                let w = self.scheme.omega_star[j];
                out.omegas[j] = out.omegas[j].clamp(w - self.scheme.epsilon, w + self.scheme.epsilon);
            }
        }
        out.slacks = if lay.slacks {
            out.deltas.iter().map(|d| d.abs()).collect()
        } else {
            Vec::new()
        };
        for s in &mut out.states {
            s[0] = s[0].max(0.0);
        }
        if self.scheme.enforce_r0_positivity {
            out.states[0][1] = out.states[0][1].max(0.0);
        }
        Ok(out)
    }
}

/// Objective `1/2 trapezoid(I - data)^2 + lambda/2 |(alpha, delta, omega, nu)|^2`.
pub fn objective_eval(problem: &NlpProblem, z: &DecisionVector) -> f64 {
    problem.objective_flat(&z.to_flat())
}

fn build_inequalities(scheme: &SchemeSpec, lay: &Layout) -> Vec<LinearIneq> {
    let mut rows = vec![
        LinearIneq::new(&[(Layout::ALPHA, 1.0)], 0.0),
        LinearIneq::new(&[(lay.nu(), 1.0)], -NU_FLOOR),
    ];
    if lay.slacks {
        for j in 0..lay.m {
            rows.push(LinearIneq::new(&[(lay.slack(j), 1.0), (lay.delta(j), -1.0)], 0.0));
            rows.push(LinearIneq::new(&[(lay.slack(j), 1.0), (lay.delta(j), 1.0)], 0.0));
        }
        let mut terms = vec![(Layout::ALPHA, 1.0)];
        terms.extend((0..lay.m).map(|j| (lay.slack(j), -1.0)));
        rows.push(LinearIneq::new(&terms, 0.0));
    } else {
        rows.push(LinearIneq::new(&[(Layout::ALPHA, 1.0), (lay.delta(0), -1.0)], 0.0));
        rows.push(LinearIneq::new(&[(Layout::ALPHA, 1.0), (lay.delta(0), 1.0)], 0.0));
    }
    if scheme.id.has_box() {
        for j in 0..lay.m {
            let w = scheme.omega_star[j];
            rows.push(LinearIneq::new(&[(lay.omega(j), 1.0)], -(w - scheme.epsilon)));
            rows.push(LinearIneq::new(&[(lay.omega(j), -1.0)], w + scheme.epsilon));
        }
    }
    for k in 0..=lay.intervals {
        rows.push(LinearIneq::new(&[(lay.node(k, 0), 1.0)], 0.0));
    }
    if scheme.enforce_r0_positivity {
        rows.push(LinearIneq::new(&[(lay.node(0, 1), 1.0)], 0.0));
    }
    rows
}

/// The forced IR right-hand side with parameters read from a decision vector.
struct Dynamics<'a> {
    alpha: f64,
    deltas: &'a [f64],
    omegas: &'a [f64],
    params: IrParams,
}

impl Dynamics<'_> {
    fn beta(&self, t: f64) -> f64 {
        self.alpha
            + self
                .deltas
                .iter()
                .zip(self.omegas)
                .map(|(d, w)| d * (2.0 * PI * w * t).cos())
                .sum::<f64>()
    }

    fn rhs(&self, t: f64, s: [f64; 2]) -> [f64; 2] {
        crate::model::ir_rhs_with_beta(&self.params, self.beta(t), s)
    }

    fn jac(&self, t: f64, s: [f64; 2]) -> [[f64; 2]; 2] {
        ir_jacobian_with_beta(&self.params, self.beta(t), s)
    }

    /// Derivatives of the `I` equation with respect to `(alpha, delta,
    /// omega, nu)` in layout order; the `R` equation does not depend on them.
    fn dparams(&self, lay: &Layout, t: f64, s: [f64; 2], out: &mut [f64]) {
        out.fill(0.0);
        let n = self.params.population;
        let denom = s[0] + self.params.nu * n;
        let q = (n - s[0] - s[1]) * s[0] / denom;
        out[Layout::ALPHA] = q;
        for j in 0..lay.m {
            let arg = 2.0 * PI * self.omegas[j] * t;
            out[lay.delta(j)] = arg.cos() * q;
            out[lay.omega(j)] = -self.deltas[j] * 2.0 * PI * t * arg.sin() * q;
        }
        out[lay.nu()] = -self.beta(t) * q * n / denom;
    }
}

/// The transcribed problem in scaled variables `u = x / scale`, ready for
/// [`super::sqp::sqp_solve`]. The objective is divided by the data energy;
/// defects stay in physical units.
pub struct CollocationNlp<'a> {
    problem: &'a NlpProblem,
    scale: Vec<f64>,
    f_scale: f64,
    ineqs: Vec<LinearIneq>,
}

impl<'a> CollocationNlp<'a> {
    /// Scaling taken from the start point `z0`.
    pub fn new(problem: &'a NlpProblem, z0: &DecisionVector) -> Self {
        let lay = problem.layout;
        let x0 = z0.to_flat();
        let s_alpha = x0[Layout::ALPHA].abs().max(1e-12);
        let s_nu = x0[lay.nu()].abs().max(1e-12);
        let horizon = (lay.intervals as f64 * problem.h).max(1.0);
        let s_omega = 1.0 / (2.0 * PI * horizon);
        let s_i = problem.data.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        let s_r = z0
            .states
            .iter()
            .fold(s_i, |a, s| a.max(s[1].abs()));
        let mut scale = vec![1.0; lay.n_vars()];
        scale[Layout::ALPHA] = s_alpha;
        scale[lay.nu()] = s_nu;
        for j in 0..lay.m {
            scale[lay.delta(j)] = s_alpha;
            scale[lay.omega(j)] = s_omega;
            if lay.slacks {
                scale[lay.slack(j)] = s_alpha;
            }
        }
        for k in 0..=lay.intervals {
            scale[lay.node(k, 0)] = s_i;
            scale[lay.node(k, 1)] = s_r;
        }
        for k in 0..lay.intervals {
            for s in 0..2 {
                scale[lay.stage(k, s, 0)] = s_i;
                scale[lay.stage(k, s, 1)] = s_r;
            }
        }
        let energy: f64 = 0.5
            * problem
                .data
                .iter()
                .zip(&problem.weights)
                .map(|(d, w)| w * d * d)
                .sum::<f64>();
        let ineqs = problem
            .ineqs
            .iter()
            .map(|q| {
                let coef: Vec<f64> = q.idx.iter().zip(&q.coef).map(|(&i, &a)| a * scale[i]).collect();
                let norm = coef.iter().map(|a| a * a).sum::<f64>().sqrt();
                LinearIneq {
                    idx: q.idx.clone(),
                    coef: coef.iter().map(|a| a / norm).collect(),
                    offset: q.offset / norm,
                }
            })
            .collect();
        Self {
            problem,
            scale,
            f_scale: energy.max(1.0),
            ineqs,
        }
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scale).map(|(a, s)| a / s).collect()
    }

    pub fn to_physical(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.scale).map(|(a, s)| a * s).collect()
    }

    /// Objective value of the scaled problem corresponding to a physical one.
    pub fn objective_scale(&self) -> f64 {
        self.f_scale
    }
}

impl Nlp for CollocationNlp<'_> {
    fn n_vars(&self) -> usize {
        self.problem.n_vars()
    }

    fn n_eq(&self) -> usize {
        self.problem.n_eq()
    }

    fn objective(&self, u: &[f64]) -> f64 {
        self.problem.objective_flat(&self.to_physical(u)) / self.f_scale
    }

    fn gradient(&self, u: &[f64], g: &mut [f64]) {
        self.problem.gradient_flat(&self.to_physical(u), g);
        for (gi, s) in g.iter_mut().zip(&self.scale) {
            *gi *= s / self.f_scale;
        }
    }

    fn eq_constraints(&self, u: &[f64], c: &mut [f64]) {
        self.problem.defects(&self.to_physical(u), c);
    }

    fn inequalities(&self) -> &[LinearIneq] {
        &self.ineqs
    }

    fn objective_hessian_diag(&self, _u: &[f64]) -> Option<Vec<f64>> {
        let prob = self.problem;
        let mut h = vec![0.0; prob.n_vars()];
        for k in 0..prob.data.len() {
            h[prob.layout.node(k, 0)] = prob.weights[k];
        }
        if prob.scheme.lambda != 0.0 {
            for i in prob.penalized() {
                h[i] += prob.scheme.lambda;
            }
        }
        for (hi, s) in h.iter_mut().zip(&self.scale) {
            *hi *= s * s / self.f_scale;
        }
        Some(h)
    }

    fn restore(&self, u: &[f64]) -> Option<Vec<f64>> {
        let x = self.problem.restore(&self.to_physical(u))?;
        Some(self.to_scaled(&x))
    }

    fn linearize(&self, u: &[f64]) -> Result<Box<dyn EqLinearization + '_>> {
        Ok(Box::new(CollocationLinearization::new(self, u)?))
    }
}

/// Per-interval derivative blocks. With `w_k = (X1, X2, x_{k+1})` the
/// defect Jacobian of interval `k` is `[[M, 0], [-h b J, I]]` in `w_k`,
/// `-[I; I; I]` in `x_k` and `-h [A P; b P]` in the parameters.
struct Block {
    m: [f64; 16],
    m_lu: Lu,
    /// `h b_s J_s` as a 2x4 row-major matrix.
    hbj: [[f64; 4]; 2],
    /// `h sum_r a_sr P_r` for each stage and `h sum_r b_r P_r`: rows of the
    /// (nonzero) `I` component of `d f / d p`.
    hp: [Vec<f64>; 3],
}

struct CollocationLinearization<'a> {
    nlp: &'a CollocationNlp<'a>,
    blocks: Vec<Block>,
    z: DMatrix<f64>,
}

impl<'a> CollocationLinearization<'a> {
    fn new(nlp: &'a CollocationNlp<'a>, u: &[f64]) -> Result<Self> {
        let prob = nlp.problem;
        let lay = prob.layout;
        let x = nlp.to_physical(u);
        let dy = prob.dynamics(&x);
        let h = prob.h;
        let np = lay.n_params();
        let mut blocks = Vec::with_capacity(lay.intervals);
        let mut p_stage = [vec![0.0; np], vec![0.0; np]];
        for k in 0..lay.intervals {
            let t = k as f64 * h;
            let mut jac = [[[0.0; 2]; 2]; 2];
            for s in 0..2 {
                let st = [x[lay.stage(k, s, 0)], x[lay.stage(k, s, 1)]];
                let ts = t + GL2_C[s] * h;
                jac[s] = dy.jac(ts, st);
                dy.dparams(&lay, ts, st, &mut p_stage[s]);
            }
            let mut m = [0.0; 16];
            for s in 0..2 {
                for r in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            let delta = if s == r && a == b { 1.0 } else { 0.0 };
                            m[(2 * s + a) * 4 + 2 * r + b] = delta - h * GL2_A[s][r] * jac[r][a][b];
                        }
                    }
                }
            }
            let mut hbj = [[0.0; 4]; 2];
            for a in 0..2 {
                for r in 0..2 {
                    for b in 0..2 {
                        hbj[a][2 * r + b] = h * GL2_B[r] * jac[r][a][b];
                    }
                }
            }
            let comb = |w: [f64; 2]| -> Vec<f64> {
                (0..np)
                    .map(|i| h * (w[0] * p_stage[0][i] + w[1] * p_stage[1][i]))
                    .collect()
            };
            let hp = [comb(GL2_A[0]), comb(GL2_A[1]), comb(GL2_B)];
            if hp.iter().flatten().chain(m.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Singular);
            }
            blocks.push(Block {
                m,
                m_lu: Lu::factor(m.to_vec(), 4)?,
                hbj,
                hp,
            });
        }
        let mut lin = Self {
            nlp,
            blocks,
            z: DMatrix::zeros(0, 0),
        };
        lin.z = lin.null_space();
        Ok(lin)
    }

    /// Forward sweep of `B_k dw_k = rhs_k + [dx; dx; dx] + hp_k dp` with
    /// `dx` the node perturbation; writes physical dependent steps.
    fn sweep(&self, dp: &[f64], dx0: [f64; 2], rhs: Option<&[f64]>, out: &mut [f64]) {
        let lay = &self.nlp.problem.layout;
        let mut dx = dx0;
        for (k, b) in self.blocks.iter().enumerate() {
            let mut r = [0.0; 6];
            for (i, ri) in r.iter_mut().enumerate() {
                *ri = dx[i % 2] + rhs.map_or(0.0, |v| v[6 * k + i]);
            }
            for (s, row) in b.hp.iter().enumerate() {
                let v: f64 = row.iter().zip(dp).map(|(a, b)| a * b).sum();
                r[2 * s] += v;
            }
            let mut stage = [r[0], r[1], r[2], r[3]];
            b.m_lu.solve(&mut stage);
            let next = [
                r[4] + (0..4).map(|j| b.hbj[0][j] * stage[j]).sum::<f64>(),
                r[5] + (0..4).map(|j| b.hbj[1][j] * stage[j]).sum::<f64>(),
            ];
            for s in 0..2 {
                for c in 0..2 {
                    out[lay.stage(k, s, c)] = stage[2 * s + c];
                }
            }
            out[lay.node(k + 1, 0)] = next[0];
            out[lay.node(k + 1, 1)] = next[1];
            dx = next;
        }
    }

    fn null_space(&self) -> DMatrix<f64> {
        let lay = &self.nlp.problem.layout;
        let scale = &self.nlp.scale;
        let (n, nz, np) = (lay.n_vars(), lay.n_independent(), lay.n_params());
        let mut z = DMatrix::zeros(n, nz);
        let mut col = vec![0.0; n];
        for j in 0..nz {
            col.fill(0.0);
            let mut dp = vec![0.0; np];
            let mut dx0 = [0.0; 2];
            if j < np {
                dp[j] = scale[j];
            } else {
                dx0[j - np] = scale[j];
            }
            self.sweep(&dp, dx0, None, &mut col);
            col[j] = 1.0;
            for i in nz..n {
                z[(i, j)] = col[i] / scale[i];
            }
            z[(j, j)] = 1.0;
        }
        z
    }
}

impl EqLinearization for CollocationLinearization<'_> {
    fn null_basis(&self) -> &DMatrix<f64> {
        &self.z
    }

    fn particular(&self, c: &[f64]) -> Result<Vec<f64>> {
        let lay = &self.nlp.problem.layout;
        let n = lay.n_vars();
        let mut out = vec![0.0; n];
        let rhs: Vec<f64> = c.iter().map(|v| -v).collect();
        self.sweep(&vec![0.0; lay.n_params()], [0.0; 2], Some(&rhs), &mut out);
        for i in lay.n_independent()..n {
            out[i] /= self.nlp.scale[i];
        }
        Ok(out)
    }

    fn multipliers(&self, g: &[f64]) -> Result<Vec<f64>> {
        let lay = &self.nlp.problem.layout;
        let scale = &self.nlp.scale;
        let mut lam = vec![0.0; lay.n_eq()];
        // coupling from the next interval into the node x_{k+1}
        let mut carry = [0.0; 2];
        for k in (0..lay.intervals).rev() {
            let b = &self.blocks[k];
            let gw = |s: usize, c: usize| g[lay.stage(k, s, c)] / scale[lay.stage(k, s, c)];
            let cont = [
                -g[lay.node(k + 1, 0)] / scale[lay.node(k + 1, 0)] + carry[0],
                -g[lay.node(k + 1, 1)] / scale[lay.node(k + 1, 1)] + carry[1],
            ];
            let mut stage = [0.0; 4];
            for j in 0..4 {
                stage[j] = -gw(j / 2, j % 2) + b.hbj[0][j] * cont[0] + b.hbj[1][j] * cont[1];
            }
            b.m_lu.solve_transpose(&mut stage);
            let row = &mut lam[6 * k..6 * k + 6];
            row[..4].copy_from_slice(&stage);
            row[4..].copy_from_slice(&cont);
            carry = [
                stage[0] + stage[2] + cont[0],
                stage[1] + stage[3] + cont[1],
            ];
        }
        Ok(lam)
    }

    fn jac_t_mul(&self, lambda: &[f64]) -> Vec<f64> {
        let lay = &self.nlp.problem.layout;
        let scale = &self.nlp.scale;
        let np = lay.n_params();
        let mut out = vec![0.0; lay.n_vars()];
        for (k, b) in self.blocks.iter().enumerate() {
            let l = &lambda[6 * k..6 * k + 6];
            // stage columns: M' l_stage - (h b J)' l_cont
            for j in 0..4 {
                let mtl: f64 = (0..4).map(|i| b.m[i * 4 + j] * l[i]).sum();
                out[lay.stage(k, j / 2, j % 2)] +=
                    mtl - b.hbj[0][j] * l[4] - b.hbj[1][j] * l[5];
            }
            out[lay.node(k + 1, 0)] += l[4];
            out[lay.node(k + 1, 1)] += l[5];
            out[lay.node(k, 0)] -= l[0] + l[2] + l[4];
            out[lay.node(k, 1)] -= l[1] + l[3] + l[5];
            for i in 0..np {
                out[i] -= b.hp[0][i] * l[0] + b.hp[1][i] * l[2] + b.hp[2][i] * l[4];
            }
        }
        for (o, s) in out.iter_mut().zip(scale) {
            *o *= s;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::Provenance;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn fixed() -> FixedParams {
        FixedParams::new(1e5, 1.0 / 3120.0, 0.25, 1.0 / 52.0).unwrap()
    }

    fn weekly(counts: &[f64]) -> IncidenceSeries {
        IncidenceSeries::from_counts(Cadence::Weekly, Provenance::Synthetic, 0, counts).unwrap()
    }

    fn bumpy(n: usize) -> Vec<f64> {
        (0..n).map(|k| 50.0 + 20.0 * (k as f64 * 0.7).sin()).collect()
    }

    fn problem(id: SchemeId, n: usize) -> NlpProblem {
        let mut spec = SchemeSpec::single(id, 0.05);
        if id == SchemeId::Mf {
            spec = SchemeSpec::multi_frequency(vec![0.05, 0.1], 0.01);
        }
        transcribe(&spec.with_positivity(true), &weekly(&bumpy(n)), fixed()).unwrap()
    }

    fn perturbed(p: &NlpProblem, seed: u64) -> DecisionVector {
        let m = p.layout().m;
        let deltas: Vec<f64> = (0..m).map(|j| 0.3e-3 / (j + 1) as f64).collect();
        let omegas: Vec<f64> = p.scheme().omega_star.iter().map(|w| w + 0.002).collect();
        let mut z = p.guess(1.2e-3, &deltas, &omegas, 1.1e-2, 500.0);
        // move stages and nodes off the interpolant so defects are nonzero
        let mut x = z.to_flat();
        for (i, v) in x.iter_mut().enumerate().skip(p.layout().n_independent()) {
            *v *= 1.0 + 0.01 * ((i as u64 * 7 + seed) % 5) as f64;
        }
        z = DecisionVector::from_flat(p.layout(), &x);
        z
    }

    #[test]
    fn constraint_counts() {
        let p = problem(SchemeId::S1, 10);
        assert_eq!(p.n_eq(), 9 * (2 * 2 + 2));
        let ineqs = p.inequalities();
        // alpha, nu, two amplitude rows, 10 nonnegative I nodes, R(0)
        assert_eq!(ineqs.len(), 2 + 2 + 10 + 1);
        let p2 = problem(SchemeId::S2, 10);
        assert_eq!(p2.inequalities().len(), ineqs.len() + 2);
        let omega = p2.layout().omega(0);
        let boxed: Vec<&LinearIneq> = p2
            .inequalities()
            .iter()
            .filter(|q| q.idx == [omega])
            .collect();
        assert_eq!(boxed.len(), 2);
        let mf = problem(SchemeId::Mf, 10);
        // 2m slack rows, alpha >= sum s, 2m box rows
        assert_eq!(mf.inequalities().len(), 2 + 4 + 1 + 4 + 10 + 1);
    }

    #[test]
    fn default_boxes() {
        let s = SchemeSpec::single(SchemeId::S2, DEFAULT_OMEGA_STAR);
        assert_eq!((s.lambda, s.epsilon), (0.0, 1e-2));
        assert_eq!(SchemeSpec::single(SchemeId::S3, DEFAULT_OMEGA_STAR).lambda, 1e4);
        assert_eq!(SchemeSpec::single(SchemeId::S4, DEFAULT_OMEGA_STAR).lambda, 10.0);
    }

    #[test]
    fn inconsistent_schemes() {
        let bad = SchemeSpec::multi_frequency(Vec::new(), 0.01);
        assert!(matches!(bad.validate(), Err(Error::InconsistentScheme(_))));
        let mut s1 = SchemeSpec::single(SchemeId::S1, 0.02);
        s1.lambda = 1.0;
        assert!(s1.validate().is_err());
        let mut s2 = SchemeSpec::single(SchemeId::S2, 0.02);
        s2.epsilon = 0.0;
        assert!(s2.validate().is_err());
        let short = weekly(&[1.0; 7]);
        assert!(matches!(
            transcribe(&SchemeSpec::single(SchemeId::S1, 0.02), &short, fixed()),
            Err(Error::TooShort { .. })
        ));
        assert_eq!("MF".parse::<SchemeId>().unwrap(), SchemeId::Mf);
        assert!("5".parse::<SchemeId>().is_err());
    }

    #[test]
    fn objective_examples() {
        let data = bumpy(12);
        let p = transcribe(&SchemeSpec::single(SchemeId::S1, 0.02), &weekly(&data), fixed()).unwrap();
        let mut z = p.guess(1.0, &[0.5], &[0.02], 1.0, 0.0);
        assert_eq!(objective_eval(&p, &z), 0.0);

        let zeros = vec![0.0; 9];
        let p0 = NlpProblem::new(SchemeSpec::single(SchemeId::S1, 0.02), fixed(), zeros).unwrap();
        z = p0.guess(1.0, &[0.0], &[0.02], 1.0, 0.0);
        for s in &mut z.states {
            s[0] = 3.0;
        }
        assert!((objective_eval(&p0, &z) - 0.5 * 9.0 * 8.0).abs() < 1e-12);

        let mut s3 = SchemeSpec::single(SchemeId::S3, 0.02);
        s3.lambda = 2.0;
        let p3 = transcribe(&s3, &weekly(&data), fixed()).unwrap();
        let z3 = p3.guess(3.0, &[4.0], &[0.0], 0.0, 0.0);
        assert!((objective_eval(&p3, &z3) - 25.0).abs() < 1e-12);
        // lambda = 0: the penalty is absent whatever the parameters
        let z1 = p.guess(3.0, &[4.0], &[0.0], 7.0, 0.0);
        assert_eq!(objective_eval(&p, &z1), 0.0);
    }

    #[test]
    fn flat_round_trip() {
        let p = problem(SchemeId::Mf, 9);
        let z = perturbed(&p, 1);
        let back = DecisionVector::from_flat(p.layout(), &z.to_flat());
        assert_eq!(back, z);
        assert_eq!(z.to_flat().len(), p.n_vars());
    }

    #[test]
    fn exact_trajectory_has_zero_defects() {
        let p = problem(SchemeId::S2, 9);
        let mut z = p.guess(1.5e-3, &[0.5e-3], &[0.05], 1e-2, 800.0);
        // fill nodes and stages by stepping the scheme itself
        let params = p.fixed().with_nu(z.nu).unwrap();
        let forcing = crate::model::SeasonalForcing::from_decimal(1.5e-3, &[0.5e-3], &["0.05"]).unwrap();
        let sys = crate::model::IrSystem::new(params, &forcing);
        let cfg = crate::integrate::StepperConfig::transcription();
        let traj = crate::integrate::integrate(&sys, 0.0, 8.0, &z.states[0], &cfg).unwrap();
        for k in 0..=8 {
            z.states[k] = [traj.state(k)[0], traj.state(k)[1]];
        }
        // Newton on the defects alone with the independent variables fixed
        let x = z.to_flat();
        let mut c = vec![0.0; p.n_eq()];
        let nlp = CollocationNlp::new(&p, &z);
        let mut u = nlp.to_scaled(&x);
        for _ in 0..8 {
            let lin = nlp.linearize(&u).unwrap();
            nlp.eq_constraints(&u, &mut c);
            let step = lin.particular(&c).unwrap();
            for (a, b) in u.iter_mut().zip(&step) {
                *a += b;
            }
        }
        nlp.eq_constraints(&u, &mut c);
        assert!(c.iter().all(|v| v.abs() < 1e-9), "{:?}", c);
        // the initial state is independent: Newton keeps it and reproduces
        // the integrator nodes
        let xs = nlp.to_physical(&u);
        let sol = DecisionVector::from_flat(p.layout(), &xs);
        for k in 0..=8 {
            assert!((sol.states[k][0] - traj.state(k)[0]).abs() < 1e-8 * (1.0 + traj.state(k)[0]));
        }
    }

    fn check_linearization(p: &NlpProblem, seed: u64) {
        let z = perturbed(p, seed);
        let nlp = CollocationNlp::new(p, &z);
        let u = nlp.to_scaled(&z.to_flat());
        let a = nlp.eq_jacobian(&u);
        let lin = nlp.linearize(&u).unwrap();
        let zb = lin.null_basis();
        let az = &a * zb;
        let tol = 1e-6 * a.amax();
        assert!(az.amax() < tol, "A Z = {}", az.amax());

        let mut c = vec![0.0; p.n_eq()];
        nlp.eq_constraints(&u, &mut c);
        let py = DVector::from_vec(lin.particular(&c).unwrap());
        let ap = &a * &py + DVector::from_column_slice(&c);
        assert!(ap.amax() < 1e-6 * (1.0 + c.iter().fold(0.0f64, |m, v| m.max(v.abs()))));

        let lam: Vec<f64> = (0..p.n_eq()).map(|i| ((i * 13 + 5) % 11) as f64 - 5.0).collect();
        let atl = DVector::from_vec(lin.jac_t_mul(&lam));
        let expect = a.tr_mul(&DVector::from_vec(lam));
        assert!((atl - &expect).amax() < 1e-6 * expect.amax());

        let mut g = vec![0.0; p.n_vars()];
        nlp.gradient(&u, &mut g);
        let mult = lin.multipliers(&g).unwrap();
        // coordinate split: no dependent component remains
        let resid = DVector::from_column_slice(&g) + a.tr_mul(&DVector::from_vec(mult));
        let nz = p.layout().n_independent();
        let dep = resid.rows(nz, p.n_vars() - nz).amax();
        assert!(dep < 1e-6 * DVector::from_vec(g.clone()).amax().max(1e-12), "{dep}");
    }

    #[test]
    fn linearization_matches_finite_differences() {
        check_linearization(&problem(SchemeId::S2, 9), 0);
        check_linearization(&problem(SchemeId::S3, 8), 3);
        check_linearization(&problem(SchemeId::Mf, 9), 1);
    }

    #[test]
    fn projection_restores_feasibility() {
        let p = problem(SchemeId::Mf, 9);
        let mut z = perturbed(&p, 2);
        z.deltas = vec![5.0, -5.0];
        z.omegas = vec![0.3, -0.2];
        z.states[0][1] = -10.0;
        z.states[3][0] = -1.0;
        let q = p.project(&z).unwrap();
        assert!(p.max_ineq_violation(&q.to_flat()) <= 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradient_matches_central_differences(
            seed in 0u64..1000,
            lambda in prop_oneof![Just(0.0), 0.1f64..100.0],
        ) {
            let mut spec = SchemeSpec::single(SchemeId::S3, 0.05);
            spec.lambda = lambda;
            let p = transcribe(&spec, &weekly(&bumpy(10)), fixed()).unwrap();
            let x = perturbed(&p, seed).to_flat();
            let mut g = vec![0.0; p.n_vars()];
            p.gradient_flat(&x, &mut g);
            let mut xp = x.clone();
            for i in 0..x.len() {
                let h = 1e-5 * (1.0 + x[i].abs());
                xp[i] = x[i] + h;
                let fp = p.objective_flat(&xp);
                xp[i] = x[i] - h;
                let fm = p.objective_flat(&xp);
                xp[i] = x[i];
                let fd = (fp - fm) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{} {} {}", i, fd, g[i]);
            }
        }

        #[test]
        fn guesses_are_feasible(alpha in 1e-4f64..1.0, frac in -1.0f64..1.0, r0 in 0.0f64..1e4) {
            let p = problem(SchemeId::S2, 12);
            let z = p.guess(alpha, &[frac * alpha], &[0.05], 1e-2, r0);
            prop_assert!(p.max_ineq_violation(&z.to_flat()) <= 0.0);
            prop_assert!(objective_eval(&p, &z).is_finite());
        }
    }
}

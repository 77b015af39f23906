//! Fixed-step two-stage Gauss–Legendre integration (implicit, A-stable,
//! order 4) of nonlinear vector fields and of linear periodic systems.

use nalgebra::{DMatrix, DVector};
use nalgebra::Complex;

type Complex64 = Complex<f64>;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Lu;

const SQRT3_6: f64 = 0.288_675_134_594_812_9;

/// Stage nodes of the two-stage Gauss method.
pub const GL2_C: [f64; 2] = [0.5 - SQRT3_6, 0.5 + SQRT3_6];
/// Butcher matrix, row-major.
pub const GL2_A: [[f64; 2]; 2] = [[0.25, 0.25 - SQRT3_6], [0.25 + SQRT3_6, 0.25]];
pub const GL2_B: [f64; 2] = [0.5, 0.5];

/// A (possibly time-dependent) vector field `x' = f(t, x)`.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Writes the row-major Jacobian and returns `true`, or returns `false`
    /// to request central finite differences.
    fn jacobian(&self, _t: f64, _x: &[f64], _jac: &mut [f64]) -> bool {
        false
    }
}

/// Adapts a closure `(t, x, out)` into a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
}

/// Linear system `z' = A(t) z` with exact Jacobian.
pub struct LinearField<A> {
    dim: usize,
    a: A,
}

impl<A: Fn(f64) -> DMatrix<f64>> LinearField<A> {
    pub fn new(dim: usize, a: A) -> Self {
        Self { dim, a }
    }
}

impl<A: Fn(f64) -> DMatrix<f64>> VectorField for LinearField<A> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let m = (self.a)(t);
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| m[(i, j)] * x[j]).sum();
        }
    }

    fn jacobian(&self, t: f64, _x: &[f64], jac: &mut [f64]) -> bool {
        let m = (self.a)(t);
        for i in 0..self.dim {
            for j in 0..self.dim {
                jac[i * self.dim + j] = m[(i, j)];
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    /// Step size in weeks.
    pub h: f64,
    /// Newton tolerance on stage updates (max norm, relative to `max(1, |x|)`).
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl StepperConfig {
    /// One step per data week.
    pub fn transcription() -> Self {
        Self {
            h: 1.0,
            ..Self::default()
        }
    }

    /// Quarter-week steps for orbit tracing and stability work.
    pub fn tracing() -> Self {
        Self {
            h: 0.25,
            ..Self::default()
        }
    }

    pub fn with_h(self, h: f64) -> Self {
        Self { h, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid("h", "step size must be positive"));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol <= 1e-2) {
            return Err(Error::invalid("newton_tol", "must lie in (0, 1e-2]"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("newton_max_iter", "must be positive"));
        }
        Ok(())
    }
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            h: 0.25,
            newton_tol: 1e-12,
            newton_max_iter: 25,
        }
    }
}

/// Reusable workspace for repeated Gauss–Legendre steps of one system size.
pub struct Gl2Stepper {
    dim: usize,
    cfg: StepperConfig,
    stages: Vec<f64>,
    fvals: Vec<f64>,
    jacs: Vec<f64>,
    newton: Vec<f64>,
    lu: Lu,
    resid: Vec<f64>,
    scratch: Vec<f64>,
}

impl Gl2Stepper {
    pub fn new(dim: usize, cfg: StepperConfig) -> Self {
        Self {
            dim,
            cfg,
            stages: vec![0.0; 2 * dim],
            fvals: vec![0.0; 2 * dim],
            jacs: vec![0.0; 2 * dim * dim],
            newton: vec![0.0; 4 * dim * dim],
            lu: Lu::with_size(2 * dim),
            resid: vec![0.0; 2 * dim],
            scratch: vec![0.0; 2 * dim],
        }
    }

    fn jacobian_into<F: VectorField + ?Sized>(
        rhs: &F,
        t: f64,
        x: &[f64],
        jac: &mut [f64],
        scratch: &mut [f64],
    ) {
        if rhs.jacobian(t, x, jac) {
            return;
        }
        let d = x.len();
        let mut xp = x.to_vec();
        let (fp, fm) = scratch.split_at_mut(d);
        for j in 0..d {
            let eps = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + eps;
            rhs.eval(t, &xp, fp);
            xp[j] = x[j] - eps;
            rhs.eval(t, &xp, &mut fm[..d]);
            xp[j] = x[j];
            for i in 0..d {
                jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
    }

    /// One step of size `h` (may be negative) from `(t, x)` into `out`.
    pub fn step<F: VectorField + ?Sized>(
        &mut self,
        rhs: &F,
        t: f64,
        x: &[f64],
        h: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.dim;
        let m = 2 * d;
        let ts = [t + GL2_C[0] * h, t + GL2_C[1] * h];
        let xnorm = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let tol = self.cfg.newton_tol * xnorm;

        // explicit Euler predictor for both stages
        rhs.eval(t, x, &mut self.fvals[..d]);
        for s in 0..2 {
            for i in 0..d {
                self.stages[s * d + i] = x[i] + GL2_C[s] * h * self.fvals[i];
            }
        }

        let mut converged = false;
        for _ in 0..self.cfg.newton_max_iter {
            for s in 0..2 {
                let (ys, fs) = (&self.stages[s * d..(s + 1) * d], &mut self.fvals[s * d..(s + 1) * d]);
                rhs.eval(ts[s], ys, fs);
                Self::jacobian_into(
                    rhs,
                    ts[s],
                    ys,
                    &mut self.jacs[s * d * d..(s + 1) * d * d],
                    &mut self.scratch,
                );
            }
            // residual G_s = Y_s - x - h sum_j a_sj f_j
            for s in 0..2 {
                for i in 0..d {
                    let mut g = self.stages[s * d + i] - x[i];
                    for j in 0..2 {
                        g -= h * GL2_A[s][j] * self.fvals[j * d + i];
                    }
                    self.resid[s * d + i] = -g;
                }
            }
            // Newton matrix: delta_sj I - h a_sj J_j
            for s in 0..2 {
                for i in 0..d {
                    let row = s * d + i;
                    for j in 0..2 {
                        for k in 0..d {
                            let col = j * d + k;
                            let id = if s == j && i == k { 1.0 } else { 0.0 };
                            self.newton[row * m + col] =
                                id - h * GL2_A[s][j] * self.jacs[j * d * d + i * d + k];
                        }
                    }
                }
            }
            self.lu
                .refactor(&self.newton)
                .map_err(|_| Error::NewtonFailure { t, iterations: 0 })?;
            self.lu.solve(&mut self.resid);
            let mut dmax = 0.0f64;
            for (y, dy) in self.stages.iter_mut().zip(&self.resid) {
                *y += dy;
                dmax = dmax.max(dy.abs());
            }
            if !dmax.is_finite() {
                break;
            }
            if dmax <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NewtonFailure {
                t,
                iterations: self.cfg.newton_max_iter,
            });
        }
        for s in 0..2 {
            let (ys, fs) = (&self.stages[s * d..(s + 1) * d], &mut self.fvals[s * d..(s + 1) * d]);
            rhs.eval(ts[s], ys, fs);
        }
        for i in 0..d {
            out[i] = x[i] + h * (GL2_B[0] * self.fvals[i] + GL2_B[1] * self.fvals[d + i]);
        }
        Ok(())
    }
}

/// One Gauss–Legendre step of size `cfg.h`.
pub fn gl2_step<F: VectorField + ?Sized>(
    rhs: &F,
    t: f64,
    x: &[f64],
    cfg: &StepperConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = vec![0.0; x.len()];
    Gl2Stepper::new(x.len(), *cfg).step(rhs, t, x, cfg.h, &mut out)?;
    Ok(out)
}

/// Sampled solution on a (uniform, except possibly the last) time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Component `c` over all nodes.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.states().map(|s| s[c]).collect()
    }

    /// CSV with header `t,<names>` preceded by `#` metadata lines.
    pub fn to_csv(&self, names: &[&str], meta: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in meta {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s.push('t');
        for n in names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (t, x) in self.times.iter().zip(self.states()) {
            s.push_str(&format!("{t}"));
            for v in x {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

fn step_count(span: f64, h: f64) -> usize {
    let ratio = span.abs() / h;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

fn drive<F, V>(rhs: &F, t0: f64, tf: f64, x0: &[f64], cfg: &StepperConfig, mut visit: V) -> Result<Vec<f64>>
where
    F: VectorField + ?Sized,
    V: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    if x0.len() != rhs.dim() {
        return Err(Error::invalid("x0", "dimension does not match vector field"));
    }
    let dir = if tf >= t0 { 1.0 } else { -1.0 };
    let n = step_count(tf - t0, cfg.h);
    let mut stepper = Gl2Stepper::new(x0.len(), *cfg);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x0.len()];
    visit(t0, &x);
    for k in 0..n {
        let t = t0 + dir * cfg.h * k as f64;
        let t_next = if k + 1 == n {
            tf
        } else {
            t0 + dir * cfg.h * (k + 1) as f64
        };
        stepper.step(rhs, t, &x, t_next - t, &mut next)?;
        std::mem::swap(&mut x, &mut next);
        visit(t_next, &x);
    }
    Ok(x)
}

/// Integrates from `t0` to `tf` (either direction) storing every node. The
/// final step is shortened to land exactly on `tf`.
pub fn integrate<F: VectorField + ?Sized>(
    rhs: &F,
    t0: f64,
    tf: f64,
    x0: &[f64],
    cfg: &StepperConfig,
) -> Result<Trajectory> {
    let dim = x0.len();
    let n = step_count(tf - t0, cfg.h.max(f64::MIN_POSITIVE));
    let mut times = Vec::with_capacity(n + 1);
    let mut data = Vec::with_capacity((n + 1) * dim);
    drive(rhs, t0, tf, x0, cfg, |t, x| {
        times.push(t);
        data.extend_from_slice(x);
    })?;
    Ok(Trajectory { dim, times, data })
}

/// Like [`integrate`] but only returns the final state.
pub fn propagate<F: VectorField + ?Sized>(
    rhs: &F,
    t0: f64,
    tf: f64,
    x0: &[f64],
    cfg: &StepperConfig,
) -> Result<Vec<f64>> {
    drive(rhs, t0, tf, x0, cfg, |_, _| {})
}

/// Fundamental matrix of a periodic linear system after one period.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalSolution {
    pub monodromy: DMatrix<f64>,
    pub sigma: f64,
}

impl FundamentalSolution {
    /// Floquet multipliers (eigenvalues of the monodromy matrix).
    pub fn multipliers(&self) -> Vec<Complex64> {
        self.monodromy.complex_eigenvalues().iter().copied().collect()
    }

    /// Principal Floquet exponents `log(multiplier) / sigma`.
    pub fn exponents(&self) -> Vec<Complex64> {
        self.multipliers()
            .into_iter()
            .map(|m| m.ln() / self.sigma)
            .collect()
    }

    pub fn determinant(&self) -> f64 {
        self.monodromy.determinant()
    }
}

/// Integrates `Z' = A(t) Z`, `Z(0) = I` over one period, column by column.
pub fn monodromy<A>(a: A, dim: usize, sigma: f64, cfg: &StepperConfig) -> Result<FundamentalSolution>
where
    A: Fn(f64) -> DMatrix<f64>,
{
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", "period must be positive"));
    }
    let field = LinearField::new(dim, a);
    let mut z = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = propagate(&field, 0.0, sigma, &e, cfg)?;
        z.set_column(j, &DVector::from_vec(col));
    }
    Ok(FundamentalSolution {
        monodromy: z,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IrParams, IrSystem, SeasonalForcing};
    use approx::assert_relative_eq;

    fn scalar(lambda: f64) -> FnField<impl Fn(f64, &[f64], &mut [f64])> {
        FnField::new(1, move |_t, x: &[f64], out: &mut [f64]| out[0] = lambda * x[0])
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let f = FnField::new(3, |_t, _x: &[f64], out: &mut [f64]| out.fill(0.0));
        let x = [1.0, -2.0, 3.5];
        let y = gl2_step(&f, 0.0, &x, &StepperConfig::default()).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn step_equals_pade_stability_function() {
        let cfg = StepperConfig {
            h: 0.7,
            newton_tol: 1e-14,
            newton_max_iter: 30,
        };
        for lambda in [-3.0, -0.5, 0.2, 1.3] {
            let z = 0.7 * lambda;
            let pade = (1.0 + z / 2.0 + z * z / 12.0) / (1.0 - z / 2.0 + z * z / 12.0);
            let y = gl2_step(&scalar(lambda), 0.0, &[2.0], &cfg).unwrap();
            assert_relative_eq!(y[0], 2.0 * pade, max_relative = 1e-13);
        }
    }

    #[test]
    fn a_stable_on_very_stiff_decay() {
        let cfg = StepperConfig::default().with_h(1.0);
        let y = propagate(&scalar(-1e6), 0.0, 50.0, &[1.0], &cfg).unwrap();
        assert!(y[0].abs() <= 1.0);
    }

    #[test]
    fn empty_interval_gives_single_node() {
        let tr = integrate(&scalar(1.0), 3.0, 3.0, &[4.0], &StepperConfig::default()).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.state(0), &[4.0]);
    }

    #[test]
    fn last_step_lands_on_end_time() {
        let cfg = StepperConfig::default().with_h(0.3);
        let tr = integrate(&scalar(-0.1), 0.0, 1.0, &[1.0], &cfg).unwrap();
        assert_eq!(tr.len(), 5);
        assert_eq!(*tr.times().last().unwrap(), 1.0);
        assert_relative_eq!(tr.last_state()[0], (-0.1f64).exp(), max_relative = 1e-8);
    }

    #[test]
    fn time_symmetry_round_trip() {
        let p = IrParams::new(1e5, 1.0 / 3120.0, 0.25, 1.0 / 36.0, 0.01).unwrap();
        let f = SeasonalForcing::from_decimal(0.004, &[0.001], &["0.02"]).unwrap();
        let sys = IrSystem::new(p, &f);
        let cfg = StepperConfig::default().with_h(0.5);
        let x0 = [120.0, 900.0];
        let fwd = propagate(&sys, 0.0, 40.0, &x0, &cfg).unwrap();
        let back = propagate(&sys, 40.0, 0.0, &fwd, &cfg).unwrap();
        for (a, b) in back.iter().zip(x0) {
            assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn newton_failure_is_reported() {
        // x' = x^2 blows up; a huge step has no real stage solution
        let f = FnField::new(1, |_t, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        let cfg = StepperConfig {
            h: 10.0,
            newton_tol: 1e-12,
            newton_max_iter: 8,
        };
        assert!(matches!(
            gl2_step(&f, 0.0, &[1.0], &cfg),
            Err(Error::NewtonFailure { .. })
        ));
    }

    #[test]
    fn scalar_cosine_monodromy_is_one() {
        let fs = monodromy(
            |t| DMatrix::from_element(1, 1, (2.0 * std::f64::consts::PI * t).cos()),
            1,
            1.0,
            &StepperConfig::default().with_h(0.01),
        )
        .unwrap();
        assert!((fs.monodromy[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_jacobian_path() {
        // Same system with and without an analytic Jacobian.
        let p = IrParams::new(1e5, 1.0 / 3120.0, 0.25, 1.0 / 36.0, 0.01).unwrap();
        let f = SeasonalForcing::from_decimal(0.004, &[0.001], &["0.02"]).unwrap();
        let sys = IrSystem::new(p, &f);
        let fd = FnField::new(2, |t, x: &[f64], out: &mut [f64]| sys.eval(t, x, out));
        let cfg = StepperConfig::default().with_h(1.0);
        let a = propagate(&sys, 0.0, 30.0, &[50.0, 10.0], &cfg).unwrap();
        let b = propagate(&fd, 0.0, 30.0, &[50.0, 10.0], &cfg).unwrap();
        assert_relative_eq!(a[0], b[0], max_relative = 1e-10);
        assert_relative_eq!(a[1], b[1], max_relative = 1e-10);
    }

    fn fast_ir() -> (IrParams, SeasonalForcing) {
        let p = IrParams::new(1e5, 1.0 / 3120.0, 0.25, 1.0 / 36.0, 0.1).unwrap();
        let f = SeasonalForcing::from_decimal(0.1, &[0.05], &["0.02"]).unwrap();
        (p, f)
    }

    #[test]
    fn observed_order_is_four() {
        let (p, f) = fast_ir();
        let sys = IrSystem::new(p, &f);
        let x0 = [50.0, 10.0];
        let run = |h: f64| {
            propagate(&sys, 0.0, 40.0, &x0, &StepperConfig::default().with_h(h)).unwrap()
        };
        let reference = run(1.0 / 128.0);
        let err = |h: f64| {
            let x = run(h);
            (x[0] - reference[0]).abs().max((x[1] - reference[1]).abs())
        };
        let order = (err(0.5) / err(0.25)).log2();
        assert!((order - 4.0).abs() <= 0.2, "observed order {order}");
    }

    #[test]
    fn constant_linear_system_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.2, 0.5, -0.4, -0.1]);
        let sigma = 5.0;
        let exact = (a.clone() * sigma).exp();
        let cfg = StepperConfig::default().with_h(0.01 * sigma);
        let fs = monodromy(|_| a.clone(), 2, sigma, &cfg).unwrap();
        assert!((&fs.monodromy - &exact).amax() <= 1e-8, "{}", fs.monodromy - exact);
        let tr = integrate(&LinearField::new(2, |_| a.clone()), 0.0, sigma, &[1.0, -2.0], &cfg).unwrap();
        let want = &exact * DVector::from_vec(vec![1.0, -2.0]);
        assert!((tr.last_state()[0] - want[0]).abs() <= 1e-8);
        assert!((tr.last_state()[1] - want[1]).abs() <= 1e-8);
    }

    #[test]
    fn liouville_determinant() {
        let sigma = 3.0;
        let w = 2.0 * std::f64::consts::PI / sigma;
        let a = move |t: f64| {
            DMatrix::from_row_slice(
                2,
                2,
                &[(w * t).sin() - 0.1, 1.0, 0.2, (w * t).cos() - 0.3],
            )
        };
        let fs = monodromy(a, 2, sigma, &StepperConfig::default().with_h(0.01)).unwrap();
        let det = fs.determinant();
        let expected = (-0.4 * sigma).exp();
        assert!(det > 0.0);
        assert!((det - expected).abs() <= 1e-6 * expected, "{det} vs {expected}");
        assert_eq!(fs.multipliers().len(), 2);
    }

    #[test]
    fn ir_trajectory_stays_admissible() {
        let p = IrParams::new(1e7, 1.0 / 3120.0, 0.25, 1.0 / 36.0, 6.23095e-4).unwrap();
        let f = SeasonalForcing::from_decimal(
            1.57434e-4,
            &[-8.50356e-6, 3.18808e-5, -2.09876e-5],
            &["0.00609", "0.01882", "0.02476"],
        )
        .unwrap();
        let sys = IrSystem::new(p, &f);
        let tr = integrate(&sys, 0.0, 505.0, &[114.701, 0.0], &StepperConfig::transcription()).unwrap();
        assert_eq!(tr.len(), 506);
        for x in tr.states() {
            assert!(x[0] >= -1e-9 && x[1] >= -1e-9 && x[0] + x[1] <= p.population);
        }
        let csv = tr.to_csv(&["I", "R"], &[("model", "ir".into())]);
        assert!(csv.starts_with("# model=ir\nt,I,R\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

            #[test]
            fn round_trip_returns_to_start(
                nu in 1e-3f64..0.1,
                r0 in 0.5f64..3.0,
                ratio in 0.0f64..0.9,
                i0 in 1.0f64..1e3,
                rr in 0.0f64..1e4,
                h in prop::sample::select(vec![0.25, 0.5, 1.0]),
            ) {
                let p = IrParams::new(1e5, 1.0 / 3120.0, 0.25, 1.0 / 36.0, nu).unwrap();
                let alpha = r0 * (p.gamma + p.mu) * nu;
                let f = SeasonalForcing::from_decimal(alpha, &[ratio * alpha], &["0.02"]).unwrap();
                let sys = IrSystem::new(p, &f);
                let cfg = StepperConfig::default().with_h(h);
                let x0 = [i0, rr];
                let fwd = propagate(&sys, 0.0, 30.0, &x0, &cfg).unwrap();
                let back = propagate(&sys, 30.0, 0.0, &fwd, &cfg).unwrap();
                for (a, b) in back.iter().zip(x0) {
                    prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{} vs {}", a, b);
                }
            }

            #[test]
            fn decay_never_amplifies(lambda in -1e8f64..-1e-6, h in 0.01f64..10.0) {
                let cfg = StepperConfig::default().with_h(h);
                let y = gl2_step(&scalar(lambda), 0.0, &[1.0], &cfg).unwrap();
                prop_assert!(y[0].abs() <= 1.0 + 1e-12, "R({}) = {}", lambda * h, y[0]);
            }
        }
    }
}

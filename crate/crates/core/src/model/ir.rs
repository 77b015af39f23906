use serde::{Deserialize, Serialize};

use super::forcing::SeasonalForcing;
use crate::error::{Error, Result};

/// Fixed demographic and epidemiological constants of the IR model.
/// All rates are per week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrParams {
    /// Total human population `N`.
    pub population: f64,
    /// Human death (and birth) rate.
    pub mu: f64,
    /// Recovery rate.
    pub gamma: f64,
    /// Loss-of-immunity rate.
    pub kappa: f64,
    /// Mosquito death rate over infection rate, `theta / rho`.
    pub nu: f64,
}

impl IrParams {
    pub fn new(population: f64, mu: f64, gamma: f64, kappa: f64, nu: f64) -> Result<Self> {
        let p = Self {
            population,
            mu,
            gamma,
            kappa,
            nu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("N", self.population),
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("nu", self.nu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        Ok(())
    }

    /// Same constants with a different `nu`.
    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..*self }
    }

    pub fn r0(&self, alpha: f64) -> f64 {
        basic_reproduction_number(alpha, self.gamma, self.mu, self.nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub infective: f64,
    pub recovered: f64,
}

impl HumanState {
    pub fn new(infective: f64, recovered: f64) -> Self {
        Self {
            infective,
            recovered,
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.infective, self.recovered]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1])
    }

    /// Nonnegative compartments that fit in the population.
    pub fn is_admissible(&self, params: &IrParams) -> bool {
        self.infective >= 0.0
            && self.recovered >= 0.0
            && self.infective + self.recovered <= params.population
    }
}

/// `alpha / ((gamma + mu) nu)`.
pub fn basic_reproduction_number(alpha: f64, gamma: f64, mu: f64, nu: f64) -> f64 {
    alpha / ((gamma + mu) * nu)
}

/// Right-hand side of the reduced IR system.
#[inline]
pub fn ir_rhs(params: &IrParams, forcing: &SeasonalForcing, t: f64, x: [f64; 2]) -> [f64; 2] {
    ir_rhs_with_beta(params, forcing.eval(t), x)
}

#[inline]
pub(crate) fn ir_rhs_with_beta(params: &IrParams, beta: f64, x: [f64; 2]) -> [f64; 2] {
    let [i, r] = x;
    let n = params.population;
    let infection = beta * (n - i - r) * i / (i + params.nu * n);
    [
        infection - (params.gamma + params.mu) * i,
        params.gamma * i - (params.mu + params.kappa) * r,
    ]
}

/// Jacobian of [`ir_rhs`] with respect to `(I, R)`, row-major.
pub fn ir_jacobian(
    params: &IrParams,
    forcing: &SeasonalForcing,
    t: f64,
    x: [f64; 2],
) -> [[f64; 2]; 2] {
    ir_jacobian_with_beta(params, forcing.eval(t), x)
}

#[inline]
pub(crate) fn ir_jacobian_with_beta(params: &IrParams, beta: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
    let [i, r] = x;
    let n = params.population;
    let nun = params.nu * n;
    let denom = i + nun;
    let frac = i / denom;
    let susceptible = n - i - r;
    // d/dI of beta S I/(I + nu N) = -beta frac + beta S/(I+nuN) (1 - frac)
    let d_ii = -beta * frac + beta * susceptible / denom * (1.0 - frac) - params.gamma - params.mu;
    let d_ir = -beta * frac;
    [[d_ii, d_ir], [params.gamma, -params.mu - params.kappa]]
}

/// Jacobian of the autonomous part (beta = alpha) at `x`.
pub fn autonomous_jacobian(params: &IrParams, alpha: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
    ir_jacobian_with_beta(params, alpha, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibria {
    pub dfe: HumanState,
    pub ee: Option<HumanState>,
}

/// Disease-free and (when `R0 > 1`) endemic equilibria of the autonomous
/// system with constant infection rate `alpha`.
pub fn equilibria(params: &IrParams, alpha: f64) -> Equilibria {
    let r0 = params.r0(alpha);
    let ee = (r0 > 1.0).then(|| {
        let IrParams {
            population: n,
            mu,
            gamma,
            kappa,
            nu,
        } = *params;
        let denom = (alpha + mu) * (gamma + mu + kappa) + gamma * kappa;
        let excess = (gamma + mu) * nu * (r0 - 1.0);
        HumanState::new(
            n * (mu + kappa) * excess / denom,
            n * gamma * excess / denom,
        )
    });
    Equilibria {
        dfe: HumanState::new(0.0, 0.0),
        ee,
    }
}

/// Eigenvalues of a real 2x2 matrix as `(re, im)` pairs.
pub fn eigenvalues_2x2(m: [[f64; 2]; 2]) -> [(f64, f64); 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // avoid cancellation in the smaller root
        let big = if half >= 0.0 { half + s } else { half - s };
        let small = if big != 0.0 { det / big } else { 0.0 };
        [(big, 0.0), (small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(half, s), (half, -s)]
    }
}

use serde::{Deserialize, Serialize};

use super::forcing::SeasonalForcing;
use super::ir::IrParams;
use crate::error::{Error, Result};

/// Host-vector model constants. Rates per week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiruvParams {
    pub population: f64,
    pub mu: f64,
    pub gamma: f64,
    pub kappa: f64,
    /// Mosquito recruitment (mosquitoes per week).
    pub recruitment: f64,
    /// Mosquito infection rate.
    pub rho: f64,
    /// Mosquito death rate.
    pub theta: f64,
}

impl SiruvParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("N", self.population),
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("Lambda", self.recruitment),
            ("rho", self.rho),
            ("theta", self.theta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        if self.theta <= self.mu {
            log::warn!(
                "theta = {} <= mu = {}: mosquito dynamics are not fast, the reduction is questionable",
                self.theta,
                self.mu
            );
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        self.theta / self.rho
    }

    /// Constants of the reduced IR model.
    pub fn to_ir(&self) -> IrParams {
        IrParams {
            population: self.population,
            mu: self.mu,
            gamma: self.gamma,
            kappa: self.kappa,
            nu: self.nu(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiruvState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
    /// Susceptible mosquitoes.
    pub u: f64,
    /// Infective mosquitoes.
    pub v: f64,
}

impl SiruvState {
    pub fn to_array(self) -> [f64; 5] {
        [self.s, self.i, self.r, self.u, self.v]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            s: x[0],
            i: x[1],
            r: x[2],
            u: x[3],
            v: x[4],
        }
    }
}

/// Five-compartment host-vector vector field.
pub fn siruv_rhs(
    params: &SiruvParams,
    forcing: &SeasonalForcing,
    t: f64,
    x: [f64; 5],
) -> [f64; 5] {
    let [s, i, r, u, v] = x;
    let SiruvParams {
        population: n,
        mu,
        gamma,
        kappa,
        recruitment,
        rho,
        theta,
    } = *params;
    let beta = forcing.eval(t);
    let m = u + v;
    let human_infection = if m > 0.0 { beta / m * s * v } else { 0.0 };
    let vector_infection = rho / n * u * i;
    [
        mu * (n - s) - human_infection + kappa * r,
        human_infection - (gamma + mu) * i,
        gamma * i - (mu + kappa) * r,
        recruitment - vector_infection - theta * u,
        vector_infection - theta * v,
    ]
}

/// Quasi-steady mosquito compartments `(U, V)` given infective humans.
pub fn qssa_vector(params: &SiruvParams, infective: f64) -> (f64, f64) {
    let SiruvParams {
        population: n,
        recruitment,
        rho,
        theta,
        ..
    } = *params;
    let denom = theta * n + rho * infective;
    (
        recruitment * n / denom,
        rho * recruitment * infective / (theta * denom),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> SiruvParams {
        SiruvParams {
            population: 1e6,
            mu: 1.0 / 3120.0,
            gamma: 0.25,
            kappa: 1.0 / 36.0,
            recruitment: 5e5,
            rho: 1.2,
            theta: 0.8,
        }
    }

    #[test]
    fn disease_free_equilibrium() {
        let p = params();
        let f = SeasonalForcing::from_decimal(0.4, &[0.1], &["0.02"]).unwrap();
        let x = [p.population, 0.0, 0.0, p.recruitment / p.theta, 0.0];
        let d = siruv_rhs(&p, &f, 2.5, x);
        for v in d {
            assert!(v.abs() < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn no_infection_terms_without_vectors_or_cases() {
        let p = params();
        let f = SeasonalForcing::constant(0.4).unwrap();
        let (s, r) = (7e5, 2e5);
        let d = siruv_rhs(&p, &f, 0.0, [s, 0.0, r, 1e4, 0.0]);
        assert_relative_eq!(d[0], p.mu * (p.population - s) + p.kappa * r);
    }

    #[test]
    fn qssa_values_and_limits() {
        let p = params();
        let (u, v) = qssa_vector(&p, 0.0);
        assert_relative_eq!(u, p.recruitment / p.theta);
        assert_eq!(v, 0.0);
        let (u, v) = qssa_vector(&p, 1e12);
        assert!(u < 1e-3 * p.recruitment / p.theta);
        assert_relative_eq!(v, p.recruitment / p.theta, max_relative = 1e-5);
    }

    #[test]
    fn reduction_has_matching_nu() {
        let p = params();
        assert!(p.validate().is_ok());
        assert_relative_eq!(p.to_ir().nu, p.theta / p.rho);
    }

    proptest! {
        #[test]
        fn human_population_is_conserved(
            s_frac in 0.0f64..1.0,
            i_frac in 0.0f64..1.0,
            u in 0.0f64..1e6,
            v in 0.0f64..1e6,
            t in 0.0f64..100.0,
        ) {
            let p = params();
            let f = SeasonalForcing::from_decimal(0.4, &[0.2], &["0.02"]).unwrap();
            let n = p.population;
            let s = s_frac * n;
            let i = i_frac * (n - s);
            let r = n - s - i;
            let d = siruv_rhs(&p, &f, t, [s, i, r, u, v]);
            prop_assert!((d[0] + d[1] + d[2]).abs() <= 1e-9 * n);
        }

        #[test]
        fn qssa_infective_fraction_identity(i in 0.0f64..1e7) {
            let p = params();
            let (u, v) = qssa_vector(&p, i);
            let lhs = v / (u + v);
            let rhs = i / (i + p.nu() * p.population);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}

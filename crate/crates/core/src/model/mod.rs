//! Seasonal forcing, the host-vector model and its reduced IR form.

mod forcing;
mod ir;
mod siruv;

pub use forcing::{common_period, forcing_eval, Frequency, Harmonic, SeasonalForcing};
pub use ir::{
    autonomous_jacobian, basic_reproduction_number, eigenvalues_2x2, equilibria, ir_jacobian,
    ir_rhs, Equilibria, HumanState, IrParams,
};
pub(crate) use ir::{ir_jacobian_with_beta, ir_rhs_with_beta};
pub use siruv::{qssa_vector, siruv_rhs, SiruvParams, SiruvState};

use crate::integrate::VectorField;

/// The IR system as an integrable vector field with analytic Jacobian.
#[derive(Debug, Clone)]
pub struct IrSystem<'a> {
    pub params: IrParams,
    pub forcing: &'a SeasonalForcing,
}

impl<'a> IrSystem<'a> {
    pub fn new(params: IrParams, forcing: &'a SeasonalForcing) -> Self {
        Self { params, forcing }
    }
}

impl VectorField for IrSystem<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = ir_rhs(&self.params, self.forcing, t, [x[0], x[1]]);
        out[..2].copy_from_slice(&d);
    }

    fn jacobian(&self, t: f64, x: &[f64], jac: &mut [f64]) -> bool {
        let j = ir_jacobian(&self.params, self.forcing, t, [x[0], x[1]]);
        jac[..4].copy_from_slice(&[j[0][0], j[0][1], j[1][0], j[1][1]]);
        true
    }
}

/// The five-compartment host-vector system (finite-difference Jacobian).
#[derive(Debug, Clone)]
pub struct SiruvSystem<'a> {
    pub params: SiruvParams,
    pub forcing: &'a SeasonalForcing,
}

impl VectorField for SiruvSystem<'_> {
    fn dim(&self) -> usize {
        5
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = siruv_rhs(&self.params, self.forcing, t, [x[0], x[1], x[2], x[3], x[4]]);
        out[..5].copy_from_slice(&d);
    }
}

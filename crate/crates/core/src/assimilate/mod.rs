//! Data assimilation: fitting forcing parameters to incidence data by
//! direct transcription and sequential quadratic programming.

pub mod collocation;
pub mod multistart;
pub mod qp;
pub mod sqp;

pub use collocation::{
    objective_eval, transcribe, DecisionVector, FixedParams, NlpProblem, SchemeId, SchemeSpec,
    DEFAULT_EPSILON, DEFAULT_OMEGA_STAR,
};
pub use multistart::{cross_check, multi_start, solve_from, start_pool, CrossCheck, FitResult, SolveOptions, StartOptions};
pub use qp::{solve_qp, LinearConstraints, QpSolution};
pub use sqp::{sqp_solve, FitStatus, LinearIneq, Nlp, SqpConfig, SqpOutcome};

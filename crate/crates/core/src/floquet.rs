//! Floquet-type stability analysis of the seasonally forced IR model:
//! existence checks, trivial-solution multipliers, periodic-orbit tracing,
//! the `Phi` profile and the `R_max` threshold.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate, monodromy, propagate, StepperConfig};
use crate::model::{eigenvalues_2x2, equilibria, ir_jacobian, HumanState, IrParams, IrSystem, SeasonalForcing};

/// Closure residual above which a traced orbit is rejected.
pub const CLOSURE_TOL: f64 = 1e-4;
/// Retries (each doubling the total transient) before giving up on an orbit.
pub const ORBIT_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// `R0 < 1`: the trivial solution is locally asymptotically stable.
    DiesOut,
    /// `R0 > 1` and `R_max < 1`: the traced periodic orbit is locally stable.
    StableEndemicCycle,
    /// Neither sufficient condition holds.
    Inconclusive,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DiesOut => "dies_out",
            Self::StableEndemicCycle => "stable_endemic_cycle",
            Self::Inconclusive => "inconclusive",
        }
    }
}

/// True when no eigenvalue of `jac` lies within `tol * max(|lambda|, 1)` of
/// the lattice `(2 pi / sigma) i Z`, i.e. a `sigma`-periodic solution of the
/// forced linear system exists.
pub fn existence_check(jac: [[f64; 2]; 2], sigma: f64, tol: f64) -> bool {
    let spacing = 2.0 * PI / sigma;
    eigenvalues_2x2(jac).iter().all(|&(re, im)| {
        let t = tol * re.hypot(im).max(1.0);
        let lattice_gap = (im - (im / spacing).round() * spacing).abs();
        re.abs() > t || lattice_gap > t
    })
}

/// Closed-form trivial-solution multipliers and the resulting verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialStability {
    pub r0: f64,
    pub multipliers: [f64; 2],
    pub classification: Classification,
}

pub fn trivial_stability(params: &IrParams, forcing: &SeasonalForcing) -> TrivialStability {
    let sigma = forcing.sigma();
    let r0 = params.r0(forcing.alpha());
    let multipliers = [
        (sigma * (forcing.alpha() / params.nu - params.gamma - params.mu)).exp(),
        (-sigma * (params.mu + params.kappa)).exp(),
    ];
    let classification = if r0 < 1.0 {
        Classification::DiesOut
    } else {
        Classification::Inconclusive
    };
    TrivialStability {
        r0,
        multipliers,
        classification,
    }
}

/// Multipliers of the variational system along `phi = 0` by numerical
/// integration of the fundamental matrix, sorted as `[infective, recovered]`.
pub fn trivial_multipliers_numeric(
    params: &IrParams,
    forcing: &SeasonalForcing,
    cfg: &StepperConfig,
) -> Result<[f64; 2]> {
    let a = |t: f64| {
        let j = ir_jacobian(params, forcing, t, [0.0, 0.0]);
        DMatrix::from_row_slice(2, 2, &[j[0][0], j[0][1], j[1][0], j[1][1]])
    };
    let fs = monodromy(a, 2, forcing.sigma(), cfg)?;
    // the variational matrix at zero is lower triangular, so is Z(sigma)
    Ok([fs.monodromy[(0, 0)], fs.monodromy[(1, 1)]])
}

/// One period of a traced periodic solution. Sample times are phases in
/// `[0, sigma]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub sigma: f64,
    pub times: Vec<f64>,
    pub infective: Vec<f64>,
    pub recovered: Vec<f64>,
    pub closure_residual: f64,
    /// Total integration time before the recorded period.
    pub transient: f64,
}

impl PeriodicOrbit {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> [f64; 2] {
        [self.infective[0], self.recovered[0]]
    }

    pub fn min_infective(&self) -> f64 {
        self.infective.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_infective(&self) -> f64 {
        self.infective.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# sigma={}\n# closure_residual={:e}\nt,I,R\n",
            self.sigma, self.closure_residual
        );
        for k in 0..self.len() {
            s.push_str(&format!(
                "{},{:.17e},{:.17e}\n",
                self.times[k], self.infective[k], self.recovered[k]
            ));
        }
        s
    }
}

/// Integrates past a transient (rounded up to whole periods) and records one
/// further period. A residual above [`CLOSURE_TOL`] triggers up to
/// [`ORBIT_RETRIES`] retries, each continuing the integration so that the
/// total transient doubles.
pub fn trace_orbit(
    params: &IrParams,
    forcing: &SeasonalForcing,
    x_init: Option<HumanState>,
    transient: f64,
    cfg: &StepperConfig,
) -> Result<PeriodicOrbit> {
    let r0 = params.r0(forcing.alpha());
    if !(r0 > 1.0) {
        return Err(Error::Precondition(format!(
            "orbit tracing needs R0 > 1, got {r0}"
        )));
    }
    let sigma = forcing.sigma();
    if !(transient >= 10.0 * sigma) {
        return Err(Error::Precondition(format!(
            "transient {transient} is shorter than 10 periods ({sigma} weeks each)"
        )));
    }
    let start = match x_init {
        Some(x) => x,
        None => equilibria(params, forcing.alpha())
            .ee
            .expect("endemic equilibrium exists when R0 > 1"),
    };
    let sys = IrSystem::new(*params, forcing);
    let mut periods = (transient / sigma).ceil();
    let mut t = 0.0;
    let mut x = start.to_array().to_vec();
    let mut residual = f64::INFINITY;
    for _attempt in 0..=ORBIT_RETRIES {
        let t_end = periods * sigma;
        x = propagate(&sys, t, t_end, &x, cfg)?;
        t = t_end;
        let tr = integrate(&sys, t, t + sigma, &x, cfg)?;
        let first = tr.state(0);
        let last = tr.last_state();
        let gap = (first[0] - last[0]).hypot(first[1] - last[1]);
        residual = gap / first[0].hypot(first[1]);
        if residual <= CLOSURE_TOL {
            return Ok(PeriodicOrbit {
                sigma,
                times: tr.times().iter().map(|s| s - t).collect(),
                infective: tr.component(0),
                recovered: tr.component(1),
                closure_residual: residual,
                transient: t,
            });
        }
        log::info!("orbit residual {residual:e} after {t} weeks; extending transient");
        periods *= 2.0;
    }
    Err(Error::NoConvergenceToOrbit {
        residual,
        attempts: ORBIT_RETRIES + 1,
    })
}

/// Largest relative deviation `|phi(t + sigma) - phi(t)| / |phi|_inf` over
/// one more period integrated from the end of the orbit.
pub fn verify_periodicity(
    orbit: &PeriodicOrbit,
    params: &IrParams,
    forcing: &SeasonalForcing,
    cfg: &StepperConfig,
) -> Result<f64> {
    let sys = IrSystem::new(*params, forcing);
    let n = orbit.len() - 1;
    let x0 = [orbit.infective[n], orbit.recovered[n]];
    let t0 = orbit.transient + orbit.sigma;
    let next = integrate(&sys, t0, t0 + orbit.sigma, &x0, cfg)?;
    let scale = orbit
        .infective
        .iter()
        .chain(&orbit.recovered)
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let worst = (0..next.len().min(orbit.len()))
        .map(|k| {
            let s = next.state(k);
            (s[0] - orbit.infective[k])
                .abs()
                .max((s[1] - orbit.recovered[k]).abs())
        })
        .fold(0.0f64, f64::max);
    Ok(worst / scale)
}

/// `Phi` at a single state.
pub fn phi(params: &IrParams, infective: f64, recovered: f64) -> f64 {
    let nu = params.nu;
    let n = params.population;
    let d = infective + nu * n;
    let frac = infective / d;
    -nu * frac + nu * (n - infective - recovered) / d * (1.0 - frac)
}

/// `(t, Phi(t))` at every orbit sample.
pub fn phi_profile(orbit: &PeriodicOrbit, params: &IrParams) -> Vec<(f64, f64)> {
    (0..orbit.len())
        .map(|k| (orbit.times[k], phi(params, orbit.infective[k], orbit.recovered[k])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RMax {
    pub value: f64,
    /// Phase at which `Phi` peaks.
    pub t_argmax: f64,
    /// Largest sampled `Phi` before refinement.
    pub phi_sampled: f64,
    pub phi_refined: f64,
}

/// `r0 * max Phi`, with a three-point parabolic refinement around the
/// sampled maximum. Neighbours wrap around the period when the maximum sits
/// at either end of a closed profile.
pub fn r_max(r0: f64, profile: &[(f64, f64)]) -> Result<RMax> {
    if profile.is_empty() {
        return Err(Error::invalid("phi", "empty profile"));
    }
    let (k, &(tk, fk)) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    let n = profile.len();
    let mut refined = (fk, tk);
    if n >= 4 {
        // the last sample repeats the first phase of a periodic profile
        let period_len = n - 1;
        let at = |j: isize| profile[j.rem_euclid(period_len as isize) as usize].1;
        let kk = (k % period_len) as isize;
        let (f0, f1, f2) = (at(kk - 1), at(kk), at(kk + 1));
        let curv = f0 - 2.0 * f1 + f2;
        if curv < 0.0 {
            let off = 0.5 * (f0 - f2) / curv;
            if off.abs() <= 1.0 {
                let h = profile[1].0 - profile[0].0;
                refined = (f1 - 0.25 * (f0 - f2) * off, tk + off * h);
            }
        }
    } else if n == 3 {
        let (f0, f1, f2) = (profile[0].1, profile[1].1, profile[2].1);
        let curv = f0 - 2.0 * f1 + f2;
        if k == 1 && curv < 0.0 {
            let off = 0.5 * (f0 - f2) / curv;
            refined = (f1 - 0.25 * (f0 - f2) * off, tk + off * (profile[1].0 - profile[0].0));
        }
    }
    let phi_refined = refined.0.max(fk);
    Ok(RMax {
        value: r0 * phi_refined,
        t_argmax: refined.1,
        phi_sampled: fk,
        phi_refined,
    })
}

/// `R0 * max Phi` along the trajectory from `x0` over `[0, t_end]`, with no
/// transient removed. Unlike [`r_max`] this depends on the starting state
/// and the window length.
pub fn window_r_max(
    params: &IrParams,
    forcing: &SeasonalForcing,
    x0: HumanState,
    t_end: f64,
    cfg: &StepperConfig,
) -> Result<f64> {
    if !(t_end > 0.0) {
        return Err(Error::invalid("t_end", "window must be positive"));
    }
    let sys = IrSystem::new(*params, forcing);
    let tr = integrate(&sys, 0.0, t_end, &x0.to_array(), cfg)?;
    let top = tr
        .states()
        .map(|x| phi(params, x[0], x[1]))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(params.r0(forcing.alpha()) * top)
}

pub fn classify(r0: f64, r_max: Option<f64>) -> Classification {
    if r0 < 1.0 {
        Classification::DiesOut
    } else if r0 > 1.0 && r_max.is_some_and(|r| r < 1.0) {
        Classification::StableEndemicCycle
    } else {
        Classification::Inconclusive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    /// Transient length in periods.
    pub transient_periods: f64,
    pub stepper: StepperConfig,
    /// Orbit tracing starts here instead of the endemic equilibrium.
    pub x_init: Option<HumanState>,
    pub existence_tol: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            transient_periods: 50.0,
            stepper: StepperConfig::tracing(),
            x_init: None,
            existence_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub r0: f64,
    pub r_max: Option<f64>,
    pub trivial_multipliers: [f64; 2],
    pub classification: Classification,
    pub closure_residual: Option<f64>,
    pub sigma: f64,
    /// Existence of a periodic solution near the trivial state, and near the
    /// endemic equilibrium when there is one.
    pub existence_dfe: bool,
    pub existence_ee: Option<bool>,
    /// Phase of the `Phi` maximum and the number of samples it was taken over.
    pub phi_argmax: Option<f64>,
    pub phi_samples: usize,
    pub step: f64,
    #[serde(skip)]
    pub orbit: Option<PeriodicOrbit>,
}

/// Full analysis: trivial multipliers, and for `R0 > 1` an orbit trace with
/// `R_max` and the resulting classification.
pub fn analyze(
    params: &IrParams,
    forcing: &SeasonalForcing,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    params.validate()?;
    opts.stepper.validate()?;
    let sigma = forcing.sigma();
    let trivial = trivial_stability(params, forcing);
    let eq = equilibria(params, forcing.alpha());
    let existence_dfe = existence_check(
        ir_jacobian_at(params, forcing.alpha(), [0.0, 0.0]),
        sigma,
        opts.existence_tol,
    );
    let existence_ee = eq.ee.map(|ee| {
        existence_check(
            ir_jacobian_at(params, forcing.alpha(), ee.to_array()),
            sigma,
            opts.existence_tol,
        )
    });
    let mut report = StabilityReport {
        r0: trivial.r0,
        r_max: None,
        trivial_multipliers: trivial.multipliers,
        classification: classify(trivial.r0, None),
        closure_residual: None,
        sigma,
        existence_dfe,
        existence_ee,
        phi_argmax: None,
        phi_samples: 0,
        step: opts.stepper.h,
        orbit: None,
    };
    if trivial.r0 > 1.0 {
        let orbit = trace_orbit(
            params,
            forcing,
            opts.x_init,
            opts.transient_periods * sigma,
            &opts.stepper,
        )?;
        let profile = phi_profile(&orbit, params);
        let rm = r_max(trivial.r0, &profile)?;
        report.r_max = Some(rm.value);
        report.classification = classify(trivial.r0, Some(rm.value));
        report.closure_residual = Some(orbit.closure_residual);
        report.phi_argmax = Some(rm.t_argmax);
        report.phi_samples = profile.len();
        report.orbit = Some(orbit);
    }
    Ok(report)
}

fn ir_jacobian_at(params: &IrParams, alpha: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
    crate::model::autonomous_jacobian(params, alpha, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(nu: f64) -> IrParams {
        IrParams::new(1e7, 1.0 / 3120.0, 0.25, 1.0 / 36.0, nu).unwrap()
    }

    #[test]
    fn existence_on_dfe_and_lattice() {
        let p = params(0.5);
        let j = crate::model::autonomous_jacobian(&p, 0.2, [0.0, 0.0]);
        assert!(existence_check(j, 52.0, 1e-9));
        let sigma = 52.0;
        let w = 2.0 * PI / sigma;
        // rotation generator with eigenvalues +-i w
        assert!(!existence_check([[0.0, w], [-w, 0.0]], sigma, 1e-9));
        assert!(!existence_check([[0.0, 2.0 * w], [-2.0 * w, 0.0]], sigma, 1e-9));
        assert!(existence_check([[0.0, 1.5 * w], [-1.5 * w, 0.0]], sigma, 1e-9));
        // zero eigenvalue sits on the lattice
        assert!(!existence_check([[0.0, 0.0], [0.0, -1.0]], sigma, 1e-9));
    }

    #[test]
    fn existence_at_endemic_equilibrium() {
        let p = params(0.5);
        let alpha = 0.2;
        let ee = equilibria(&p, alpha).ee.unwrap();
        let j = crate::model::autonomous_jacobian(&p, alpha, ee.to_array());
        let ev = eigenvalues_2x2(j);
        assert!(ev.iter().all(|e| e.0 < 0.0));
        assert!(existence_check(j, 52.0, 1e-9));
    }

    #[test]
    fn trivial_verdicts() {
        let p = params(0.5);
        let scale = (p.gamma + p.mu) * p.nu;
        let f = SeasonalForcing::from_decimal(0.5 * scale, &[0.1 * scale], &["0.02"]).unwrap();
        let low = trivial_stability(&p, &f);
        assert_relative_eq!(low.r0, 0.5, epsilon = 1e-12);
        assert_eq!(low.classification, Classification::DiesOut);
        assert!(low.multipliers.iter().all(|&m| m < 1.0));
        let high = trivial_stability(&p, &f.with_alpha(2.0 * scale).unwrap());
        assert!(high.multipliers[0] > 1.0);
        assert_eq!(high.classification, Classification::Inconclusive);
    }

    #[test]
    fn trivial_multipliers_closed_form_vs_numeric() {
        let p = params(0.02);
        let scale = (p.gamma + p.mu) * p.nu;
        for r0 in [0.6, 1.3] {
            let f = SeasonalForcing::from_decimal(r0 * scale, &[0.4 * scale], &["0.02"]).unwrap();
            let closed = trivial_stability(&p, &f).multipliers;
            let numeric = trivial_multipliers_numeric(&p, &f, &StepperConfig::tracing()).unwrap();
            for k in 0..2 {
                assert_relative_eq!(numeric[k], closed[k], max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn unforced_orbit_is_the_equilibrium() {
        let p = params(0.5);
        let f = SeasonalForcing::from_decimal(0.2, &[0.0], &["0.02"]).unwrap();
        let orbit = trace_orbit(&p, &f, None, 10.0 * f.sigma(), &StepperConfig::tracing()).unwrap();
        let ee = equilibria(&p, 0.2).ee.unwrap();
        assert!(orbit.closure_residual < 1e-10);
        for k in 0..orbit.len() {
            assert_relative_eq!(orbit.infective[k], ee.infective, max_relative = 1e-8);
        }
        assert_eq!(orbit.times[0], 0.0);
        assert_relative_eq!(*orbit.times.last().unwrap(), f.sigma());
    }

    #[test]
    fn orbit_preconditions() {
        let p = params(0.5);
        let f = SeasonalForcing::from_decimal(0.05, &[0.01], &["0.02"]).unwrap();
        assert!(matches!(
            trace_orbit(&p, &f, None, 1e4, &StepperConfig::tracing()),
            Err(Error::Precondition(_))
        ));
        let g = f.with_alpha(0.2).unwrap();
        assert!(matches!(
            trace_orbit(&p, &g, None, 5.0 * g.sigma(), &StepperConfig::tracing()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn phi_closed_forms() {
        let p = params(0.3);
        assert_eq!(phi(&p, 0.0, 0.0), 1.0);
        let nu = p.nu;
        let n = p.population;
        let expect = -nu / 2.0 + nu * (n - nu * n) / (2.0 * nu * n) * 0.5;
        assert_relative_eq!(phi(&p, nu * n, 0.0), expect, epsilon = 1e-15);
        assert_relative_eq!(expect, -nu / 2.0 + (1.0 - nu) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn r_max_of_flat_profile_is_r0() {
        let prof: Vec<(f64, f64)> = (0..9).map(|k| (k as f64, 1.0)).collect();
        assert_eq!(r_max(1.7, &prof).unwrap().value, 1.7);
        assert!(r_max(1.0, &[]).is_err());
    }

    #[test]
    fn parabolic_refinement_finds_vertex() {
        let prof: Vec<(f64, f64)> = (0..=20)
            .map(|k| {
                let t = k as f64 * 0.5;
                (t, 2.0 - (t - 3.3) * (t - 3.3))
            })
            .collect();
        let rm = r_max(1.0, &prof).unwrap();
        assert_relative_eq!(rm.phi_refined, 2.0, epsilon = 1e-12);
        assert_relative_eq!(rm.t_argmax, 3.3, epsilon = 1e-12);
        assert!(rm.phi_refined >= rm.phi_sampled);
    }

    #[test]
    fn window_r_max_from_dfe_is_r0() {
        let p = params(0.5);
        let f = SeasonalForcing::from_decimal(0.2, &[0.05], &["0.02"]).unwrap();
        let w = window_r_max(&p, &f, HumanState::new(0.0, 0.0), 100.0, &StepperConfig::tracing()).unwrap();
        assert_relative_eq!(w, p.r0(0.2), max_relative = 1e-14);
        let start = HumanState::new(1e3, 1e4);
        let short = window_r_max(&p, &f, start, 10.0, &StepperConfig::tracing()).unwrap();
        let long = window_r_max(&p, &f, start, 200.0, &StepperConfig::tracing()).unwrap();
        assert!(long >= short && short < p.r0(0.2));
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify(0.99549, None), Classification::DiesOut);
        assert_eq!(classify(0.5, Some(3.0)), Classification::DiesOut);
        assert_eq!(classify(1.00937, Some(0.99891)), Classification::StableEndemicCycle);
        assert_eq!(classify(1.5, Some(1.2)), Classification::Inconclusive);
        assert_eq!(classify(1.5, None), Classification::Inconclusive);
        assert_eq!(classify(1.0, Some(0.5)), Classification::Inconclusive);
    }

    #[test]
    fn forced_orbit_report() {
        let p = params(0.01);
        let scale = (p.gamma + p.mu) * p.nu;
        let f = SeasonalForcing::from_decimal(1.5 * scale, &[0.3 * scale], &["0.02"]).unwrap();
        let rep = analyze(&p, &f, &StabilityOptions::default()).unwrap();
        let orbit = rep.orbit.as_ref().unwrap();
        assert!(orbit.closure_residual <= CLOSURE_TOL);
        assert!(orbit.min_infective() > 0.0);
        let r_max = rep.r_max.unwrap();
        assert!(r_max < rep.r0, "{r_max} vs {}", rep.r0);
        assert!(rep.existence_dfe && rep.existence_ee == Some(true));
        let drift = verify_periodicity(orbit, &p, &f, &StabilityOptions::default().stepper).unwrap();
        assert!(drift <= 1e-3, "{drift}");
        assert!(orbit.to_csv().contains("t,I,R\n"));
    }

    proptest! {
        #[test]
        fn classify_is_dies_out_below_threshold(r0 in 0.0f64..0.999, r in prop::option::of(0.0f64..5.0)) {
            prop_assert_eq!(classify(r0, r), Classification::DiesOut);
        }

        #[test]
        fn phi_below_one_on_positive_states(
            i in 1e-3f64..1e6, r in 0.0f64..1e6, nu in 1e-4f64..2.0,
        ) {
            let p = params(nu);
            prop_assert!(phi(&p, i, r) < 1.0);
        }
    }
}

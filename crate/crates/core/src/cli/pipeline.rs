//! Pipeline stages that sit on top of the library: fit reports, forecasts
//! from a fit and the synthetic data generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assimilate::{FitResult, FitStatus, FixedParams};
use crate::error::{Error, Result};
use crate::floquet::StabilityReport;
use crate::integrate::{integrate, StepperConfig, Trajectory};
use crate::model::{Frequency, Harmonic, IrParams, IrSystem, SeasonalForcing};
use crate::timeseries::{Cadence, IncidenceSeries, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParameters {
    pub alpha: f64,
    pub deltas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub nu: f64,
    #[serde(rename = "I0")]
    pub i0: f64,
    #[serde(rename = "R0")]
    pub r0_init: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedRates {
    #[serde(rename = "N")]
    pub population: f64,
    pub mu: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl From<FixedParams> for FixedRates {
    fn from(f: FixedParams) -> Self {
        Self {
            population: f.population,
            mu: f.mu,
            gamma: f.gamma,
            kappa: f.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

/// The `fit` output. Everything needed by later stages is in here, so the
/// pipeline carries no hidden state between subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub scheme: String,
    pub parameters: FittedParameters,
    pub sse: f64,
    pub r0: f64,
    pub status: FitStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub max_defect: f64,
    pub start_index: usize,
    pub converged_starts: usize,
    pub pool: usize,
    pub fixed: FixedRates,
    /// Weeks in the training window and the index of its first record.
    pub n_train: usize,
    pub first_index: i64,
    pub provenance: RunProvenance,
}

impl FitReport {
    pub fn new(fit: &FitResult, fixed: FixedParams, train: &IncidenceSeries, pool: usize, provenance: RunProvenance) -> Self {
        let z = &fit.decision;
        Self {
            scheme: fit.scheme.as_str().to_string(),
            parameters: FittedParameters {
                alpha: z.alpha,
                deltas: z.deltas.clone(),
                omegas: z.omegas.clone(),
                nu: z.nu,
                i0: z.i0(),
                r0_init: z.r0_init(),
            },
            sse: fit.sse,
            r0: fit.r0,
            status: fit.status,
            iterations: fit.iterations,
            kkt_residual: fit.kkt_residual,
            objective: fit.objective,
            max_defect: fit.max_defect,
            start_index: fit.start_index,
            converged_starts: fit.converged_starts,
            pool,
            fixed: fixed.into(),
            n_train: train.len(),
            first_index: train.first_index(),
            provenance,
        }
    }

    pub fn ir_params(&self) -> Result<IrParams> {
        let f = &self.fixed;
        IrParams::new(f.population, f.mu, f.gamma, f.kappa, self.parameters.nu)
    }

    /// The fitted forcing with frequencies rounded to at most `decimals`
    /// places. Fewer places are tried while the harmonics have no common
    /// period representable as a 64-bit rational.
    pub fn forcing(&self, decimals: u32) -> Result<SeasonalForcing> {
        let p = &self.parameters;
        let mut last = Error::NoCommonPeriod;
        for d in (1..=decimals).rev() {
            let harmonics = p
                .deltas
                .iter()
                .zip(&p.omegas)
                .map(|(&delta, &w)| {
                    Ok(Harmonic {
                        delta,
                        omega: Frequency::from_f64_rounded(w, d)?,
                    })
                })
                .collect::<Result<Vec<_>>>();
            match harmonics.and_then(|h| SeasonalForcing::new(p.alpha, h)) {
                Ok(f) => return Ok(f),
                Err(e @ Error::NoCommonPeriod) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

/// Decimal places used for fitted frequencies in forecasts: well below the
/// frequency resolution of any realistic series.
pub const FORECAST_OMEGA_DECIMALS: u32 = 12;

/// Integrates the fitted system from `(I0, R0)` over `[0, n_train - 1 + horizon]`.
pub fn forecast(report: &FitReport, horizon: f64, cfg: &StepperConfig) -> Result<Trajectory> {
    if report.status != FitStatus::Converged {
        return Err(Error::Precondition(format!(
            "forecast needs a converged fit, got status {}",
            report.status.as_str()
        )));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be a nonnegative number of weeks"));
    }
    let params = report.ir_params()?;
    let forcing = report.forcing(FORECAST_OMEGA_DECIMALS)?;
    let sys = IrSystem::new(params, &forcing);
    let t_end = (report.n_train - 1) as f64 + horizon;
    let x0 = [report.parameters.i0, report.parameters.r0_init];
    integrate(&sys, 0.0, t_end, &x0, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Train,
    Test,
    Forecast,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Train => "train",
            Segment::Test => "test",
            Segment::Forecast => "forecast",
        }
    }
}

/// Which window a forecast time falls in, given `n_test` held-out weeks.
pub fn segment_of(t: f64, n_train: usize, n_test: usize) -> Segment {
    let train_end = (n_train - 1) as f64;
    if t <= train_end + 1e-9 {
        Segment::Train
    } else if t <= train_end + n_test as f64 + 1e-9 {
        Segment::Test
    } else {
        Segment::Forecast
    }
}

/// Weekly incidence generated by the IR system of `params` started from
/// `initial`. Stepping uses `cfg.h`, which must divide one week. With
/// `noise > 0` each count gets independent Gaussian noise of relative size
/// `noise` (clipped at zero), drawn from a generator seeded with `seed`.
pub fn synthesize(
    params: &IrParams,
    forcing: &SeasonalForcing,
    initial: [f64; 2],
    weeks: usize,
    noise: f64,
    seed: u64,
    cfg: &StepperConfig,
) -> Result<IncidenceSeries> {
    if weeks < 2 {
        return Err(Error::invalid("weeks", "need at least two weeks"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise", "must be a nonnegative number"));
    }
    let per_week = (1.0 / cfg.h).round();
    if !(per_week >= 1.0 && (per_week * cfg.h - 1.0).abs() < 1e-12) {
        return Err(Error::invalid("h", "step must divide one week"));
    }
    let sys = IrSystem::new(*params, forcing);
    let tr = integrate(&sys, 0.0, (weeks - 1) as f64, &initial, cfg)?;
    let stride = per_week as usize;
    let mut counts: Vec<f64> = (0..weeks).map(|k| tr.state(k * stride)[0]).collect();
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for c in &mut counts {
            *c = (*c * (1.0 + noise * normal.sample(&mut rng))).max(0.0);
        }
    }
    IncidenceSeries::from_counts(Cadence::Weekly, Provenance::Synthetic, 0, &counts)
}

/// The `report` output: collected stage outputs plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub fits: Vec<FitReport>,
    pub stability: Vec<StabilityReport>,
    pub forecasts: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assimilate::SchemeId;

    fn report() -> FitReport {
        FitReport {
            scheme: SchemeId::S2.as_str().into(),
            parameters: FittedParameters {
                alpha: 2.628365e-5,
                deltas: vec![1.3e-5],
                omegas: vec![1.0 / 52.0],
                nu: 1e-4,
                i0: 500.0,
                r0_init: 2000.0,
            },
            sse: 0.0,
            r0: 1.05,
            status: FitStatus::Converged,
            iterations: 1,
            kkt_residual: 0.0,
            objective: 0.0,
            max_defect: 0.0,
            start_index: 0,
            converged_starts: 1,
            pool: 1,
            fixed: FixedRates {
                population: 1e7,
                mu: 1.0 / 3120.0,
                gamma: 0.25,
                kappa: 1.0 / 36.0,
            },
            n_train: 60,
            first_index: 0,
            provenance: RunProvenance {
                config_hash: String::new(),
                seed: 0,
                tool_version: String::new(),
            },
        }
    }

    #[test]
    fn zero_horizon_covers_training_window() {
        let r = report();
        let tr = forecast(&r, 0.0, &StepperConfig::tracing()).unwrap();
        assert_eq!(*tr.times().last().unwrap(), 59.0);
        assert_eq!(tr.state(0), &[500.0, 2000.0]);
        let longer = forecast(&r, 10.0, &StepperConfig::tracing()).unwrap();
        assert_eq!(*longer.times().last().unwrap(), 69.0);
        let mut bad = r.clone();
        bad.status = FitStatus::MaxIter;
        assert!(matches!(forecast(&bad, 0.0, &StepperConfig::tracing()), Err(Error::Precondition(_))));
    }

    #[test]
    fn forcing_rounds_frequencies() {
        let r = report();
        let f = r.forcing(6).unwrap();
        assert_eq!(f.harmonics()[0].omega, Frequency::from_ratio(19231, 1_000_000).unwrap());
        assert!((r.forcing(12).unwrap().harmonics()[0].omega.value() - 1.0 / 52.0).abs() < 1e-12);
    }

    #[test]
    fn segments() {
        assert_eq!(segment_of(0.0, 10, 3), Segment::Train);
        assert_eq!(segment_of(9.0, 10, 3), Segment::Train);
        assert_eq!(segment_of(9.25, 10, 3), Segment::Test);
        assert_eq!(segment_of(12.0, 10, 3), Segment::Test);
        assert_eq!(segment_of(12.5, 10, 3), Segment::Forecast);
    }

    #[test]
    fn synthetic_series_matches_forecast_nodes() {
        let r = report();
        let params = r.ir_params().unwrap();
        let forcing = SeasonalForcing::new(
            r.parameters.alpha,
            vec![Harmonic {
                delta: 1.3e-5,
                omega: Frequency::from_ratio(1, 52).unwrap(),
            }],
        )
        .unwrap();
        let cfg = StepperConfig::tracing();
        let s = synthesize(&params, &forcing, [500.0, 2000.0], 20, 0.0, 1, &cfg).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.provenance(), Provenance::Synthetic);
        let tr = forecast(&r, 0.0, &cfg).unwrap();
        for (k, c) in s.counts().iter().enumerate() {
            assert!((c - tr.state(4 * k)[0]).abs() <= 1e-9 * c);
        }
        let a = synthesize(&params, &forcing, [500.0, 2000.0], 20, 0.1, 9, &cfg).unwrap();
        let b = synthesize(&params, &forcing, [500.0, 2000.0], 20, 0.1, 9, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s);
        assert!(synthesize(&params, &forcing, [500.0, 2000.0], 20, 0.0, 1, &cfg.with_h(0.3)).is_err());
    }
}

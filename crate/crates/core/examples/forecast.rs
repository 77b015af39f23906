//! Fit the first part of a synthetic series and forecast the held-out rest.
//!
//! ```text
//! cargo run --release --example forecast [n_train] [horizon]
//! ```

use seasonal_ir::assimilate::{multi_start, transcribe, FixedParams, SchemeId, SchemeSpec, SolveOptions};
use seasonal_ir::cli::{forecast, segment_of, synthesize, FitReport, RunProvenance, Segment};
use seasonal_ir::integrate::StepperConfig;
use seasonal_ir::model::{Frequency, Harmonic, IrParams, SeasonalForcing};
use seasonal_ir::timeseries::split_train_test;

fn main() -> seasonal_ir::Result<()> {
    let n_train: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let horizon: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(260.0);

    let params = IrParams::new(1e7, 1.0 / 3120.0, 0.25, 1.0 / 36.0, 2e-4)?;
    let alpha = 1.1 * (params.gamma + params.mu) * params.nu;
    let omega = Frequency::from_ratio(1, 52)?;
    let forcing = SeasonalForcing::new(alpha, vec![Harmonic { delta: 0.3 * alpha, omega }])?;
    let cfg = StepperConfig::tracing();
    let series = synthesize(&params, &forcing, [300.0, 5000.0], 400, 0.0, 0, &cfg)?;
    let (train, test) = split_train_test(&series, n_train)?;

    let fixed = FixedParams::from(params);
    let problem = transcribe(&SchemeSpec::single(SchemeId::S2, omega.value()), &train, fixed)?;
    let fit = multi_start(&problem, 8, 1, &SolveOptions::default())?;
    let report = FitReport::new(&fit, fixed, &train, 8, RunProvenance {
        config_hash: String::new(),
        seed: 1,
        tool_version: seasonal_ir::cli::TOOL_VERSION.into(),
    });
    println!("fit {} with R0 = {:.5} (truth {:.5})", fit.status.as_str(), fit.r0, params.r0(alpha));

    let tr = forecast(&report, horizon, &cfg)?;
    let mut worst = 0.0f64;
    for (t, x) in tr.times().iter().zip(tr.states()) {
        if segment_of(*t, train.len(), test.len()) == Segment::Test && (t - t.round()).abs() < 1e-9 {
            let k = t.round() as usize - train.len();
            worst = worst.max((x[0] - test.counts()[k]).abs() / test.counts()[k]);
        }
    }
    println!("largest relative error over {} held-out weeks: {worst:.2e}", test.len());
    let tail: Vec<f64> = tr.component(0).into_iter().rev().take(4 * 52).collect();
    println!(
        "last year of the forecast: I in [{:.2}, {:.2}]",
        tail.iter().copied().fold(f64::INFINITY, f64::min),
        tail.iter().copied().fold(0.0, f64::max)
    );
    Ok(())
}

//! Stability analysis of the three-harmonic fit to the raw weekly data.
//!
//! ```text
//! cargo run --release --example stability [transient_periods]
//! ```

use seasonal_ir::floquet::{analyze, verify_periodicity, StabilityOptions};
use seasonal_ir::model::{equilibria, IrParams, SeasonalForcing};

fn main() -> seasonal_ir::Result<()> {
    let periods: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("transient periods"))
        .unwrap_or(10.0);
    let params = IrParams::new(1e7, 1.0 / 3120.0, 0.25, 1.0 / 36.0, 6.23095e-4)?;
    let forcing = SeasonalForcing::from_decimal(
        1.57434e-4,
        &[-8.50356e-6, 3.18808e-5, -2.09876e-5],
        &["0.00609", "0.01882", "0.02476"],
    )?;
    println!("R0    = {:.6}", params.r0(forcing.alpha()));
    println!("sigma = {} weeks", forcing.sigma());
    if let Some(ee) = equilibria(&params, forcing.alpha()).ee {
        println!("EE    = ({:.3}, {:.3})", ee.infective, ee.recovered);
    }

    let opts = StabilityOptions {
        transient_periods: periods,
        ..StabilityOptions::default()
    };
    let started = std::time::Instant::now();
    let report = analyze(&params, &forcing, &opts)?;
    println!("traced {periods} periods in {:.1?}", started.elapsed());
    println!("trivial multipliers = {:?}", report.trivial_multipliers);
    if let Some(orbit) = &report.orbit {
        println!(
            "orbit I in [{:.3}, {:.3}], closure residual {:.2e}",
            orbit.min_infective(),
            orbit.max_infective(),
            orbit.closure_residual
        );
        let drift = verify_periodicity(orbit, &params, &forcing, &opts.stepper)?;
        println!("periodicity drift over one more period = {drift:.2e}");
    }
    println!("R_max = {:?}", report.r_max);
    println!("classification = {}", report.classification.as_str());
    Ok(())
}

//! The host-vector model against its quasi-steady IR reduction when the
//! mosquito dynamics are fast.
//!
//! ```text
//! cargo run --release --example siruv_qssa [theta]
//! ```

use seasonal_ir::integrate::{integrate, StepperConfig};
use seasonal_ir::model::{qssa_vector, IrSystem, SeasonalForcing, SiruvParams, SiruvSystem};

fn main() -> seasonal_ir::Result<()> {
    // mosquito death rate per week; larger means a cleaner separation
    let theta: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3.5);
    let n = 1e6;
    let nu = 0.01;
    let sv = SiruvParams {
        population: n,
        mu: 1.0 / 3120.0,
        gamma: 0.25,
        kappa: 1.0 / 36.0,
        recruitment: 2.0 * theta * n,
        rho: theta / nu,
        theta,
    };
    sv.validate()?;
    let ir = sv.to_ir();
    let alpha = 1.3 * (ir.gamma + ir.mu) * ir.nu;
    let forcing = SeasonalForcing::from_decimal(alpha, &[0.4 * alpha], &["0.019230"])?;

    let (i0, r0) = (200.0, 1e4);
    let (u0, v0) = qssa_vector(&sv, i0);
    let full = SiruvSystem {
        params: sv,
        forcing: &forcing,
    };
    let reduced = IrSystem::new(ir, &forcing);
    let cfg = StepperConfig::tracing();
    let weeks = 520.0;
    let a = integrate(&full, 0.0, weeks, &[n - i0 - r0, i0, r0, u0, v0], &cfg)?;
    let b = integrate(&reduced, 0.0, weeks, &[i0, r0], &cfg)?;

    println!("theta = {theta}/week, nu = theta/rho = {nu}, R0 = {:.4}", ir.r0(alpha));
    println!("{:>6} {:>14} {:>14} {:>10}", "week", "I (SIRUV)", "I (IR)", "rel diff");
    let mut worst = 0.0f64;
    for k in (0..a.len()).step_by(4 * 26) {
        let (x, y) = (a.state(k)[1], b.state(k)[0]);
        let rel = (x - y).abs() / y.abs().max(1.0);
        worst = worst.max(rel);
        println!("{:>6.0} {:>14.4} {:>14.4} {:>10.2e}", a.times()[k], x, y, rel);
    }
    println!("largest sampled relative difference: {worst:.2e}");
    Ok(())
}

//! Dominant frequencies of a weekly series and the forcing they seed.
//!
//! ```text
//! cargo run --example spectrum
//! ```

use std::f64::consts::PI;

use seasonal_ir::spectral::{dft_magnitude, peak_to_forcing_seed, top_peaks};
use seasonal_ir::timeseries::{Cadence, IncidenceSeries, Provenance};

fn main() -> seasonal_ir::Result<()> {
    // annual and semiannual cycles on a 520-week grid, both on DFT bins
    let n = 520;
    let counts: Vec<f64> = (0..n)
        .map(|t| {
            let t = t as f64;
            200.0 + 80.0 * (2.0 * PI * t / 52.0).cos() + 30.0 * (2.0 * PI * t / 26.0 + 0.4).cos()
        })
        .collect();
    let series = IncidenceSeries::from_counts(Cadence::Weekly, Provenance::Synthetic, 0, &counts)?;
    let spectrum = dft_magnitude(&series)?;
    let peaks = top_peaks(&spectrum, 2, None)?;
    for p in &peaks {
        println!(
            "rank {}: bin {:>3}  frequency {} = {:.6} per week  period {:.1} weeks  |X| {:.1}",
            p.rank,
            p.bin,
            p.frequency.ratio(),
            p.frequency.value(),
            p.period_weeks(),
            p.magnitude
        );
    }
    let seed = peak_to_forcing_seed(&peaks, 1e-4)?;
    println!("seeded forcing: {} harmonics, common period {} weeks", seed.harmonics().len(), seed.sigma());
    Ok(())
}

//! Daily counts to a filtered weekly training series: ingestion, weekly
//! aggregation, centered moving average and the train/test split.
//!
//! ```text
//! cargo run --example preprocess [daily.csv]
//! ```
//!
//! Without an argument a seasonal daily series is generated and written to
//! a temporary file first.

use std::f64::consts::PI;

use seasonal_ir::timeseries::{aggregate_weekly, ingest_daily, moving_average, split_train_test, FilterSpec};

fn demo_file() -> std::io::Result<tempfile::TempPath> {
    let mut text = String::from("day,cases\n");
    for d in 0..7 * 505 {
        let week = d as f64 / 7.0;
        let mean = 20.0 + 12.0 * (2.0 * PI * week / 52.0).cos() + 4.0 * (2.0 * PI * week / 26.0).sin();
        // deterministic day-of-week reporting pattern
        let weekday = [1.2, 1.1, 1.0, 1.0, 0.9, 0.5, 0.3][d % 7];
        text.push_str(&format!("{d},{}\n", (mean * weekday).round()));
    }
    let path = tempfile::Builder::new().suffix(".csv").tempfile()?.into_temp_path();
    std::fs::write(&path, text)?;
    Ok(path)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let demo;
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            demo = demo_file()?;
            demo.to_path_buf()
        }
    };
    let daily = ingest_daily(&path)?;
    let weekly = aggregate_weekly(&daily)?;
    let filtered = moving_average(&weekly, FilterSpec::default())?;
    println!("{} days -> {} weeks (total {} cases)", daily.len(), weekly.len(), weekly.total());
    println!("peak week: raw {:.0}, filtered {:.1}", weekly.max_count(), filtered.max_count());

    let n_train = weekly.len().saturating_sub(32).max(1);
    let (train, test) = split_train_test(&filtered, n_train)?;
    println!(
        "train weeks {}..={}, test weeks {}..={}",
        train.first_index(),
        train.first_index() + train.len() as i64 - 1,
        test.first_index(),
        test.first_index() + test.len() as i64 - 1
    );
    for (r, f) in weekly.records().iter().zip(filtered.records()).take(6) {
        println!("week {:>3}: raw {:>6.0} filtered {:>8.2}", r.time_index, r.count, f.count);
    }
    Ok(())
}

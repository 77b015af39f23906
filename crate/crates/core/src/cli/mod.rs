//! Command-line pipeline: `ingest → filter → spectrum → fit → stability →
//! forecast → report`, plus `synth` for synthetic data.
//!
//! Every subcommand reads files written by earlier ones and writes its own
//! outputs atomically. Exit codes: 0 success, 1 usage or input error,
//! 2 numerical failure.

pub mod config;
pub mod output;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::assimilate::{multi_start, transcribe, FitStatus, SchemeId, SolveOptions};
use crate::error::{Error, Result};
use crate::floquet::{analyze, phi_profile, StabilityOptions, StabilityReport};
use crate::spectral::{dft_magnitude, top_peaks};
use crate::timeseries::{
    aggregate_weekly, ingest_daily, moving_average, read_series, series_to_csv, split_train_test, Cadence,
    FilterSpec, IncidenceSeries, Provenance,
};

pub use config::{Config, KeyValues, ParamFile};
pub use output::{to_json, write_atomic, write_json};
pub use pipeline::{forecast, segment_of, synthesize, FitReport, RunProvenance, RunReport, Segment};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "seasonal-ir", version, about = "Seasonally forced IR epidemic model pipeline")]
pub struct Cli {
    /// Plain-text `key = value` configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a raw incidence CSV and write a weekly series.
    Ingest(IngestArgs),
    /// Centered moving average of a weekly series.
    Filter(FilterArgs),
    /// DFT magnitude spectrum and dominant peaks.
    Spectrum(SpectrumArgs),
    /// Multi-start collocation fit of one scheme.
    Fit(FitArgs),
    /// Floquet-type stability report for a fit.
    Stability(StabilityArgs),
    /// Trajectory of a fitted model past the training window.
    Forecast(ForecastArgs),
    /// Collect stage outputs into one report.
    Report(ReportArgs),
    /// Weekly incidence from a known parameter file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputCadence {
    Daily,
    Weekly,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "daily")]
    pub cadence: InputCadence,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub peaks: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Peak list as JSON.
    #[arg(long)]
    pub peaks_out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// One of 1, 2, 3, 4, mf.
    #[arg(long)]
    pub scheme: Option<SchemeId>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated target frequencies (cycles per week).
    #[arg(long, value_delimiter = ',')]
    pub omega_star: Option<Vec<f64>>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add the constraint R(0) >= 0.
    #[arg(long)]
    pub positivity: bool,
    #[arg(long)]
    pub train_csv: Option<PathBuf>,
    /// Fixed rates (N, mu, gamma, kappa) from a parameter file.
    #[arg(long)]
    pub params_file: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Fit report JSON.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the traced orbit.
    #[arg(long)]
    pub orbit_csv: Option<PathBuf>,
    #[arg(long)]
    pub transient_periods: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub omega_decimals: Option<u32>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// Weeks beyond the training window.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Full weekly series; records past the training window are treated as
    /// held-out test data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Calendar date of week 0 (YYYY-MM-DD); adds a date column.
    #[arg(long)]
    pub start_date: Option<String>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true)]
    pub fit: Vec<PathBuf>,
    #[arg(long)]
    pub stability: Vec<PathBuf>,
    #[arg(long)]
    pub forecast: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value_t = 505)]
    pub weeks: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative Gaussian noise on each count.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

/// Parses `args` (program name first) and runs the subcommand, printing
/// errors to standard error. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Ingest(a) => ingest_cmd(&cfg, a),
        Command::Filter(a) => {
            if let Some(w) = a.window {
                cfg.window = w;
            }
            filter_cmd(&cfg, a)
        }
        Command::Spectrum(a) => {
            if let Some(m) = a.peaks {
                cfg.peaks = m;
            }
            spectrum_cmd(&cfg, a)
        }
        Command::Fit(a) => fit_cmd(&mut cfg, a),
        Command::Stability(a) => {
            if let Some(t) = a.transient_periods {
                cfg.transient_periods = t;
            }
            if let Some(h) = a.h {
                cfg.stepper.h = h;
            }
            if let Some(d) = a.omega_decimals {
                cfg.omega_decimals = d;
            }
            stability_cmd(&cfg, a)
        }
        Command::Forecast(a) => {
            if let Some(t) = a.horizon {
                cfg.horizon = t;
            }
            if let Some(h) = a.h {
                cfg.stepper.h = h;
            }
            if a.start_date.is_some() {
                cfg.start_date = a.start_date.clone();
            }
            forecast_cmd(&cfg, a)
        }
        Command::Report(a) => report_cmd(&cfg, a),
        Command::Synth(a) => {
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(h) = a.h {
                cfg.stepper.h = h;
            }
            synth_cmd(&cfg, a)
        }
    }
}

fn out_path(cfg: &Config, given: &Option<PathBuf>, default_name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.output_dir.join(default_name))
}

fn svg_path(path: &Path) -> PathBuf {
    path.with_extension("svg")
}

fn series_points(series: &IncidenceSeries) -> Vec<(f64, f64)> {
    series
        .records()
        .iter()
        .map(|r| (r.time_index as f64, r.count))
        .collect()
}

fn write_series(path: &Path, series: &IncidenceSeries, svg: bool, title: &str) -> Result<()> {
    write_atomic(path, series_to_csv(series).as_bytes())?;
    if svg {
        let pts = series_points(series);
        let chart = output::line_chart(title, series.cadence().as_str(), "cases", &[output::Line {
            label: series.provenance().as_str(),
            points: &pts,
            markers: false,
        }]);
        write_atomic(svg_path(path), chart.as_bytes())?;
    }
    println!("wrote {} ({} records)", path.display(), series.len());
    Ok(())
}

fn ingest_cmd(cfg: &Config, a: &IngestArgs) -> Result<()> {
    let input = a
        .input
        .clone()
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| Error::Config("no input file (use --input or `input =`)".into()))?;
    let weekly = match a.cadence {
        InputCadence::Daily => aggregate_weekly(&ingest_daily(&input)?)?,
        InputCadence::Weekly => read_series(&input, Cadence::Weekly, Provenance::Raw)?,
    };
    write_series(&out_path(cfg, &a.out, "weekly.csv"), &weekly, a.svg, "weekly incidence")
}

fn read_weekly(path: &Path) -> Result<IncidenceSeries> {
    let s = read_series(path, Cadence::Weekly, Provenance::Raw)?;
    if s.cadence() != Cadence::Weekly {
        return Err(Error::WrongCadence {
            expected: "weekly",
            got: s.cadence().as_str(),
        });
    }
    Ok(s)
}

fn filter_cmd(cfg: &Config, a: &FilterArgs) -> Result<()> {
    let s = read_series(&a.input, Cadence::Weekly, Provenance::Raw)?;
    let f = moving_average(&s, FilterSpec { window: cfg.window })?;
    write_series(&out_path(cfg, &a.out, "filtered.csv"), &f, a.svg, "filtered incidence")
}

#[derive(Serialize)]
struct PeakRow {
    rank: usize,
    bin: usize,
    frequency: f64,
    frequency_exact: String,
    period_weeks: f64,
    magnitude: f64,
}

fn spectrum_cmd(cfg: &Config, a: &SpectrumArgs) -> Result<()> {
    let s = read_series(&a.input, Cadence::Weekly, Provenance::Raw)?;
    let spec = dft_magnitude(&s)?;
    let peaks = top_peaks(&spec, cfg.peaks, None)?;
    let rows: Vec<PeakRow> = peaks
        .iter()
        .map(|p| PeakRow {
            rank: p.rank,
            bin: p.bin,
            frequency: p.frequency.value(),
            frequency_exact: p.frequency.ratio().to_string(),
            period_weeks: p.period_weeks(),
            magnitude: p.magnitude,
        })
        .collect();
    let out = out_path(cfg, &a.out, "spectrum.csv");
    let peaks_out = a.peaks_out.clone().unwrap_or_else(|| out.with_extension("peaks.json"));
    let peaks_json = to_json(&rows)?;
    write_atomic(&out, spec.to_csv().as_bytes())?;
    write_atomic(&peaks_out, peaks_json.as_bytes())?;
    if a.svg {
        let pts: Vec<(f64, f64)> = spec.frequencies().into_iter().zip(spec.magnitudes().iter().copied()).collect();
        let chart = output::line_chart("DFT magnitude", "cycles per week", "|X|", &[output::Line {
            label: "spectrum",
            points: &pts,
            markers: false,
        }]);
        write_atomic(svg_path(&out), chart.as_bytes())?;
    }
    for r in &rows {
        println!(
            "peak {}: bin {} frequency {} ({:.4}) period {:.2} weeks magnitude {:.6e}",
            r.rank, r.bin, r.frequency_exact, r.frequency, r.period_weeks, r.magnitude
        );
    }
    println!("wrote {} and {}", out.display(), peaks_out.display());
    Ok(())
}

fn fit_cmd(cfg: &mut Config, a: &FitArgs) -> Result<()> {
    if let Some(s) = a.scheme {
        cfg.scheme = s;
    }
    if a.lambda.is_some() {
        cfg.lambda = a.lambda;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(w) = &a.omega_star {
        cfg.omega_star = w.clone();
    }
    if let Some(p) = a.pool {
        cfg.pool = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.positivity {
        cfg.positivity = true;
    }
    if a.train_csv.is_some() {
        cfg.input = a.train_csv.clone();
    }
    if a.n_train.is_some() {
        cfg.n_train = a.n_train;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    if let Some(p) = &a.params_file {
        let kv = KeyValues::read(p)?;
        for (key, slot) in [
            ("N", &mut cfg.population),
            ("mu", &mut cfg.mu),
            ("gamma", &mut cfg.gamma),
            ("kappa", &mut cfg.kappa),
        ] {
            if let Some(v) = kv.real(key)? {
                *slot = v;
            }
        }
    }
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config("no training series (use --train-csv or `input =`)".into()))?;
    let series = read_weekly(&input)?;
    let train = match cfg.n_train {
        Some(n) if n < series.len() => split_train_test(&series, n)?.0,
        _ => series,
    };
    let spec = cfg.scheme_spec()?;
    let fixed = cfg.fixed()?;
    let problem = transcribe(&spec, &train, fixed)?;
    let opts = SolveOptions {
        jobs: cfg.jobs,
        ..SolveOptions::default()
    };
    let fit = multi_start(&problem, cfg.pool, cfg.seed, &opts)?;
    // thread count does not change results, so it stays out of the hash
    let hashed = Config {
        jobs: None,
        ..cfg.clone()
    };
    let report = FitReport::new(&fit, fixed, &train, cfg.pool, RunProvenance {
        config_hash: hashed.hash(),
        seed: cfg.seed,
        tool_version: TOOL_VERSION.to_string(),
    });
    let out = out_path(cfg, &a.out, "fit.json");
    write_json(&out, &report)?;
    if a.svg {
        let data = series_points(&train);
        let first = train.first_index() as f64;
        let model: Vec<(f64, f64)> = fit
            .decision
            .states
            .iter()
            .enumerate()
            .map(|(k, s)| (first + k as f64, s[0]))
            .collect();
        let chart = output::line_chart(&format!("scheme {} fit", spec.id), "week", "I", &[
            output::Line { label: "fit", points: &model, markers: false },
            output::Line { label: "data", points: &data, markers: true },
        ]);
        write_atomic(svg_path(&out), chart.as_bytes())?;
    }
    let p = &report.parameters;
    println!(
        "scheme {}: status {} after {} iterations ({} of {} starts converged)",
        report.scheme,
        report.status.as_str(),
        report.iterations,
        report.converged_starts,
        report.pool
    );
    println!(
        "alpha {:.6e} deltas {:?} omegas {:?} nu {:.6e} I0 {:.4} R0 {:.4} sse {:.6e} r0 {:.6}",
        p.alpha, p.deltas, p.omegas, p.nu, p.i0, p.r0_init, report.sse, report.r0
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn stability_cmd(cfg: &Config, a: &StabilityArgs) -> Result<()> {
    let fit: FitReport = output::read_json(&a.fit)?;
    let params = fit.ir_params()?;
    let forcing = fit.forcing(cfg.omega_decimals)?;
    let opts = StabilityOptions {
        transient_periods: cfg.transient_periods,
        stepper: cfg.stepper,
        ..StabilityOptions::default()
    };
    let rep = analyze(&params, &forcing, &opts)?;
    let out = out_path(cfg, &a.out, "stability.json");
    write_json(&out, &rep)?;
    if let (Some(path), Some(orbit)) = (&a.orbit_csv, &rep.orbit) {
        write_atomic(path, orbit.to_csv().as_bytes())?;
    }
    if a.svg {
        if let Some(orbit) = &rep.orbit {
            let phi: Vec<(f64, f64)> = phi_profile(orbit, &params)
                .into_iter()
                .map(|(t, f)| (t, rep.r0 * f))
                .collect();
            let chart = output::line_chart("R0 * Phi(t) over one period", "phase (weeks)", "R0 Phi", &[
                output::Line { label: "R0 Phi", points: &phi, markers: false },
            ]);
            write_atomic(svg_path(&out), chart.as_bytes())?;
        }
    }
    print_stability(&rep);
    println!("wrote {}", out.display());
    Ok(())
}

fn print_stability(rep: &StabilityReport) {
    println!(
        "R0 {:.6} R_max {} sigma {:.4} weeks multipliers [{:.6e}, {:.6e}] classification {}",
        rep.r0,
        rep.r_max.map_or("n/a".to_string(), |r| format!("{r:.6}")),
        rep.sigma,
        rep.trivial_multipliers[0],
        rep.trivial_multipliers[1],
        rep.classification.as_str()
    );
}

fn forecast_cmd(cfg: &Config, a: &ForecastArgs) -> Result<()> {
    let fit: FitReport = output::read_json(&a.fit)?;
    let start_date = cfg
        .start_date
        .as_deref()
        .map(|s| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| Error::Config(format!("start date `{s}`: {e}")))
        })
        .transpose()?;
    let data = a.data.as_deref().map(read_weekly).transpose()?;
    let observed = |t: f64| -> Option<f64> {
        let d = data.as_ref()?;
        if (t - t.round()).abs() > 1e-9 {
            return None;
        }
        let idx = fit.first_index + t.round() as i64;
        d.records().iter().find(|r| r.time_index == idx).map(|r| r.count)
    };
    let n_test = data.as_ref().map_or(0, |d| {
        let last = d.first_index() + d.len() as i64 - 1;
        (last - (fit.first_index + fit.n_train as i64 - 1)).max(0) as usize
    });
    let tr = forecast(&fit, cfg.horizon, &cfg.stepper)?;
    let mut csv = format!(
        "# scheme={} horizon={} n_train={} n_test={}\nt,{}I,R,segment,observed\n",
        fit.scheme,
        cfg.horizon,
        fit.n_train,
        n_test,
        if start_date.is_some() { "date," } else { "" }
    );
    let mut model_pts = Vec::with_capacity(tr.len());
    for (t, x) in tr.times().iter().zip(tr.states()) {
        csv.push_str(&format!("{t}"));
        if let Some(d0) = start_date {
            let day = d0 + Days::new((t * 7.0).round() as u64);
            csv.push_str(&format!(",{day}"));
        }
        let obs = observed(*t).map_or(String::new(), |v| v.to_string());
        csv.push_str(&format!(
            ",{:.17e},{:.17e},{},{obs}\n",
            x[0],
            x[1],
            segment_of(*t, fit.n_train, n_test).as_str()
        ));
        model_pts.push((*t, x[0]));
    }
    let out = out_path(cfg, &a.out, "forecast.csv");
    write_atomic(&out, csv.as_bytes())?;
    if a.svg {
        let data_pts: Vec<(f64, f64)> = data.as_ref().map_or(Vec::new(), |d| {
            d.records()
                .iter()
                .map(|r| ((r.time_index - fit.first_index) as f64, r.count))
                .collect()
        });
        let chart = output::line_chart("forecast of the infective compartment", "week", "I", &[
            output::Line { label: "model", points: &model_pts, markers: false },
            output::Line { label: "data", points: &data_pts, markers: true },
        ]);
        write_atomic(svg_path(&out), chart.as_bytes())?;
    }
    println!(
        "forecast to t = {} ({} nodes, final I {:.6e})",
        tr.times().last().copied().unwrap_or(0.0),
        tr.len(),
        tr.last_state()[0]
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn report_cmd(cfg: &Config, a: &ReportArgs) -> Result<()> {
    let fits = a.fit.iter().map(output::read_json).collect::<Result<Vec<FitReport>>>()?;
    let stability = a
        .stability
        .iter()
        .map(output::read_json)
        .collect::<Result<Vec<StabilityReport>>>()?;
    for p in &a.forecast {
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    let rep = RunReport {
        tool_version: TOOL_VERSION.to_string(),
        fits,
        stability,
        forecasts: a.forecast.iter().map(|p| p.display().to_string()).collect(),
    };
    let out = out_path(cfg, &a.out, "report.json");
    write_json(&out, &rep)?;
    for f in &rep.fits {
        println!(
            "scheme {}: {} sse {:.6e} r0 {:.6}",
            f.scheme,
            f.status.as_str(),
            f.sse,
            f.r0
        );
    }
    for s in &rep.stability {
        print_stability(s);
    }
    if rep.fits.iter().any(|f| f.status != FitStatus::Converged) {
        log::warn!("report includes unconverged fits");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn synth_cmd(cfg: &Config, a: &SynthArgs) -> Result<()> {
    let pf = ParamFile::read(&a.params)?;
    let series = synthesize(
        &pf.params,
        &pf.forcing,
        pf.initial.to_array(),
        a.weeks,
        a.noise,
        cfg.seed,
        &cfg.stepper,
    )?;
    write_series(&out_path(cfg, &a.out, "synth.csv"), &series, a.svg, "synthetic incidence")
}

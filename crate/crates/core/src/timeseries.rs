//! Incidence time series: ingestion, weekly aggregation, centered moving
//! average, train/test split and piecewise-linear interpolation.
//!
//! Series files are plain CSV with `time_index,count` lines. An optional
//! non-numeric header line is skipped, as are lines starting with `#`.
//! Written series carry a `# cadence=... provenance=...` header.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cadence {
    Daily,
    Weekly,
}

impl Cadence {
    pub fn as_str(self) -> &'static str {
        match self {
            Cadence::Daily => "daily",
            Cadence::Weekly => "weekly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Filtered,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Raw => "raw",
            Provenance::Filtered => "filtered",
            Provenance::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRecord {
    pub time_index: i64,
    pub count: f64,
}

/// A uniformly spaced sequence of nonnegative case counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceSeries {
    cadence: Cadence,
    provenance: Provenance,
    records: Vec<IncidenceRecord>,
}

impl IncidenceSeries {
    /// Builds a series, checking unit spacing and nonnegative finite counts.
    pub fn new(
        cadence: Cadence,
        provenance: Provenance,
        records: Vec<IncidenceRecord>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        for (k, rec) in records.iter().enumerate() {
            if !rec.count.is_finite() || rec.count < 0.0 {
                return Err(Error::NegativeCount { line: k + 1 });
            }
            if k > 0 && rec.time_index != records[k - 1].time_index + 1 {
                return Err(Error::MissingIndex {
                    expected: records[k - 1].time_index + 1,
                });
            }
        }
        Ok(Self {
            cadence,
            provenance,
            records,
        })
    }

    /// Series with indices `start, start+1, ...`.
    pub fn from_counts(
        cadence: Cadence,
        provenance: Provenance,
        start: i64,
        counts: &[f64],
    ) -> Result<Self> {
        let records = counts
            .iter()
            .enumerate()
            .map(|(k, &count)| IncidenceRecord {
                time_index: start + k as i64,
                count,
            })
            .collect();
        Self::new(cadence, provenance, records)
    }

    pub fn cadence(&self) -> Cadence {
        self.cadence
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn records(&self) -> &[IncidenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.count).collect()
    }

    pub fn first_index(&self) -> i64 {
        self.records[0].time_index
    }

    pub fn total(&self) -> f64 {
        self.records.iter().map(|r| r.count).sum()
    }

    pub fn max_count(&self) -> f64 {
        self.records.iter().map(|r| r.count).fold(0.0, f64::max)
    }
}

/// Parses `time_index,count` lines. Line numbers in errors are 1-based.
pub fn parse_records(text: &str) -> Result<Vec<IncidenceRecord>> {
    let mut out: Vec<(usize, IncidenceRecord)> = Vec::new();
    let mut seen_data = false;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (a, b) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Malformed {
                    line: line_no,
                    content: line.to_string(),
                })
            }
        };
        let index = a.parse::<i64>();
        let count = b.parse::<f64>();
        let (index, count) = match (index, count) {
            (Ok(i), Ok(c)) if c.is_finite() => (i, c),
            // A single header line before any data is tolerated.
            (Err(_), Err(_)) if !seen_data => {
                seen_data = true;
                continue;
            }
            _ => {
                return Err(Error::Malformed {
                    line: line_no,
                    content: line.to_string(),
                })
            }
        };
        seen_data = true;
        if count < 0.0 {
            return Err(Error::NegativeCount { line: line_no });
        }
        out.push((
            line_no,
            IncidenceRecord {
                time_index: index,
                count,
            },
        ));
    }
    out.sort_by_key(|(_, r)| r.time_index);
    for w in out.windows(2) {
        if w[0].1.time_index == w[1].1.time_index {
            let line = w[0].0.max(w[1].0);
            return Err(Error::DuplicateIndex {
                line,
                index: w[1].1.time_index,
            });
        }
    }
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

/// Reads a daily raw series from a CSV file.
pub fn ingest_daily(path: impl AsRef<Path>) -> Result<IncidenceSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(&text)?;
    if records.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: records.len(),
        });
    }
    IncidenceSeries::new(Cadence::Daily, Provenance::Raw, records)
}

/// Reads a series file, honoring a `# cadence=.. provenance=..` header when
/// present. Without a header the given defaults apply.
pub fn read_series(
    path: impl AsRef<Path>,
    default_cadence: Cadence,
    default_provenance: Provenance,
) -> Result<IncidenceSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cadence = default_cadence;
    let mut provenance = default_provenance;
    for line in text.lines().filter(|l| l.starts_with('#')) {
        for token in line.trim_start_matches('#').split_whitespace() {
            match token.split_once('=') {
                Some(("cadence", "daily")) => cadence = Cadence::Daily,
                Some(("cadence", "weekly")) => cadence = Cadence::Weekly,
                Some(("provenance", "raw")) => provenance = Provenance::Raw,
                Some(("provenance", "filtered")) => provenance = Provenance::Filtered,
                Some(("provenance", "synthetic")) => provenance = Provenance::Synthetic,
                _ => {}
            }
        }
    }
    let records = parse_records(&text)?;
    IncidenceSeries::new(cadence, provenance, records)
}

/// CSV rendering with the metadata header line.
pub fn series_to_csv(series: &IncidenceSeries) -> String {
    let mut s = format!(
        "# cadence={} provenance={}\n",
        series.cadence.as_str(),
        series.provenance.as_str()
    );
    for r in &series.records {
        s.push_str(&format!("{},{}\n", r.time_index, r.count));
    }
    s
}

/// Sums complete 7-day blocks starting at the first record. A trailing
/// partial week is dropped. Week indices start at 0.
pub fn aggregate_weekly(series: &IncidenceSeries) -> Result<IncidenceSeries> {
    if series.cadence != Cadence::Daily {
        return Err(Error::WrongCadence {
            expected: "daily",
            got: series.cadence.as_str(),
        });
    }
    let weeks = series.len() / 7;
    if weeks == 0 {
        return Err(Error::TooShort {
            needed: 7,
            got: series.len(),
        });
    }
    let counts: Vec<f64> = series.records[..weeks * 7]
        .chunks_exact(7)
        .map(|c| c.iter().map(|r| r.count).sum())
        .collect();
    IncidenceSeries::from_counts(Cadence::Weekly, series.provenance, 0, &counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub window: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { window: 13 }
    }
}

/// Centered moving average. Near the ends the window shrinks symmetrically
/// to the widest centered window that fits, so no phase delay is introduced
/// and the output has the input's length.
pub fn moving_average(series: &IncidenceSeries, spec: FilterSpec) -> Result<IncidenceSeries> {
    let w = spec.window;
    if w == 0 || w % 2 == 0 {
        return Err(Error::InvalidWindow {
            window: w,
            reason: "window must be a positive odd integer",
        });
    }
    let n = series.len();
    if w > n {
        return Err(Error::InvalidWindow {
            window: w,
            reason: "window exceeds series length",
        });
    }
    let x = series.counts();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let half = w / 2;
    let records = series
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let k = half.min(i).min(n - 1 - i);
            let sum = prefix[i + k + 1] - prefix[i - k];
            IncidenceRecord {
                time_index: r.time_index,
                count: (sum / (2 * k + 1) as f64).max(0.0),
            }
        })
        .collect();
    IncidenceSeries::new(series.cadence, Provenance::Filtered, records)
}

/// First `n_train` records and the remainder, indices preserved.
pub fn split_train_test(
    series: &IncidenceSeries,
    n_train: usize,
) -> Result<(IncidenceSeries, IncidenceSeries)> {
    if n_train == 0 || n_train >= series.len() {
        return Err(Error::OutOfRange {
            what: "n_train",
            detail: format!("{n_train} not in 1..{}", series.len()),
        });
    }
    let (a, b) = series.records.split_at(n_train);
    Ok((
        IncidenceSeries {
            records: a.to_vec(),
            ..series.clone()
        },
        IncidenceSeries {
            records: b.to_vec(),
            ..series.clone()
        },
    ))
}

/// Piecewise-linear value at `t` periods after the first record.
pub fn interpolate(series: &IncidenceSeries, t: f64) -> Result<f64> {
    let last = (series.len() - 1) as f64;
    if !(0.0..=last).contains(&t) {
        return Err(Error::OutOfRange {
            what: "interpolation time",
            detail: format!("{t} not in [0, {last}]"),
        });
    }
    let k = (t.floor() as usize).min(series.len() - 1);
    let frac = t - k as f64;
    if frac == 0.0 {
        return Ok(series.records[k].count);
    }
    let a = series.records[k].count;
    let b = series.records[k + 1].count;
    Ok(a + frac * (b - a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn weekly(counts: &[f64]) -> IncidenceSeries {
        IncidenceSeries::from_counts(Cadence::Weekly, Provenance::Raw, 0, counts).unwrap()
    }

    fn daily(counts: &[f64]) -> IncidenceSeries {
        IncidenceSeries::from_counts(Cadence::Daily, Provenance::Raw, 0, counts).unwrap()
    }

    #[test]
    fn parses_simple_file() {
        let recs = parse_records("0,3\n1,5\n2,0").unwrap();
        let counts: Vec<f64> = recs.iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![3.0, 5.0, 0.0]);
    }

    #[test]
    fn negative_count_reports_line() {
        match parse_records("4,-1") {
            Err(Error::NegativeCount { line }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_crlf_and_unsorted_input() {
        let recs = parse_records("day,cases\r\n2,1\r\n0,4\r\n1,2.5\r\n").unwrap();
        let idx: Vec<i64> = recs.iter().map(|r| r.time_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(recs[1].count, 2.5);
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        assert!(matches!(
            parse_records("0,1\nx,2"),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            parse_records("0,1\n1,2,3"),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            parse_records("0,1\n1,2\n1,3"),
            Err(Error::DuplicateIndex { index: 1, .. })
        ));
    }

    #[test]
    fn gap_in_indices_is_rejected() {
        let recs = parse_records("0,1\n2,2").unwrap();
        assert!(matches!(
            IncidenceSeries::new(Cadence::Daily, Provenance::Raw, recs),
            Err(Error::MissingIndex { expected: 1 })
        ));
    }

    #[test]
    fn weekly_aggregation() {
        let w = aggregate_weekly(&daily(&[1.0; 14])).unwrap();
        assert_eq!(w.counts(), vec![7.0, 7.0]);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        let w = aggregate_weekly(&daily(&ten)).unwrap();
        assert_eq!(w.counts(), vec![28.0]);
        assert_eq!(w.cadence(), Cadence::Weekly);
        assert!(matches!(
            aggregate_weekly(&daily(&[1.0; 6])),
            Err(Error::TooShort { .. })
        ));
        assert!(matches!(
            aggregate_weekly(&weekly(&[1.0; 14])),
            Err(Error::WrongCadence { .. })
        ));
    }

    #[test]
    fn aggregation_of_3535_days_gives_505_weeks() {
        let w = aggregate_weekly(&daily(&vec![2.0; 3535])).unwrap();
        assert_eq!(w.len(), 505);
    }

    #[test]
    fn moving_average_examples() {
        let c = moving_average(&weekly(&[4.2; 20]), FilterSpec { window: 13 }).unwrap();
        for v in c.counts() {
            assert_relative_eq!(v, 4.2, max_relative = 1e-14);
        }
        assert_eq!(c.provenance(), Provenance::Filtered);

        let m = moving_average(&weekly(&[0.0, 0.0, 13.0, 0.0, 0.0]), FilterSpec { window: 3 })
            .unwrap()
            .counts();
        let third = 13.0 / 3.0;
        let expect = [0.0, third, third, third, 0.0];
        for (a, b) in m.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn moving_average_impulse_matches_direct_convolution() {
        let mut x = vec![0.0; 27];
        x[13] = 1.0;
        let out = moving_average(&weekly(&x), FilterSpec { window: 13 })
            .unwrap()
            .counts();
        // Oracle: direct symmetric window sum with boundary shrinkage.
        for i in 0..27usize {
            let k = 6usize.min(i).min(26 - i);
            let direct: f64 = (i - k..=i + k).map(|j| x[j]).sum::<f64>() / (2 * k + 1) as f64;
            assert_relative_eq!(out[i], direct, epsilon = 1e-15);
        }
        let plateau: Vec<usize> = (0..27).filter(|&i| out[i] > 0.0).collect();
        assert_eq!(plateau, (7..=19).collect::<Vec<_>>());
        for i in plateau {
            assert_relative_eq!(out[i], 1.0 / 13.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn moving_average_rejects_bad_windows() {
        let s = weekly(&[1.0; 5]);
        assert!(moving_average(&s, FilterSpec { window: 4 }).is_err());
        assert!(moving_average(&s, FilterSpec { window: 7 }).is_err());
        assert!(moving_average(&s, FilterSpec { window: 0 }).is_err());
    }

    #[test]
    fn split_examples() {
        let s = weekly(&vec![1.0; 505]);
        let (a, b) = split_train_test(&s, 473).unwrap();
        assert_eq!((a.len(), b.len()), (473, 32));
        assert_eq!(b.first_index(), 473);

        let s = weekly(&[1.0; 10]);
        assert!(matches!(
            split_train_test(&s, 10),
            Err(Error::OutOfRange { .. })
        ));
        assert!(split_train_test(&s, 0).is_err());
        let (a, b) = split_train_test(&s, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 9));
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate(&weekly(&[2.0, 4.0]), 0.5).unwrap(), 3.0);
        let s = weekly(&[0.0, 10.0, 0.0]);
        assert_relative_eq!(interpolate(&s, 1.25).unwrap(), 7.5);
        assert_eq!(interpolate(&s, 2.0).unwrap(), 0.0);
        assert!(interpolate(&s, 2.5).is_err());
        assert!(interpolate(&s, -0.1).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_metadata() {
        let s = IncidenceSeries::from_counts(Cadence::Weekly, Provenance::Synthetic, 0, &[1.0, 2.5, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, series_to_csv(&s)).unwrap();
        let back = read_series(&path, Cadence::Daily, Provenance::Raw).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn aggregation_preserves_mass(days in prop::collection::vec(0.0f64..100.0, 7..120)) {
            let s = daily(&days);
            let w = aggregate_weekly(&s).unwrap();
            let kept = (days.len() / 7) * 7;
            let direct: f64 = days[..kept].iter().sum();
            prop_assert!((w.total() - direct).abs() <= 1e-9 * (1.0 + direct));
        }

        #[test]
        fn interpolation_is_exact_at_nodes(v in prop::collection::vec(0.0f64..1e4, 2..60)) {
            let s = weekly(&v);
            for (k, x) in v.iter().enumerate() {
                prop_assert_eq!(interpolate(&s, k as f64).unwrap(), *x);
            }
        }

        #[test]
        fn split_concatenation_reproduces_series(
            v in prop::collection::vec(0.0f64..1e4, 2..60),
            frac in 0.0f64..1.0,
        ) {
            let s = weekly(&v);
            let n_train = 1 + ((v.len() - 2) as f64 * frac) as usize;
            let (a, b) = split_train_test(&s, n_train).unwrap();
            let joined: Vec<IncidenceRecord> =
                a.records().iter().chain(b.records()).copied().collect();
            prop_assert_eq!(joined.as_slice(), s.records());
        }

        #[test]
        fn moving_average_interior_windows_preserve_means(
            v in prop::collection::vec(0.0f64..1e3, 13..80),
        ) {
            let s = weekly(&v);
            let out = moving_average(&s, FilterSpec { window: 5 }).unwrap().counts();
            for i in 2..v.len() - 2 {
                let direct = v[i - 2..=i + 2].iter().sum::<f64>() / 5.0;
                prop_assert!((out[i] - direct).abs() <= 1e-9 * (1.0 + direct));
            }
        }
    }
}

//! Magnitude spectrum of an incidence series and selection of the dominant
//! seasonal frequencies.

use std::f64::consts::PI;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::model::{Frequency, Harmonic, SeasonalForcing};
use crate::timeseries::IncidenceSeries;

/// One-sided DFT magnitudes `|X_k|`, `k = 0..=n/2`, of the mean-removed series.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    n: usize,
    magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Frequency of bin `k` in cycles per week.
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.magnitudes.len()).map(|k| self.frequency(k)).collect()
    }

    /// Sum of `|X_k|^2` over all `n` bins, recovered from the half spectrum
    /// by conjugate symmetry.
    pub fn total_power(&self) -> f64 {
        let sq = |k: usize| self.magnitudes[k] * self.magnitudes[k];
        let half = self.magnitudes.len() - 1;
        let mut p = sq(0);
        for k in 1..=half {
            let twice = !(self.n % 2 == 0 && k == half);
            p += if twice { 2.0 * sq(k) } else { sq(k) };
        }
        p
    }

    /// `frequency,magnitude` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frequency,magnitude\n");
        for (k, m) in self.magnitudes.iter().enumerate() {
            s.push_str(&format!("{},{m:.17e}\n", self.frequency(k)));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPeak {
    pub bin: usize,
    /// Exact bin frequency `bin / n`.
    pub frequency: Frequency,
    pub magnitude: f64,
    /// 1 for the largest selected peak.
    pub rank: usize,
}

impl SpectralPeak {
    /// Exact period `n / bin` in weeks.
    pub fn period(&self) -> Ratio<i64> {
        self.frequency.period()
    }

    pub fn period_weeks(&self) -> f64 {
        let p = self.period();
        *p.numer() as f64 / *p.denom() as f64
    }
}

/// Direct `O(n^2)` DFT magnitudes of the mean-removed counts.
pub fn dft_magnitude(series: &IncidenceSeries) -> Result<Spectrum> {
    dft_magnitude_of(&series.counts())
}

pub fn dft_magnitude_of(x: &[f64]) -> Result<Spectrum> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    // twiddle table indexed by (k j) mod n keeps the phase argument exact
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| {
            let a = 2.0 * PI * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    let magnitudes = (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            let mut idx = 0usize;
            for v in &centered {
                re += v * cos_t[idx];
                im -= v * sin_t[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            re.hypot(im)
        })
        .collect();
    Ok(Spectrum { n, magnitudes })
}

const NOISE_FLOOR: f64 = 1e-10;

/// Strict interior local maxima, picked greedily by magnitude subject to a
/// minimum pairwise frequency separation. `None` means two bins.
pub fn top_peaks(
    spectrum: &Spectrum,
    m: usize,
    min_separation: Option<f64>,
) -> Result<Vec<SpectralPeak>> {
    if m == 0 {
        return Err(Error::invalid("m", "at least one peak must be requested"));
    }
    let sep = min_separation.unwrap_or(2.0 / spectrum.n as f64);
    if !(sep >= 0.0) {
        return Err(Error::invalid("min_separation", "must be >= 0"));
    }
    let mag = &spectrum.magnitudes;
    // maxima at round-off level relative to the spectrum are not peaks
    let floor = NOISE_FLOOR * mag.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut candidates: Vec<usize> = (1..mag.len().saturating_sub(1))
        .filter(|&k| mag[k] > floor && mag[k] > mag[k - 1] && mag[k] > mag[k + 1])
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoLocalMaxima);
    }
    candidates.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for k in candidates {
        if chosen.len() == m {
            break;
        }
        // compare in bins so that a separation of exactly two bins passes
        let min_bins = sep * spectrum.n as f64 - 1e-9;
        let ok = chosen.iter().all(|&c| c.abs_diff(k) as f64 >= min_bins);
        if ok {
            chosen.push(k);
        }
    }
    chosen
        .into_iter()
        .enumerate()
        .map(|(r, k)| {
            Ok(SpectralPeak {
                bin: k,
                frequency: Frequency::from_bin(k, spectrum.n)?,
                magnitude: mag[k],
                rank: r + 1,
            })
        })
        .collect()
}

/// Forcing with the peak frequencies, zero amplitudes and intercept `alpha0`.
pub fn peak_to_forcing_seed(peaks: &[SpectralPeak], alpha0: f64) -> Result<SeasonalForcing> {
    if peaks.is_empty() {
        return Err(Error::invalid("peaks", "empty peak list"));
    }
    if !(alpha0 > 0.0) {
        return Err(Error::invalid("alpha0", "must be positive"));
    }
    let harmonics = peaks
        .iter()
        .map(|p| Harmonic {
            delta: 0.0,
            omega: p.frequency,
        })
        .collect();
    SeasonalForcing::new(alpha0, harmonics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{Cadence, Provenance};
    use proptest::prelude::*;

    fn tone(n: usize, parts: &[(f64, f64)]) -> Vec<f64> {
        (0..n)
            .map(|t| {
                100.0
                    + parts
                        .iter()
                        .map(|&(a, f)| a * (2.0 * PI * f * t as f64).cos())
                        .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(matches!(
            dft_magnitude_of(&[1.0, 2.0, 3.0]),
            Err(Error::TooShort { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn zero_and_constant_series_have_no_power() {
        for v in [0.0, 7.5] {
            let s = dft_magnitude_of(&vec![v; 32]).unwrap();
            assert!(s.magnitudes().iter().all(|m| m.abs() < 1e-12));
        }
    }

    #[test]
    fn on_grid_cosine_has_single_bin() {
        let (n, a) = (520, 3.0);
        let s = dft_magnitude_of(&tone(n, &[(a, 1.0 / 52.0)])).unwrap();
        assert_eq!(s.magnitudes().len(), n / 2 + 1);
        let expected = a * n as f64 / 2.0;
        assert!((s.magnitudes()[10] - expected).abs() < 1e-9 * expected);
        for (k, m) in s.magnitudes().iter().enumerate() {
            if k != 10 {
                assert!(*m < 1e-9 * expected, "bin {k}: {m}");
            }
        }
    }

    #[test]
    fn two_tones_in_amplitude_order() {
        let n = 520;
        let s = dft_magnitude_of(&tone(n, &[(2.0, 1.0 / 52.0), (5.0, 1.0 / 26.0)])).unwrap();
        let peaks = top_peaks(&s, 2, None).unwrap();
        assert_eq!(peaks.len(), 2);
        assert_eq!(peaks[0].bin, 20);
        assert_eq!(peaks[0].frequency, Frequency::from_ratio(1, 26).unwrap());
        assert_eq!(peaks[0].rank, 1);
        assert_eq!(peaks[1].bin, 10);
        assert_eq!(peaks[1].rank, 2);
    }

    #[test]
    fn fewer_peaks_than_requested_is_fine() {
        let s = dft_magnitude_of(&tone(520, &[(1.0, 1.0 / 52.0)])).unwrap();
        let peaks = top_peaks(&s, 3, None).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].bin, 10);
    }

    #[test]
    fn monotone_spectrum_has_no_maxima() {
        let s = Spectrum {
            n: 8,
            magnitudes: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        };
        assert!(matches!(top_peaks(&s, 1, None), Err(Error::NoLocalMaxima)));
    }

    #[test]
    fn separation_suppresses_neighbours() {
        let s = Spectrum {
            n: 100,
            magnitudes: vec![0.0, 1.0, 9.0, 1.0, 8.0, 1.0, 7.0, 1.0, 0.0, 0.0],
        };
        let close = top_peaks(&s, 3, Some(0.0)).unwrap();
        assert_eq!(close.iter().map(|p| p.bin).collect::<Vec<_>>(), [2, 4, 6]);
        let apart = top_peaks(&s, 3, Some(0.03)).unwrap();
        assert_eq!(apart.iter().map(|p| p.bin).collect::<Vec<_>>(), [2, 6]);
    }

    #[test]
    fn reported_frequencies_and_periods() {
        for (w, period) in [(0.005941f64, 168.32), (0.017822, 56.11), (0.0237624, 42.08)] {
            assert!((1.0 / w - period).abs() < 0.01, "{w}");
        }
    }

    #[test]
    fn forcing_seed_structure() {
        let peaks: Vec<SpectralPeak> = ["0.005941", "0.017822", "0.0237624"]
            .iter()
            .enumerate()
            .map(|(r, s)| SpectralPeak {
                bin: r + 3,
                frequency: Frequency::from_decimal_str(s).unwrap(),
                magnitude: 10.0 - r as f64,
                rank: r + 1,
            })
            .collect();
        let f = peak_to_forcing_seed(&peaks, 1e-4).unwrap();
        assert_eq!(f.alpha(), 1e-4);
        assert_eq!(f.harmonics().len(), 3);
        assert!(f.harmonics().iter().all(|h| h.delta == 0.0));
        assert_eq!(f.harmonics()[1].omega.value(), 0.017822);
        let one = peak_to_forcing_seed(&peaks[1..2], 1e-4).unwrap();
        assert_eq!(one.harmonics().len(), 1);
        assert!(peak_to_forcing_seed(&peaks, 0.0).is_err());
        assert!(peak_to_forcing_seed(&[], 1.0).is_err());
    }

    #[test]
    fn series_entry_point() {
        let s = IncidenceSeries::from_counts(
            Cadence::Weekly,
            Provenance::Raw,
            0,
            &tone(104, &[(4.0, 1.0 / 52.0)]),
        )
        .unwrap();
        let spec = dft_magnitude(&s).unwrap();
        assert_eq!(top_peaks(&spec, 1, None).unwrap()[0].bin, 2);
    }

    proptest! {
        #[test]
        fn parseval(x in prop::collection::vec(0.0f64..1e3, 4..80)) {
            let s = dft_magnitude_of(&x).unwrap();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let energy: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
            let lhs = s.total_power();
            let rhs = x.len() as f64 * energy;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300) + 1e-18);
        }

        #[test]
        fn peaks_sorted_and_strict_maxima(x in prop::collection::vec(0.0f64..1e3, 8..64), m in 1usize..5) {
            let s = dft_magnitude_of(&x).unwrap();
            if let Ok(peaks) = top_peaks(&s, m, None) {
                prop_assert!(peaks.len() <= m);
                let mag = s.magnitudes();
                for w in peaks.windows(2) {
                    prop_assert!(w[0].magnitude >= w[1].magnitude);
                }
                for p in &peaks {
                    prop_assert!(mag[p.bin] > mag[p.bin - 1] && mag[p.bin] > mag[p.bin + 1]);
                    prop_assert_eq!(p.period() * p.frequency.ratio(), Ratio::from_integer(1));
                }
            }
        }
    }
}

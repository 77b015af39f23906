use std::f64::consts::PI;
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;

use crate::error::{Error, Result};

/// A strictly positive frequency (cycles per week) held as an exact rational.
///
/// Decimal inputs such as `0.017822` are exact rationals, which is what makes
/// a common period of several harmonics well defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frequency(Ratio<i64>);

impl Frequency {
    pub fn from_ratio(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::invalid("omega", "zero denominator"));
        }
        let r = Ratio::new(numer, denom);
        if r <= Ratio::from_integer(0) {
            return Err(Error::invalid("omega", "frequency must be positive"));
        }
        Ok(Self(r))
    }

    /// Parses a finite decimal literal (`0.017822`, `1.5e-2`) exactly.
    pub fn from_decimal_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid("omega", format!("`{s}` is not a finite decimal"));
        let (mantissa, exp) = match s.find(['e', 'E']) {
            Some(p) => (&s[..p], s[p + 1..].parse::<i32>().map_err(|_| bad())?),
            None => (s, 0),
        };
        let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        let int_part = int_part.strip_prefix('+').unwrap_or(int_part);
        if int_part.starts_with('-') {
            return Err(Error::invalid("omega", "frequency must be positive"));
        }
        if int_part.is_empty() && frac_part.is_empty()
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i128 = digits.parse().map_err(|_| bad())?;
        let scale = exp - frac_part.len() as i32;
        let (num, den) = if scale >= 0 {
            (numer.checked_mul(10i128.checked_pow(scale as u32).ok_or_else(bad)?), 1i128)
        } else {
            (Some(numer), 10i128.checked_pow((-scale) as u32).ok_or_else(bad)?)
        };
        let num = num.ok_or_else(bad)?;
        let g = num.gcd(&den);
        let (num, den) = (num / g.max(1), den / g.max(1));
        let num = i64::try_from(num).map_err(|_| bad())?;
        let den = i64::try_from(den).map_err(|_| bad())?;
        Self::from_ratio(num, den)
    }

    /// Rounds a floating-point frequency to `decimals` decimal places.
    pub fn from_f64_rounded(x: f64, decimals: u32) -> Result<Self> {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::invalid("omega", format!("{x} is not positive")));
        }
        let den = 10i64
            .checked_pow(decimals)
            .ok_or_else(|| Error::invalid("omega", "too many decimals"))?;
        let num = (x * den as f64).round();
        if num < 1.0 || num > i64::MAX as f64 {
            return Err(Error::invalid(
                "omega",
                format!("{x} rounds to zero at {decimals} decimals"),
            ));
        }
        Self::from_ratio(num as i64, den)
    }

    /// Frequency of DFT bin `k` out of `n` samples, `k/n`.
    pub fn from_bin(k: usize, n: usize) -> Result<Self> {
        Self::from_ratio(k as i64, n as i64)
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn value(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Exact period `1/omega`.
    pub fn period(&self) -> Ratio<i64> {
        self.0.recip()
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Least common multiple of the exact periods of `freqs`.
pub fn common_period(freqs: &[Frequency]) -> Result<Ratio<i64>> {
    let mut iter = freqs.iter();
    let first = match iter.next() {
        Some(f) => f.period(),
        None => return Ok(Ratio::from_integer(1)),
    };
    let mut num = *first.numer() as i128;
    let mut den = *first.denom() as i128;
    for f in iter {
        let p = f.period();
        let (a, b) = (*p.numer() as i128, *p.denom() as i128);
        // lcm(n1/d1, n2/d2) = lcm(n1, n2) / gcd(d1, d2) for reduced fractions
        num = num
            .checked_div(num.gcd(&a))
            .and_then(|q| q.checked_mul(a))
            .ok_or(Error::NoCommonPeriod)?;
        den = den.gcd(&b);
        if num > i64::MAX as i128 {
            return Err(Error::NoCommonPeriod);
        }
    }
    Ok(Ratio::new(num as i64, den as i64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub delta: f64,
    pub omega: Frequency,
}

/// Infection rate `alpha + sum_j delta_j cos(2 pi omega_j t)` with its
/// common period.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalForcing {
    alpha: f64,
    harmonics: Vec<Harmonic>,
    sigma: Ratio<i64>,
}

impl SeasonalForcing {
    /// Builds the forcing and its common period. A forcing that can turn
    /// negative (`alpha < sum |delta_j|`) is accepted with a warning.
    pub fn new(alpha: f64, harmonics: Vec<Harmonic>) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::invalid("alpha", format!("{alpha} must be >= 0")));
        }
        if harmonics.iter().any(|h| !h.delta.is_finite()) {
            return Err(Error::invalid("delta", "must be finite"));
        }
        let omegas: Vec<Frequency> = harmonics.iter().map(|h| h.omega).collect();
        let sigma = common_period(&omegas)?;
        let out = Self {
            alpha,
            harmonics,
            sigma,
        };
        if !out.is_nonnegative() {
            log::warn!(
                "forcing can become negative: alpha = {} < sum |delta| = {}",
                alpha,
                out.amplitude_sum()
            );
        }
        Ok(out)
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        Self::new(alpha, Vec::new())
    }

    /// Convenience constructor from parallel slices of amplitudes and
    /// decimal frequency literals.
    pub fn from_decimal(alpha: f64, deltas: &[f64], omegas: &[&str]) -> Result<Self> {
        if deltas.len() != omegas.len() {
            return Err(Error::invalid(
                "delta/omega",
                "lists must have the same length",
            ));
        }
        let harmonics = deltas
            .iter()
            .zip(omegas)
            .map(|(&delta, s)| {
                Ok(Harmonic {
                    delta,
                    omega: Frequency::from_decimal_str(s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(alpha, harmonics)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    /// Common period in weeks. A forcing without harmonics is reported with
    /// period 1.
    pub fn sigma(&self) -> f64 {
        *self.sigma.numer() as f64 / *self.sigma.denom() as f64
    }

    pub fn sigma_exact(&self) -> Ratio<i64> {
        self.sigma
    }

    pub fn amplitude_sum(&self) -> f64 {
        self.harmonics.iter().map(|h| h.delta.abs()).sum()
    }

    /// `alpha >= sum |delta_j|`, which guarantees beta(t) >= 0 everywhere.
    pub fn is_nonnegative(&self) -> bool {
        self.alpha >= self.amplitude_sum()
    }

    /// Zero-mean periodic part `sum_j delta_j cos(2 pi omega_j t)`.
    pub fn oscillation(&self, t: f64) -> f64 {
        self.harmonics
            .iter()
            .map(|h| h.delta * (2.0 * PI * h.omega.value() * t).cos())
            .sum()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.alpha + self.oscillation(t)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.harmonics.clone())
    }
}

/// Evaluates beta(t).
pub fn forcing_eval(forcing: &SeasonalForcing, t: f64) -> f64 {
    forcing.eval(t)
}

//! Plain-text `key = value` files: the run configuration and model
//! parameter files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assimilate::{FixedParams, SchemeId, SchemeSpec, DEFAULT_EPSILON, DEFAULT_OMEGA_STAR};
use crate::error::{Error, Result};
use crate::integrate::StepperConfig;
use crate::model::{Frequency, Harmonic, HumanState, IrParams, SeasonalForcing};

/// Ordered `key = value` pairs. `#` starts a comment, blank lines are
/// skipped and a repeated key is an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", k + 1)));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", k + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", k + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn real(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_real(key, v)).transpose()
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(split_list)
    }

    /// A list given either as `key = a, b` or as `key_1 = a`, `key_2 = b`.
    pub fn indexed_list(&self, key: &str) -> Result<Vec<String>> {
        let mut items = self.list(key).unwrap_or_default();
        let prefix = format!("{key}_");
        let mut indexed: Vec<(usize, String)> = Vec::new();
        for (k, v) in &self.entries {
            if let Some(j) = k.strip_prefix(&prefix) {
                let j: usize = j
                    .parse()
                    .map_err(|_| Error::Config(format!("bad index in key `{k}`")))?;
                indexed.push((j, v.clone()));
            }
        }
        if indexed.is_empty() {
            return Ok(items);
        }
        if !items.is_empty() {
            return Err(Error::Config(format!("`{key}` given both as a list and indexed")));
        }
        indexed.sort();
        for (pos, (j, v)) in indexed.into_iter().enumerate() {
            if j != pos + 1 {
                return Err(Error::Config(format!("`{key}_j` indices must run 1, 2, ...")));
            }
            items.push(v);
        }
        Ok(items)
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// A decimal number or a fraction `a/b` of decimals.
pub fn parse_real(key: &str, v: &str) -> Result<f64> {
    let bad = || Error::Config(format!("`{key}`: `{v}` is not a number"));
    let x = match v.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => v.trim().parse().map_err(|_| bad())?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad())
    }
}

/// A finite decimal or an integer ratio `p/q`, both held exactly.
pub fn parse_frequency(v: &str) -> Result<Frequency> {
    match v.split_once('/') {
        Some((p, q)) => {
            let bad = || Error::Config(format!("`omega`: `{v}` is not an integer ratio"));
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            Frequency::from_ratio(p, q)
        }
        None => Frequency::from_decimal_str(v),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: `{v}` is not a boolean"))),
    }
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: `{v}` is not a nonnegative integer")))
}

/// Effective run settings. Every field has a default; a config file and then
/// command-line flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub population: f64,
    pub mu: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub scheme: SchemeId,
    /// `None` takes the scheme's default.
    pub lambda: Option<f64>,
    pub epsilon: f64,
    pub omega_star: Vec<f64>,
    pub positivity: bool,
    pub stepper: StepperConfig,
    pub n_train: Option<usize>,
    pub window: usize,
    pub peaks: usize,
    pub pool: usize,
    pub seed: u64,
    pub horizon: f64,
    pub jobs: Option<usize>,
    pub transient_periods: f64,
    /// Decimal places kept when fitted frequencies become exact rationals
    /// for the stability analysis.
    pub omega_decimals: u32,
    pub start_date: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("."),
            population: 1e7,
            mu: 1.0 / 3120.0,
            gamma: 0.25,
            kappa: 1.0 / 36.0,
            scheme: SchemeId::S1,
            lambda: None,
            epsilon: DEFAULT_EPSILON,
            omega_star: vec![DEFAULT_OMEGA_STAR],
            positivity: false,
            stepper: StepperConfig::tracing(),
            n_train: None,
            window: 13,
            peaks: 3,
            pool: 50,
            seed: 0,
            horizon: 0.0,
            jobs: None,
            transient_periods: 50.0,
            omega_decimals: 6,
            start_date: None,
        }
    }
}

impl Config {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for key in kv.keys() {
            let v = kv.get(key).unwrap_or_default();
            match key {
                "input" => c.input = Some(PathBuf::from(v)),
                "output_dir" => c.output_dir = PathBuf::from(v),
                "N" | "population" => c.population = parse_real(key, v)?,
                "mu" => c.mu = parse_real(key, v)?,
                "gamma" => c.gamma = parse_real(key, v)?,
                "kappa" => c.kappa = parse_real(key, v)?,
                "scheme" => c.scheme = v.parse()?,
                "lambda" => c.lambda = Some(parse_real(key, v)?),
                "epsilon" => c.epsilon = parse_real(key, v)?,
                "omega_star" => {
                    c.omega_star = split_list(v)
                        .iter()
                        .map(|s| parse_real(key, s))
                        .collect::<Result<_>>()?
                }
                "positivity" => c.positivity = parse_bool(key, v)?,
                "h" => c.stepper.h = parse_real(key, v)?,
                "newton_tol" => c.stepper.newton_tol = parse_real(key, v)?,
                "newton_max_iter" => c.stepper.newton_max_iter = parse_int(key, v)?,
                "n_train" => c.n_train = Some(parse_int(key, v)?),
                "window" => c.window = parse_int(key, v)?,
                "peaks" => c.peaks = parse_int(key, v)?,
                "pool" => c.pool = parse_int(key, v)?,
                "seed" => c.seed = parse_int(key, v)?,
                "horizon" => c.horizon = parse_real(key, v)?,
                "jobs" => c.jobs = Some(parse_int(key, v)?),
                "transient_periods" => c.transient_periods = parse_real(key, v)?,
                "omega_decimals" => c.omega_decimals = parse_int(key, v)?,
                "start_date" => c.start_date = Some(v.to_string()),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        Ok(c)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::read(path)?)
    }

    pub fn fixed(&self) -> Result<FixedParams> {
        FixedParams::new(self.population, self.mu, self.gamma, self.kappa)
    }

    pub fn scheme_spec(&self) -> Result<SchemeSpec> {
        let mut spec = match self.scheme {
            SchemeId::Mf => SchemeSpec::multi_frequency(self.omega_star.clone(), self.epsilon),
            id => {
                if self.omega_star.len() != 1 {
                    return Err(Error::InconsistentScheme(format!(
                        "scheme {id} takes one target frequency, got {}",
                        self.omega_star.len()
                    )));
                }
                let mut s = SchemeSpec::single(id, self.omega_star[0]);
                s.epsilon = self.epsilon;
                s
            }
        };
        if let Some(l) = self.lambda {
            spec.lambda = l;
        }
        let spec = spec.with_positivity(self.positivity);
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical JSON rendering, as lowercase hex.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A full model specification: fixed rates, `nu`, the forcing and an
/// initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub params: IrParams,
    pub forcing: SeasonalForcing,
    pub initial: HumanState,
}

impl ParamFile {
    /// Keys `N, mu, gamma, kappa, nu, alpha, delta, omega, I0, R0`. Missing
    /// rates take the defaults of [`Config`]; `delta` and `omega` are lists
    /// of equal length and `omega` entries are finite decimals or integer
    /// ratios `p/q`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        const KNOWN: [&str; 10] = ["N", "mu", "gamma", "kappa", "nu", "alpha", "delta", "omega", "I0", "R0"];
        for k in kv.keys() {
            let base = k.split_once('_').map_or(k, |(b, _)| b);
            if !KNOWN.contains(&k) && !(matches!(base, "delta" | "omega") && k.contains('_')) {
                return Err(Error::Config(format!("unknown parameter `{k}`")));
            }
        }
        let d = Config::default();
        let need = |key: &str| -> Result<f64> {
            kv.real(key)?
                .ok_or_else(|| Error::Config(format!("parameter file lacks `{key}`")))
        };
        let params = IrParams::new(
            kv.real("N")?.unwrap_or(d.population),
            kv.real("mu")?.unwrap_or(d.mu),
            kv.real("gamma")?.unwrap_or(d.gamma),
            kv.real("kappa")?.unwrap_or(d.kappa),
            need("nu")?,
        )?;
        let deltas = kv
            .indexed_list("delta")?
            .iter()
            .map(|s| parse_real("delta", s))
            .collect::<Result<Vec<_>>>()?;
        let omegas = kv.indexed_list("omega")?;
        if deltas.len() != omegas.len() {
            return Err(Error::Config(format!(
                "{} amplitudes but {} frequencies",
                deltas.len(),
                omegas.len()
            )));
        }
        let harmonics = deltas
            .into_iter()
            .zip(&omegas)
            .map(|(delta, w)| {
                Ok(Harmonic {
                    delta,
                    omega: parse_frequency(w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let forcing = SeasonalForcing::new(need("alpha")?, harmonics)?;
        let initial = HumanState::new(
            kv.real("I0")?.unwrap_or(0.0),
            kv.real("R0")?.unwrap_or(0.0),
        );
        if !initial.is_admissible(&params) {
            return Err(Error::Config("initial state outside the admissible region".into()));
        }
        Ok(Self {
            params,
            forcing,
            initial,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::read(path)?)
    }
}

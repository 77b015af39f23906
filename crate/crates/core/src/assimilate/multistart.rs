//! Seeded start pools, parallel local solves and cross-checking between
//! schemes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collocation::{CollocationNlp, DecisionVector, NlpProblem, SchemeId};
use super::sqp::{sqp_solve, FitStatus, Nlp, SqpConfig, SqpOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartOptions {
    /// Range of `nu`, sampled log-uniformly.
    pub nu_range: (f64, f64),
    /// Range of the start's basic reproduction number; `alpha` follows
    /// from it and `nu`.
    pub r0_range: (f64, f64),
    /// Upper end of the initial recovered compartment as a fraction of `N`.
    pub recovered_fraction: f64,
    /// Half-width of the frequency range around the target for schemes
    /// without a frequency box.
    pub omega_spread: f64,
}

impl Default for StartOptions {
    fn default() -> Self {
        Self {
            nu_range: (1e-6, 1e3),
            r0_range: (0.8, 1.25),
            recovered_fraction: 0.1,
            omega_spread: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub sqp: SqpConfig,
    pub starts: StartOptions,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            sqp: SqpConfig {
                tol: 1e-8,
                // defects are in counts
                feas_tol: 1e-8,
                max_iter: 400,
                ..SqpConfig::default()
            },
            starts: StartOptions::default(),
            jobs: None,
        }
    }
}

/// Outcome of fitting one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub scheme: SchemeId,
    pub decision: DecisionVector,
    pub objective: f64,
    /// Trapezoidal squared misfit of the infective nodes.
    pub sse: f64,
    pub r0: f64,
    pub iterations: usize,
    pub status: FitStatus,
    pub kkt_residual: f64,
    pub max_defect: f64,
    pub max_ineq_violation: f64,
    /// Pool index of the start that produced this result.
    pub start_index: usize,
    /// Starts of the pool that converged.
    pub converged_starts: usize,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

/// Latin-hypercube pool of feasible starts, deterministic in `seed`.
///
/// `nu`, the initial recovered compartment and the frequencies are sampled;
/// `alpha` and the amplitudes then follow from a linear regression of the
/// data derivative on the forcing basis, so each start has roughly neutral
/// growth along the data. Starts where the regression fails fall back to a
/// sampled basic reproduction number.
pub fn start_pool(problem: &NlpProblem, pool: usize, seed: u64, opts: &StartOptions) -> Vec<DecisionVector> {
    let scheme = problem.scheme();
    let fixed = problem.fixed();
    let m = scheme.m;
    let dims = 3 + 2 * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = (0..dims)
        .map(|_| {
            let mut p: Vec<usize> = (0..pool).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let (ln_lo, ln_hi) = (opts.nu_range.0.ln(), opts.nu_range.1.ln());
    (0..pool)
        .map(|i| {
            let mut u = strata
                .iter()
                .map(|s| (s[i] as f64 + rng.gen::<f64>()) / pool as f64);
            let mut next = || u.next().unwrap_or(0.5);
            let r0 = opts.r0_range.0 + next() * (opts.r0_range.1 - opts.r0_range.0);
            let nu = (ln_lo + next() * (ln_hi - ln_lo)).exp();
            let r_init = next() * opts.recovered_fraction * fixed.population;
            let fallback: Vec<f64> = (0..m).map(|_| 2.0 * next() - 1.0).collect();
            let omegas: Vec<f64> = scheme
                .omega_star
                .iter()
                .map(|&w| {
                    let half = if scheme.id.has_box() {
                        scheme.epsilon
                    } else {
                        opts.omega_spread
                    };
                    let lo = if scheme.id.has_box() { w - half } else { (w - half).max(1e-3) };
                    lo + next() * (w + half - lo)
                })
                .collect();
            let base = problem.guess(0.0, &vec![0.0; m], &omegas, nu, r_init);
            let (alpha, deltas) = regress_forcing(problem, &base).unwrap_or_else(|| {
                let alpha = r0 * (fixed.gamma + fixed.mu) * nu;
                (alpha, fallback.iter().map(|f| f * alpha / m as f64).collect())
            });
            problem.guess(alpha, &deltas, &omegas, nu, r_init)
        })
        .collect()
}

/// Least-squares `(alpha, delta)` in `I' + (gamma + mu) I = beta(t) q(t)`,
/// `q = S I / (I + nu N)`, along the guessed states, clipped into the
/// amplitude constraints.
fn regress_forcing(problem: &NlpProblem, z: &DecisionVector) -> Option<(f64, Vec<f64>)> {
    let fixed = problem.fixed();
    let m = z.omegas.len();
    let n = z.states.len();
    let h = problem.step();
    let mut ata = nalgebra::DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut atb = nalgebra::DVector::<f64>::zeros(m + 1);
    let mut row = nalgebra::DVector::<f64>::zeros(m + 1);
    for k in 0..n {
        let [i, r] = z.states[k];
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
        let slope = (z.states[hi][0] - z.states[lo][0]) / ((hi - lo) as f64 * h);
        let q = (fixed.population - i - r) * i / (i + z.nu * fixed.population);
        let t = k as f64 * h;
        row[0] = q;
        for j in 0..m {
            row[j + 1] = q * (2.0 * std::f64::consts::PI * z.omegas[j] * t).cos();
        }
        let rhs = slope + (fixed.gamma + fixed.mu) * i;
        ata += &row * row.transpose();
        atb += &row * rhs;
    }
    let sol = ata.cholesky()?.solve(&atb);
    let alpha = sol[0];
    if !(alpha.is_finite() && alpha > 0.0) {
        return None;
    }
    let mut deltas: Vec<f64> = sol.iter().skip(1).copied().collect();
    let total: f64 = deltas.iter().map(|d| d.abs()).sum();
    let cap = 0.95 * alpha;
    if total > cap {
        for d in &mut deltas {
            *d *= cap / total;
        }
    }
    Some((alpha, deltas))
}

/// Local solve from `z0` in variables scaled to `z0`.
pub fn solve_from(problem: &NlpProblem, z0: &DecisionVector, cfg: &SqpConfig) -> Result<FitResult> {
    let nlp = CollocationNlp::new(problem, z0);
    let u0 = nlp.to_scaled(&z0.to_flat());
    let out = sqp_solve(&nlp, &u0, cfg)?;
    Ok(fit_result(problem, &nlp, &out))
}

fn fit_result(problem: &NlpProblem, nlp: &CollocationNlp<'_>, out: &SqpOutcome) -> FitResult {
    let x = nlp.to_physical(&out.x);
    FitResult {
        scheme: problem.scheme().id,
        decision: DecisionVector::from_flat(problem.layout(), &x),
        objective: problem.objective_flat(&x),
        sse: problem.sse(&x),
        r0: problem.r0(&x),
        iterations: out.iterations,
        status: out.status,
        kkt_residual: out.kkt_residual,
        max_defect: problem.max_defect(&x),
        max_ineq_violation: problem.max_ineq_violation(&x),
        start_index: 0,
        converged_starts: 0,
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Solves `nlp` from every start concurrently; results are in start order.
pub fn solve_all<P: Nlp + Sync>(
    nlp: &P,
    starts: &[Vec<f64>],
    cfg: &SqpConfig,
    jobs: Option<usize>,
) -> Result<Vec<Result<SqpOutcome>>> {
    with_jobs(jobs, || {
        starts
            .par_iter()
            .map(|x0| sqp_solve(nlp, x0, cfg))
            .collect()
    })
}

/// Index of the converged run with the smallest objective, lowest index
/// first among ties.
pub fn best_index<'a>(runs: impl IntoIterator<Item = (usize, f64, bool)> + 'a) -> Option<usize> {
    runs.into_iter()
        .filter(|r| r.2 && r.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|r| r.0)
}

/// Best converged fit over a seeded pool of starts.
pub fn multi_start(problem: &NlpProblem, pool: usize, seed: u64, opts: &SolveOptions) -> Result<FitResult> {
    if pool == 0 {
        return Err(Error::invalid("pool", "must be at least 1"));
    }
    let starts = start_pool(problem, pool, seed, &opts.starts);
    let runs: Vec<Option<FitResult>> = with_jobs(opts.jobs, || {
        starts
            .par_iter()
            .map(|z0| match solve_from(problem, z0, &opts.sqp) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::debug!("start failed: {e}");
                    None
                }
            })
            .collect()
    })?;
    let converged = runs.iter().flatten().filter(|r| r.converged()).count();
    for (i, r) in runs.iter().enumerate() {
        match r {
            Some(r) => log::debug!(
                "scheme {} start {i}: {} after {} iterations, objective {:.6e}, r0 {:.5}",
                problem.scheme().id,
                r.status.as_str(),
                r.iterations,
                r.objective,
                r.r0
            ),
            None => log::debug!("scheme {} start {i}: error", problem.scheme().id),
        }
    }
    let best = best_index(
        runs.iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i, r.objective, r.converged()))),
    )
    .ok_or(Error::AllStartsFailed(pool))?;
    let mut out = runs[best].clone().expect("best run exists");
    out.start_index = best;
    out.converged_starts = converged;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub results: Vec<FitResult>,
    /// Reseeded solves attempted.
    pub attempted: usize,
    /// Schemes whose incumbent was replaced.
    pub improved: Vec<SchemeId>,
}

/// Reseeds every scheme from every other scheme's optimum (projected onto
/// its constraints) and keeps the better converged objective per scheme.
pub fn cross_check(problems: &[NlpProblem], results: &[FitResult], opts: &SolveOptions) -> Result<CrossCheck> {
    if problems.len() != results.len() {
        return Err(Error::invalid("cross_check", "one result per problem required"));
    }
    if problems.len() < 2 {
        return Err(Error::Precondition("cross-checking needs at least two schemes".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..problems.len())
        .flat_map(|i| (0..problems.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let reseeded: Vec<Option<FitResult>> = with_jobs(opts.jobs, || {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let start = problems[i].project(&results[j].decision).ok()?;
                solve_from(&problems[i], &start, &opts.sqp).ok()
            })
            .collect()
    })?;
    let mut out = results.to_vec();
    let mut improved = Vec::new();
    for ((i, j), run) in pairs.iter().zip(reseeded) {
        let Some(mut run) = run else { continue };
        if run.converged() && run.objective < out[*i].objective {
            log::info!(
                "scheme {} improved from the optimum of scheme {}: {:.6e} -> {:.6e}",
                problems[*i].scheme().id,
                problems[*j].scheme().id,
                out[*i].objective,
                run.objective
            );
            run.start_index = out[*i].start_index;
            run.converged_starts = out[*i].converged_starts;
            out[*i] = run;
            if !improved.contains(&problems[*i].scheme().id) {
                improved.push(problems[*i].scheme().id);
            }
        }
    }
    Ok(CrossCheck {
        results: out,
        attempted: pairs.len(),
        improved,
    })
}

//! The multi-start algorithm against a simulated running-time distribution:
//! single traces, seeded Monte Carlo estimates, and exact series evaluation
//! of `L̄(S)` and `L̄⁺(S)` for deterministic sequences.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::RuntimeDistribution;
use crate::error::{domain, Error, Result};
use crate::sched::Strategy;
use crate::seq::{geometric_log_ratio, geometric_value, CutoffSequence};

/// Default simulation horizon in time units.
pub const DEFAULT_HORIZON: f64 = 1e9;
/// Default tolerance of the exact evaluator, relative to the running sum.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Default cap on the number of series terms.
pub const DEFAULT_MAX_TERMS: u64 = 10_000_000;

/// One run of the multi-start algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunRecord {
    /// Member of the combiner family that produced the cutoff (0 for plain sequences).
    pub sub_index: usize,
    pub cutoff: f64,
    pub consumed: f64,
    pub success: bool,
}

/// Record of one execution of the multi-start algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub runs: Vec<RunRecord>,
    /// Ordinal of the terminating run; `None` when truncated.
    pub kstar: Option<u64>,
    /// `Σ_{k<K*} S_k + T_{K*}` over the recorded runs.
    pub total_actual: f64,
    /// `Σ_{k≤K*} S_k` over the recorded runs.
    pub total_charged: f64,
    pub truncated: bool,
    /// True when the cutoffs came from a combiner.
    pub combiner: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    actual: f64,
    charged: f64,
    truncated: bool,
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon >= 1.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("horizon must be finite and >= 1, got {horizon}")))
    }
}

fn simulate<R: Rng + ?Sized>(
    strategy: &Strategy,
    d: &RuntimeDistribution,
    rng: &mut R,
    horizon: f64,
    max_runs: u64,
    mut sink: impl FnMut(RunRecord),
) -> (Outcome, Option<u64>) {
    let mut schedule = strategy.schedule();
    let (mut actual, mut charged) = (0.0, 0.0);
    let mut runs = 0u64;
    while runs < max_runs {
        let draw = schedule.next(rng);
        let t = d.sample(rng).get();
        // a saturated cutoff means "run to completion"
        let cutoff = if draw.saturated { f64::INFINITY } else { draw.cutoff };
        let success = t <= cutoff;
        let consumed = if success { t } else { cutoff };
        if actual + consumed > horizon {
            break;
        }
        actual += consumed;
        charged += if draw.saturated { consumed } else { draw.cutoff };
        sink(RunRecord { sub_index: draw.index, cutoff: draw.cutoff, consumed, success });
        runs += 1;
        if success {
            return (Outcome { actual, charged, truncated: false }, Some(runs - 1));
        }
    }
    (Outcome { actual, charged, truncated: true }, None)
}

/// Runs the multi-start algorithm once, recording every run.
pub fn run_restart<R: Rng + ?Sized>(
    strategy: &Strategy,
    d: &RuntimeDistribution,
    rng: &mut R,
    horizon: f64,
) -> Result<RunTrace> {
    run_restart_limited(strategy, d, rng, horizon, u64::MAX)
}

/// As [`run_restart`], but also stops (truncated) after `max_runs` runs.
pub fn run_restart_limited<R: Rng + ?Sized>(
    strategy: &Strategy,
    d: &RuntimeDistribution,
    rng: &mut R,
    horizon: f64,
    max_runs: u64,
) -> Result<RunTrace> {
    check_horizon(horizon)?;
    let mut runs = Vec::new();
    let (outcome, kstar) = simulate(strategy, d, rng, horizon, max_runs, |r| runs.push(r));
    Ok(RunTrace {
        runs,
        kstar,
        total_actual: outcome.actual,
        total_charged: outcome.charged,
        truncated: outcome.truncated,
        combiner: strategy.is_randomized(),
    })
}

/// Monte Carlo summary of `n_trials` independent executions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCStats {
    pub n_trials: u64,
    pub mean_actual: f64,
    pub stderr_actual: f64,
    pub mean_charged: f64,
    pub stderr_charged: f64,
    pub truncation_rate: f64,
    pub seed: u64,
}

/// The random stream of trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Estimates `L̄(S)` and `L̄⁺(S)`; truncated trials count at the horizon.
pub fn monte_carlo(strategy: &Strategy, d: &RuntimeDistribution, n: u64, seed: u64, horizon: f64) -> Result<MCStats> {
    check_inputs(n, horizon)?;
    let outcomes: Vec<Outcome> = (0..n).into_par_iter().map(|i| one_trial(strategy, d, seed, i, horizon)).collect();
    Ok(summarize(&outcomes, seed))
}

/// As [`monte_carlo`] on a dedicated pool of `threads` workers.
pub fn monte_carlo_with_threads(
    strategy: &Strategy,
    d: &RuntimeDistribution,
    n: u64,
    seed: u64,
    horizon: f64,
    threads: usize,
) -> Result<MCStats> {
    check_inputs(n, horizon)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| monte_carlo(strategy, d, n, seed, horizon))
}

fn check_inputs(n: u64, horizon: f64) -> Result<()> {
    if n == 0 {
        return Err(domain("n_trials must be at least 1"));
    }
    check_horizon(horizon)
}

fn one_trial(strategy: &Strategy, d: &RuntimeDistribution, seed: u64, trial: u64, horizon: f64) -> Outcome {
    let mut rng = trial_rng(seed, trial);
    let (mut o, _) = simulate(strategy, d, &mut rng, horizon, u64::MAX, |_| {});
    if o.truncated {
        o.actual = horizon;
        o.charged = horizon;
    }
    o
}

fn summarize(outcomes: &[Outcome], seed: u64) -> MCStats {
    let n = outcomes.len();
    let actual: Vec<f64> = outcomes.iter().map(|o| o.actual).collect();
    let charged: Vec<f64> = outcomes.iter().map(|o| o.charged).collect();
    let (mean_actual, stderr_actual) = mean_and_stderr(&actual);
    let (mean_charged, stderr_charged) = mean_and_stderr(&charged);
    let truncated = outcomes.iter().filter(|o| o.truncated).count();
    MCStats {
        n_trials: n as u64,
        mean_actual,
        stderr_actual,
        mean_charged,
        stderr_charged,
        truncation_rate: truncated as f64 / n as f64,
        seed,
    }
}

/// Pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and its standard error (sample sd / √n, zero for one sample).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fraction of the total charged time spent in each combiner member.
pub fn time_share(traces: &[RunTrace]) -> Result<BTreeMap<usize, f64>> {
    if traces.iter().any(|t| !t.combiner) {
        return Err(domain("time shares are only defined for combiner traces"));
    }
    let mut per_index: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total = 0.0;
    for run in traces.iter().flat_map(|t| &t.runs) {
        *per_index.entry(run.sub_index).or_default() += run.cutoff;
        total += run.cutoff;
    }
    if total > 0.0 {
        per_index.values_mut().for_each(|v| *v /= total);
    }
    Ok(per_index)
}

/// Options of the exact evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    /// Stop once the tail bound is below `tol · max(1, L̄⁺ so far)`.
    pub tol: f64,
    pub max_terms: u64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_terms: DEFAULT_MAX_TERMS }
    }
}

/// Result of the exact series evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactValue {
    /// `L̄(S) = Σ_k π_k E[min{T, S_k}]`.
    pub lbar: f64,
    /// `L̄⁺(S) = Σ_k π_k S_k`.
    pub lbar_plus: f64,
    /// Number of series terms accounted for.
    pub terms: f64,
    /// False when the term cap was reached before the tail bound met the tolerance;
    /// the sums are then lower bounds.
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl ExactValue {
    fn infinite(terms: f64, why: impl Into<String>) -> Self {
        Self {
            lbar: f64::INFINITY,
            lbar_plus: f64::INFINITY,
            terms,
            converged: true,
            diagnostic: Some(why.into()),
        }
    }

    /// `L̄⁺(S)` when converged, `+∞` otherwise (safe for upper bounds).
    pub fn lbar_plus_upper(&self) -> f64 {
        if self.converged {
            self.lbar_plus
        } else {
            f64::INFINITY
        }
    }
}

/// Evaluates `L̄(S)` and `L̄⁺(S)` with survival products `π_k = Π_{l<k} P(T > S_l)`.
pub fn exact_expected_time(seq: &CutoffSequence, d: &RuntimeDistribution, tol: f64) -> Result<ExactValue> {
    exact_expected_time_with(seq, d, ExactOptions { tol, ..ExactOptions::default() })
}

pub fn exact_expected_time_with(seq: &CutoffSequence, d: &RuntimeDistribution, opts: ExactOptions) -> Result<ExactValue> {
    seq.validate()?;
    if !(opts.tol > 0.0) {
        return Err(domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if d.finite_mass() <= 0.0 {
        return Ok(ExactValue::infinite(0.0, "the distribution puts no mass on finite times"));
    }
    Ok(match seq {
        CutoffSequence::Constant { alpha } => listed(&[*alpha], d, opts),
        CutoffSequence::Explicit { cutoffs } => listed(cutoffs, d, opts),
        CutoffSequence::GeometricQuantile { q } => geometric(*q, d, opts),
        CutoffSequence::Luby => luby(d, opts),
    })
}

struct Series {
    pi: f64,
    lbar: f64,
    lbar_plus: f64,
    terms: f64,
}

impl Series {
    fn new() -> Self {
        Self { pi: 1.0, lbar: 0.0, lbar_plus: 0.0, terms: 0.0 }
    }

    fn add(&mut self, d: &RuntimeDistribution, s: f64) {
        self.lbar += self.pi * d.expected_min(s);
        self.lbar_plus += self.pi * s;
        self.pi *= d.survival(s);
        self.terms += 1.0;
    }

    fn small(&self, bound: f64, tol: f64) -> bool {
        bound <= tol * self.lbar_plus.max(1.0)
    }

    fn finish(self, converged: bool, diagnostic: Option<String>) -> ExactValue {
        ExactValue { lbar: self.lbar, lbar_plus: self.lbar_plus, terms: self.terms, converged, diagnostic }
    }
}

// Listed cutoffs followed by the last one repeated: the tail after the list
// is geometric with ratio P(T > α).
fn listed(cutoffs: &[f64], d: &RuntimeDistribution, opts: ExactOptions) -> ExactValue {
    let mut series = Series::new();
    for &s in &cutoffs[..cutoffs.len() - 1] {
        series.add(d, s);
        if series.pi == 0.0 {
            return series.finish(true, None);
        }
    }
    let alpha = cutoffs[cutoffs.len() - 1];
    let f = d.cdf(alpha);
    if f <= 0.0 {
        let terms = series.terms;
        return ExactValue::infinite(terms, format!("P(T <= {alpha}) = 0, so the repeated cutoff never succeeds"));
    }
    loop {
        series.add(d, alpha);
        if series.pi == 0.0 {
            return series.finish(true, None);
        }
        let small = series.small(series.pi * alpha / f, opts.tol);
        if small || series.terms >= opts.max_terms as f64 {
            // the remaining tail is geometric with ratio 1 - f
            series.lbar += series.pi * d.expected_min(alpha) / f;
            series.lbar_plus += series.pi * alpha / f;
            let note = (!small).then(|| "geometric tail summed in closed form at the term cap".to_string());
            return series.finish(true, note);
        }
    }
}

fn geometric(q: f64, d: &RuntimeDistribution, opts: ExactOptions) -> ExactValue {
    let log_ratio = geometric_log_ratio(q);
    let ratio = log_ratio.exp();
    let p_inf = d.mass_at_infinity();
    if p_inf * ratio >= 1.0 {
        return ExactValue::infinite(0.0, format!("P(T = inf) * ratio = {} >= 1: the series diverges", p_inf * ratio));
    }
    let term = |k: f64| geometric_value(q, k);
    let mut series = Series::new();
    // leading cutoffs below the support never succeed; sum them in closed form
    let smin = d.support_min();
    let mut k = (smin.ln() / log_ratio).ceil().max(0.0);
    while k > 0.0 && term(k - 1.0) >= smin {
        k -= 1.0;
    }
    while term(k) < smin {
        k += 1.0;
    }
    if k > 1e6 {
        let prefix = (k * log_ratio).exp_m1() / log_ratio.exp_m1();
        series.lbar = prefix;
        series.lbar_plus = prefix;
        series.terms = k;
    } else {
        for j in 0..k as u64 {
            series.add(d, term(j as f64));
        }
    }
    loop {
        let s = term(k);
        if !s.is_finite() {
            let terms = series.terms;
            return ExactValue::infinite(terms, "cutoffs overflowed before the survival product vanished");
        }
        let f = d.cdf(s);
        series.add(d, s);
        k += 1.0;
        if series.pi == 0.0 {
            return series.finish(true, None);
        }
        let contraction = (1.0 - f) * ratio;
        if contraction < 1.0 {
            let bound = series.pi * term(k) / (1.0 - contraction);
            if series.small(bound, opts.tol) {
                return series.finish(true, None);
            }
        }
        if series.terms >= opts.max_terms as f64 {
            let msg = format!("term cap {} reached; sums are lower bounds", opts.max_terms);
            return series.finish(false, Some(msg));
        }
    }
}

// After the first 2^j − 1 terms (the block P_j) the rest of the sequence is
// P_j, 2^j, P_{j+1}, 2^{j+1}, …; the copy of P_m starts with survival at most
// P^{2^{m−j}} and costs at most m·2^{m−1} + 2^m.
fn luby_tail_bound(p: f64, j: u32) -> f64 {
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.0 {
        return 0.0;
    }
    let log_p = p.log2();
    let mut total = 0.0;
    for step in 0..64u32 {
        let m = f64::from(j + step);
        let log_term = 2f64.powi(step as i32) * log_p + (m * 2f64.powf(m - 1.0) + 2f64.powf(m)).log2();
        let term = log_term.exp2();
        total += term;
        if log_term < -1100.0 || (step > 0 && term < 1e-18 * total) {
            break;
        }
    }
    total
}

fn luby(d: &RuntimeDistribution, opts: ExactOptions) -> ExactValue {
    let mut series = Series::new();
    let mut k = 0u64;
    loop {
        series.add(d, crate::seq::luby(k));
        k += 1;
        if series.pi == 0.0 {
            return series.finish(true, None);
        }
        if (k + 1).is_power_of_two() {
            let j = (k + 1).trailing_zeros();
            if series.small(luby_tail_bound(series.pi, j), opts.tol) {
                return series.finish(true, None);
            }
        }
        if series.terms >= opts.max_terms as f64 {
            let msg = format!("term cap {} reached; sums are lower bounds", opts.max_terms);
            return series.finish(false, Some(msg));
        }
    }
}

//! Baselines and bounds: the optimal constant cutoff `ℓ*`, `L* = inf_q Q(q)/q`,
//! generalized means `μ_φ`, the quantile-type upper bounds satisfied by the
//! strategies, and the extremal constants of the reverse Jensen analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::{DistSpec, RuntimeDistribution};
use crate::engine::{exact_expected_time_with, ExactOptions};
use crate::error::{domain, Result};
use crate::ext::ExtReal;
use crate::quad::{integrate, QuadOptions};
use crate::sched::{CombinerFamily, WeightFunction, DEFAULT_I_MAX};
use crate::transform::{ConcaveTransform, ReverseJensen};

/// Constant of the SPRS guarantee `L̄(SPRS) ≤ 23 · inf_q (Q(q)/q)(1 + L log₂²L)`.
pub const SPRS_CONSTANT: f64 = 23.0;

const GRID_POINTS: usize = 1000;
const GOLDEN_ITERATIONS: usize = 200;
const GOLDEN_TOL: f64 = 1e-9;

/// `argmin` and `min` of `α ↦ E[min{T, α}]/P(T ≤ α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalConstant {
    pub alpha: f64,
    pub value: f64,
}

/// `argmin` and `min` of `q ↦ Q(q)/q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LStar {
    pub q: f64,
    pub value: f64,
}

// Points where an objective over cutoffs α must be evaluated: the CDF
// breakpoints, plus a log grid over the continuous part.
fn alpha_candidates(d: &RuntimeDistribution) -> (Vec<f64>, Vec<f64>) {
    let atoms = d.breakpoints();
    if !d.has_continuous_part() {
        return (atoms, Vec::new());
    }
    let lo = d.support_min().max(1.0);
    let top = d.finite_mass() - 1e-9;
    let hi = if top > 0.0 { d.quantile(top).map(|t| t.get()).unwrap_or(lo) } else { lo };
    let hi = if hi.is_finite() { hi.max(lo) } else { lo };
    if hi <= lo {
        return (atoms, vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let grid = (0..GRID_POINTS).map(|j| (a + (b - a) * j as f64 / (GRID_POINTS - 1) as f64).exp()).collect();
    (atoms, grid)
}

fn golden_section(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    // on ln α
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let g = |x: f64| f(x.exp());
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let (mut fc, mut fe) = (g(c), g(e));
    for _ in 0..GOLDEN_ITERATIONS {
        if (b - a).abs() <= GOLDEN_TOL * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = g(e);
        }
    }
    if fc <= fe {
        (c.exp(), fc)
    } else {
        (e.exp(), fe)
    }
}

fn minimize_over_alpha(d: &RuntimeDistribution, objective: impl Fn(f64) -> f64) -> (f64, f64) {
    let (atoms, grid) = alpha_candidates(d);
    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut consider = |alpha: f64, value: f64| {
        if value < best.1 {
            best = (alpha, value);
        }
    };
    for &a in &atoms {
        consider(a, objective(a));
    }
    let values: Vec<f64> = grid.iter().map(|&a| objective(a)).collect();
    for (&a, &v) in grid.iter().zip(&values) {
        consider(a, v);
    }
    if let Some(j) = (0..values.len()).min_by(|&x, &y| values[x].total_cmp(&values[y])) {
        if values[j].is_finite() && grid.len() > 1 {
            let lo = grid[j.saturating_sub(1)];
            let hi = grid[(j + 1).min(grid.len() - 1)];
            let (a, v) = golden_section(&objective, lo, hi);
            consider(a, v);
        }
    }
    best
}

/// `ℓ* = inf_α E[min{T, α}]/P(T ≤ α)`, the best expected time of any restart strategy.
pub fn optimal_constant(d: &RuntimeDistribution) -> OptimalConstant {
    let g = |a: f64| {
        let f = d.cdf(a);
        if f > 0.0 {
            d.expected_min(a) / f
        } else {
            f64::INFINITY
        }
    };
    let (mut alpha, mut value) = minimize_over_alpha(d, g);
    // never restarting is the limit α → ∞
    let mean = d.mean();
    if mean < value {
        alpha = f64::INFINITY;
        value = mean;
    }
    OptimalConstant { alpha, value }
}

/// `L* = inf_q Q(q)/q`, attained on the image of the CDF.
pub fn lstar(d: &RuntimeDistribution) -> LStar {
    let h = |a: f64| {
        let f = d.cdf(a);
        if f > 0.0 {
            a / f
        } else {
            f64::INFINITY
        }
    };
    let (alpha, value) = minimize_over_alpha(d, h);
    if !value.is_finite() {
        return LStar { q: 1.0, value: f64::INFINITY };
    }
    let q = d.cdf(alpha);
    let exact = d.quantile(q).map(|t| t.get() / q).unwrap_or(value);
    LStar { q, value: exact.min(value) }
}

/// `μ_φ(T) = φ⁻¹(E[φ(T)])`; `+∞` when `E[φ(T)]` reaches `sup φ`.
pub fn mu_phi(d: &RuntimeDistribution, phi: &ConcaveTransform) -> Result<f64> {
    phi.validate()?;
    let e = d.expected_transform(phi)?;
    if !e.is_finite() || e >= phi.sup() {
        return Ok(f64::INFINITY);
    }
    Ok(phi.inverse(e).max(1.0))
}

/// `1 + min{a + b, a log₂²a, b log₂²b}` (with `PolyLog`; other weights use their growth term).
pub fn psi(a: f64, b: f64, weights: WeightFunction) -> f64 {
    1.0 + (a + b).min(weights.growth(a)).min(weights.growth(b))
}

/// `1 + min{a + b, φ(a), φ(b)}`.
pub fn psi_offset(a: f64, b: f64, weights: WeightFunction) -> f64 {
    1.0 + (a + b).min(weights.phi(a)).min(weights.phi(b))
}

/// The levels over which infima in `q` are taken: `{2^{−i−1}}_{i≤i_max} ∪ {1}`
/// and the CDF values at breakpoints (and on a grid over continuous parts).
pub fn q_grid(d: &RuntimeDistribution, i_max: usize) -> Vec<f64> {
    let mut qs: Vec<f64> = (0..=i_max).map(|i| 2f64.powi(-(i as i32) - 1)).collect();
    qs.push(1.0);
    let (atoms, grid) = alpha_candidates(d);
    qs.extend(atoms.iter().chain(&grid).map(|&a| d.cdf(a)).filter(|&q| q > 0.0 && q <= 1.0));
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    qs
}

/// `inf_q over the grid of Q(q)/q · factor(q, Q(q))`, with the minimizing level.
pub fn grid_inf(d: &RuntimeDistribution, factor: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let mut best = (1.0, f64::INFINITY);
    for q in q_grid(d, DEFAULT_I_MAX) {
        let big_q = d.quantile(q).map(|t| t.get()).unwrap_or(f64::INFINITY);
        if !big_q.is_finite() {
            continue;
        }
        let v = big_q / q * factor(q, big_q);
        if v < best.1 {
            best = (q, v);
        }
    }
    best
}

/// `4 Q(q)/q`, the bound on `L̄⁺` of the geometric quantile sequence.
pub fn bound_quantile(d: &RuntimeDistribution, q: f64) -> Result<f64> {
    let big_q = d.quantile(q)?.get();
    Ok(4.0 * big_q / q)
}

/// `4/(q (1 − q)^{1/a}) · E[T^a]^{1/a}`, the moment form of the quantile bound.
pub fn bound_moments(d: &RuntimeDistribution, q: f64, a: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(domain(format!("quantile level must be in (0, 1], got {q}")));
    }
    let mu = mu_phi(d, &ConcaveTransform::power(a)?)?;
    Ok(4.0 / (q * (1.0 - q).powf(1.0 / a)) * mu)
}

fn sprs_factor(q: f64) -> f64 {
    let l = (1.0 / q).log2();
    if l <= 0.0 {
        return 1.0;
    }
    let ll = l.log2();
    1.0 + l * ll * ll
}

/// `23 · inf_q (Q(q)/q)(1 + L·log₂²L)`, `L = log₂(1/q)`.
pub fn bound_sprs(d: &RuntimeDistribution) -> f64 {
    SPRS_CONSTANT * grid_inf(d, |q, _| sprs_factor(q)).1
}

/// `inf_q (Q(q)/q)·ψ(⌊log₂ Q(q)⌋, ⌊log₂(1/q)⌋)`, without the unspecified leading constant.
pub fn bound_ssprs(d: &RuntimeDistribution, weights: WeightFunction) -> f64 {
    grid_inf(d, |q, big_q| psi(big_q.log2().floor(), (1.0 / q).log2().floor(), weights)).1
}

/// As [`bound_ssprs`] with `ψ = 1 + min{a + b, φ(a), φ(b)}`.
pub fn bound_ssprs_offset(d: &RuntimeDistribution, weights: WeightFunction) -> f64 {
    grid_inf(d, |q, big_q| psi_offset(big_q.log2().floor(), (1.0 / q).log2().floor(), weights)).1
}

/// `min_i L̄⁺(S^i)/r_i`, the guarantee of the combiner over a finite family.
///
/// Members whose value cannot beat the current minimum (because
/// `L̄⁺(S^i) ≥ ℓ*`) are skipped; members whose series does not converge
/// within the term cap count as `+∞`.
pub fn combiner_bound(family: &CombinerFamily, d: &RuntimeDistribution) -> Result<CombinerBound> {
    let ellstar = optimal_constant(d).value;
    let opts = ExactOptions { tol: 1e-10, max_terms: 2_000_000 };
    let mut best = CombinerBound { value: f64::INFINITY, index: None };
    let mut order: Vec<usize> = (0..family.len()).collect();
    order.sort_by(|&a, &b| family.weights()[b].total_cmp(&family.weights()[a]));
    for i in order {
        let r = family.weights()[i];
        if ellstar / r >= best.value {
            continue;
        }
        let v = exact_expected_time_with(&family.members()[i], d, opts)?.lbar_plus_upper() / r;
        if v < best.value {
            best = CombinerBound { value: v, index: Some(i) };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinerBound {
    pub value: f64,
    /// The member attaining the minimum.
    pub index: Option<usize>,
}

fn check_power_params(beta: f64, eps: f64) -> Result<f64> {
    if !(beta > 0.0 && eps >= 0.0 && beta.is_finite() && eps.is_finite()) {
        return Err(domain(format!("need beta > 0 and eps >= 0, got beta={beta}, eps={eps}")));
    }
    let b = beta * (1.0 + eps);
    if b >= 1.0 {
        return Err(domain(format!("need beta (1 + eps) < 1, got {b}")));
    }
    Ok(b)
}

/// Closed form of `c(r)` for `φ(x) = 1 − x^{−β}` and `ϕ(x) = x^{1+ε}`.
pub fn c_power(r: f64, beta: f64, eps: f64) -> Result<f64> {
    let b = check_power_params(beta, eps)?;
    if !(r >= 1.0) {
        return Err(domain(format!("need r >= 1, got {r}")));
    }
    let bracket = 1.0 / (1.0 - b) - b * r.powf(beta - 1.0 / (1.0 + eps)) / (1.0 - b);
    Ok(bracket.powf(-1.0 / beta))
}

/// `inf_{r≥1} c(r) = (1 − β(1+ε))^{1/β}`.
pub fn c_power_limit(beta: f64, eps: f64) -> Result<f64> {
    let b = check_power_params(beta, eps)?;
    Ok((1.0 - b).powf(1.0 / beta))
}

/// `C_{β,ε} = (1 − β(1+ε))^{−1/β}`, the constant in `inf_q Q(q)/q^{1+ε} ≤ C μ_{φ_β}(T)`.
pub fn c_beta_eps(beta: f64, eps: f64) -> Result<f64> {
    Ok(1.0 / c_power_limit(beta, eps)?)
}

/// `c(r) = (1/r) φ⁻¹(φ(r) − ∫_1^r (t/r)^{1/(1+ε)} φ'(t) dt)` by adaptive quadrature.
pub fn c_general(r: f64, phi: &ConcaveTransform, eps: f64) -> Result<f64> {
    phi.validate()?;
    if !(r >= 1.0 && r.is_finite()) {
        return Err(domain(format!("need finite r >= 1, got {r}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(domain(format!("need eps >= 0, got {eps}")));
    }
    let gamma = 1.0 / (1.0 + eps);
    let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000 };
    let integral = integrate(|t| (t / r).powf(gamma) * phi.derivative(t), 1.0, r, opts)?.value;
    Ok(phi.inverse(phi.forward(r) - integral) / r)
}

/// `(μ_{φ₁}(T), e²·μ·(1 + ln μ))` with `μ_{φ₁}(T) = 1/E[1/T]`; brackets `ℓ*`.
pub fn lb_sandwich(d: &RuntimeDistribution) -> Result<(f64, f64)> {
    let mu = mu_phi(d, &ConcaveTransform::OneMinusPow { beta: 1.0 })?;
    let e2 = std::f64::consts::E * std::f64::consts::E;
    Ok((mu, e2 * mu * (1.0 + mu.ln())))
}

/// Curvature ratio at a point and its limit at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Curvature {
    pub ratio: f64,
    pub limit: f64,
    pub verdict: ReverseJensen,
}

pub fn curvature(phi: &ConcaveTransform, t: f64) -> Result<Curvature> {
    phi.validate()?;
    if !(t >= 1.0) {
        return Err(domain(format!("need t >= 1, got {t}")));
    }
    Ok(Curvature { ratio: phi.curvature_ratio(t), limit: phi.curvature_limit(), verdict: phi.reverse_jensen() })
}

/// `inf_q Q(q)/q^{1+ε}` over the grid of [`q_grid`].
pub fn grid_inf_powers(d: &RuntimeDistribution, eps: f64) -> f64 {
    grid_inf(d, |q, _| q.powf(-eps)).1
}

/// One quantile table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub q: f64,
    pub value: ExtReal,
}

/// Everything the oracle knows about one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub distribution: DistSpec,
    pub ellstar: ExtReal,
    pub alphastar: ExtReal,
    pub lstar: ExtReal,
    pub qstar: f64,
    pub mass_at_infinity: f64,
    pub mean: ExtReal,
    pub quantiles: Vec<QuantileRow>,
    pub mu_values: BTreeMap<String, ExtReal>,
    pub bound_values: BTreeMap<String, ExtReal>,
}

pub fn oracle_report(d: &RuntimeDistribution) -> Result<OracleReport> {
    let opt = optimal_constant(d);
    let ls = lstar(d);
    let quantiles = (0..=10)
        .map(|i| {
            let q = 2f64.powi(-i);
            Ok(QuantileRow { q, value: ExtReal(d.quantile(q)?.get()) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mu_values = BTreeMap::new();
    for phi in ConcaveTransform::standard_set() {
        mu_values.insert(phi.to_string(), ExtReal(mu_phi(d, &phi)?));
    }
    let mut bound_values = BTreeMap::new();
    let w = WeightFunction::PolyLog;
    for q in [1.0, 0.5, 0.25] {
        bound_values.insert(format!("quantile:{q}"), ExtReal(bound_quantile(d, q)?));
    }
    for q in [0.25, 0.5] {
        for a in [0.5, 1.0] {
            bound_values.insert(format!("moments:{q}:{a}"), ExtReal(bound_moments(d, q, a)?));
        }
    }
    bound_values.insert("sprs_23".into(), ExtReal(bound_sprs(d)));
    bound_values.insert("ssprs_psi".into(), ExtReal(bound_ssprs(d, w)));
    bound_values.insert("ssprs_psi_offset".into(), ExtReal(bound_ssprs_offset(d, w)));
    let (lo, hi) = lb_sandwich(d)?;
    bound_values.insert("lb_lower".into(), ExtReal(lo));
    bound_values.insert("lb_upper".into(), ExtReal(hi));
    Ok(OracleReport {
        distribution: d.to_spec(),
        ellstar: ExtReal(opt.value),
        alphastar: ExtReal(opt.alpha),
        lstar: ExtReal(ls.value),
        qstar: ls.q,
        mass_at_infinity: d.mass_at_infinity(),
        mean: ExtReal(d.mean()),
        quantiles,
        mu_values,
        bound_values,
    })
}

//! Experiment configs and result tables for the `simulate` and `bounds` commands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::dist::{DistSpec, RuntimeDistribution};
use crate::engine::{exact_expected_time_with, monte_carlo, ExactOptions, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::oracle;
use crate::sched::{CombinerFamily, Strategy, StrategySpec, WeightFunction};
use crate::transform::ConcaveTransform;

/// Environment variable overriding the seed of every config.
pub const SEED_ENV: &str = "RESTARTLAB_SEED";

/// How expected times are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact series for deterministic sequences, Monte Carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Auto => "auto",
            Method::Exact => "exact",
            Method::MonteCarlo => "monte_carlo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_trials() -> u64 {
    10_000
}

fn default_horizon() -> ExtReal {
    ExtReal(DEFAULT_HORIZON)
}

// Strategies may be written either as tagged objects or as shorthand strings.
fn strategy_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<StrategySpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(serde_json::Value),
        Many(Vec<serde_json::Value>),
    }
    let values = match OneOrMany::deserialize(d)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(serde_json::Value::Array(v)) => v,
        OneOrMany::One(v) => vec![v],
    };
    values
        .into_iter()
        .map(|v| match v {
            serde_json::Value::String(s) => s.parse::<StrategySpec>().map_err(serde::de::Error::custom),
            other => StrategySpec::deserialize(other).map_err(serde::de::Error::custom),
        })
        .collect()
}

/// One experiment: a distribution, the strategies to run on it, and the bounds to check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distribution: DistSpec,
    #[serde(default, alias = "strategies", deserialize_with = "strategy_list")]
    pub strategy: Vec<StrategySpec>,
    #[serde(default = "default_trials")]
    pub n_trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: ExtReal,
    #[serde(default, alias = "bounds")]
    pub bounds_to_check: Vec<String>,
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl ExperimentConfig {
    /// Parses JSON text, reporting the line and column of malformed input.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        self.distribution.build()?;
        for s in &self.strategy {
            s.build()?;
        }
        for b in &self.bounds_to_check {
            b.parse::<BoundName>()?;
        }
        let h = self.horizon.get();
        if !(h >= 1.0 && h.is_finite()) {
            return Err(Error::Config(format!("horizon must be finite and >= 1, got {h}")));
        }
        Ok(())
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} must be an integer, got `{v}`")))?;
        }
        Ok(())
    }
}

/// A named oracle quantity that can be checked against an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundName {
    /// `4 Q(q)/q` on `L̄⁺`.
    Quantile(f64),
    /// The moment form of the quantile bound on `L̄`.
    Moments { q: f64, a: f64 },
    Sprs23,
    /// `min_i L̄⁺(S^i)/r_i` of the strategy's own family.
    Combine,
    SsprsPsi,
    SsprsPsiOffset,
    Ellstar,
    Lstar,
    LbLower,
    LbUpper,
    Mu(ConcaveTransform),
}

pub const BOUND_NAMES: &[&str] = &[
    "quantile[:q]",
    "moments[:q[:a]]",
    "sprs_23",
    "combine",
    "ssprs_psi",
    "ssprs_psi_offset",
    "ellstar",
    "lstar",
    "lb_lower",
    "lb_upper",
    "mu:<transform>",
];

impl FromStr for BoundName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.splitn(2, ':');
        let head = parts.next().unwrap_or("");
        let rest = parts.next();
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number `{v}` in bound `{s}`")));
        let b = match (head, rest) {
            ("quantile", None) => BoundName::Quantile(0.5),
            ("quantile", Some(q)) => BoundName::Quantile(num(q)?),
            ("moments", None) => BoundName::Moments { q: 0.5, a: 1.0 },
            ("moments", Some(r)) => match r.split_once(':') {
                Some((q, a)) => BoundName::Moments { q: num(q)?, a: num(a)? },
                None => BoundName::Moments { q: num(r)?, a: 1.0 },
            },
            ("sprs_23", None) => BoundName::Sprs23,
            ("combine", None) => BoundName::Combine,
            ("ssprs_psi", None) => BoundName::SsprsPsi,
            ("ssprs_psi_offset", None) => BoundName::SsprsPsiOffset,
            ("ellstar", None) => BoundName::Ellstar,
            ("lstar", None) => BoundName::Lstar,
            ("lb_lower", None) => BoundName::LbLower,
            ("lb_upper", None) => BoundName::LbUpper,
            ("mu", Some(t)) => BoundName::Mu(t.parse()?),
            _ => {
                return Err(Error::Config(format!("unknown bound `{s}`; valid names: {}", BOUND_NAMES.join(", "))));
            }
        };
        match b {
            BoundName::Quantile(q) | BoundName::Moments { q, .. } if !(q > 0.0 && q <= 1.0) => {
                Err(Error::Config(format!("quantile level in `{s}` must be in (0, 1]")))
            }
            BoundName::Moments { a, .. } if !(a > 0.0 && a <= 1.0) => {
                Err(Error::Config(format!("moment order in `{s}` must be in (0, 1]")))
            }
            b => Ok(b),
        }
    }
}

impl fmt::Display for BoundName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundName::Quantile(q) => write!(f, "quantile:{q}"),
            BoundName::Moments { q, a } => write!(f, "moments:{q}:{a}"),
            BoundName::Sprs23 => f.write_str("sprs_23"),
            BoundName::Combine => f.write_str("combine"),
            BoundName::SsprsPsi => f.write_str("ssprs_psi"),
            BoundName::SsprsPsiOffset => f.write_str("ssprs_psi_offset"),
            BoundName::Ellstar => f.write_str("ellstar"),
            BoundName::Lstar => f.write_str("lstar"),
            BoundName::LbLower => f.write_str("lb_lower"),
            BoundName::LbUpper => f.write_str("lb_upper"),
            BoundName::Mu(t) => write!(f, "mu:{t}"),
        }
    }
}

/// Which estimate a bound constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Lbar,
    LbarPlus,
}

/// Direction of the check; `reference` values are reported without a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Upper,
    Lower,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub target: Target,
    pub relation: Relation,
}

fn combine_family(strategy: &Strategy) -> Result<CombinerFamily> {
    match strategy {
        Strategy::Combiner { family, .. } => Ok(family.clone()),
        Strategy::TwoStage(t) => CombinerFamily::ssprs(t.weights(), t.i_max()),
        Strategy::Sequence(s) => CombinerFamily::new(vec![s.clone()], vec![1.0]),
    }
}

impl BoundName {
    /// Evaluates the bound; `strategy` is needed only for `combine`.
    pub fn evaluate(&self, d: &RuntimeDistribution, strategy: Option<&Strategy>) -> Result<BoundValue> {
        use Relation::*;
        use Target::*;
        let w = WeightFunction::PolyLog;
        let (value, target, relation) = match self {
            BoundName::Quantile(q) => (oracle::bound_quantile(d, *q)?, LbarPlus, Upper),
            BoundName::Moments { q, a } => (oracle::bound_moments(d, *q, *a)?, Lbar, Upper),
            BoundName::Sprs23 => (oracle::bound_sprs(d), Lbar, Upper),
            BoundName::Combine => {
                let s = strategy.ok_or_else(|| Error::Config("bound `combine` needs a strategy".into()))?;
                (oracle::combiner_bound(&combine_family(s)?, d)?.value, LbarPlus, Upper)
            }
            BoundName::SsprsPsi => (oracle::bound_ssprs(d, w), Lbar, Reference),
            BoundName::SsprsPsiOffset => (oracle::bound_ssprs_offset(d, w), Lbar, Reference),
            BoundName::Ellstar => (oracle::optimal_constant(d).value, Lbar, Lower),
            BoundName::Lstar => (oracle::lstar(d).value, Lbar, Reference),
            BoundName::LbLower => (oracle::lb_sandwich(d)?.0, Lbar, Lower),
            BoundName::LbUpper => (oracle::lb_sandwich(d)?.1, Lbar, Reference),
            BoundName::Mu(t) => (oracle::mu_phi(d, t)?, Lbar, Reference),
        };
        Ok(BoundValue { value, target, relation })
    }
}

/// One output row: a strategy's estimates, optionally joined with one bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub strategy: String,
    pub distribution: String,
    pub method: String,
    pub n_trials: Option<u64>,
    pub seed: Option<u64>,
    pub mean_actual: ExtReal,
    pub stderr_actual: ExtReal,
    pub mean_charged: ExtReal,
    pub stderr_charged: ExtReal,
    pub truncation_rate: f64,
    pub bound_name: Option<String>,
    pub target: Option<Target>,
    pub relation: Option<Relation>,
    pub estimate: Option<ExtReal>,
    pub stderr: Option<ExtReal>,
    pub bound: Option<ExtReal>,
    pub bound_satisfied: Option<bool>,
}

/// One row of the `bounds` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub distribution: String,
    pub bound_name: String,
    pub value: ExtReal,
    pub target: Target,
    pub relation: Relation,
}

struct Estimate {
    method: Method,
    n: Option<u64>,
    seed: Option<u64>,
    actual: (f64, f64),
    charged: (f64, f64),
    truncation_rate: f64,
}

fn estimate(cfg: &ExperimentConfig, strategy: &Strategy, d: &RuntimeDistribution) -> Result<Estimate> {
    let exact = match (cfg.method, strategy.as_sequence()) {
        (Method::Exact, None) => {
            return Err(Error::Config(format!("strategy `{strategy}` is randomized and has no exact evaluator")));
        }
        (Method::Exact | Method::Auto, Some(seq)) => Some(seq),
        _ => None,
    };
    if let Some(seq) = exact {
        let v = exact_expected_time_with(seq, d, ExactOptions::default())?;
        let (lbar, plus) = if v.converged { (v.lbar, v.lbar_plus) } else { (f64::INFINITY, f64::INFINITY) };
        return Ok(Estimate {
            method: Method::Exact,
            n: None,
            seed: None,
            actual: (lbar, 0.0),
            charged: (plus, 0.0),
            truncation_rate: 0.0,
        });
    }
    let mc = monte_carlo(strategy, d, cfg.n_trials, cfg.seed, cfg.horizon.get())?;
    Ok(Estimate {
        method: Method::MonteCarlo,
        n: Some(mc.n_trials),
        seed: Some(mc.seed),
        actual: (mc.mean_actual, mc.stderr_actual),
        charged: (mc.mean_charged, mc.stderr_charged),
        truncation_rate: mc.truncation_rate,
    })
}

fn satisfied(relation: Relation, est: f64, se: f64, bound: f64) -> Option<bool> {
    match relation {
        Relation::Upper => Some(est <= bound + 3.0 * se),
        Relation::Lower => Some(est >= bound - 3.0 * se),
        Relation::Reference => None,
    }
}

/// Runs every strategy of the config and joins the results with the requested bounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.strategy.is_empty() {
        return Err(Error::Config("config lists no strategy".into()));
    }
    let d = cfg.distribution.build()?;
    let bounds = cfg.bounds_to_check.iter().map(|b| b.parse::<BoundName>()).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for spec in &cfg.strategy {
        let strategy = spec.build()?;
        let e = estimate(cfg, &strategy, &d)?;
        let base = ResultRow {
            strategy: spec.to_string(),
            distribution: cfg.distribution.label(),
            method: e.method.to_string(),
            n_trials: e.n,
            seed: e.seed,
            mean_actual: ExtReal(e.actual.0),
            stderr_actual: ExtReal(e.actual.1),
            mean_charged: ExtReal(e.charged.0),
            stderr_charged: ExtReal(e.charged.1),
            truncation_rate: e.truncation_rate,
            bound_name: None,
            target: None,
            relation: None,
            estimate: None,
            stderr: None,
            bound: None,
            bound_satisfied: None,
        };
        if bounds.is_empty() {
            rows.push(base);
            continue;
        }
        for b in &bounds {
            let v = b.evaluate(&d, Some(&strategy))?;
            let (est, se) = match v.target {
                Target::Lbar => e.actual,
                Target::LbarPlus => e.charged,
            };
            rows.push(ResultRow {
                bound_name: Some(b.to_string()),
                target: Some(v.target),
                relation: Some(v.relation),
                estimate: Some(ExtReal(est)),
                stderr: Some(ExtReal(se)),
                bound: Some(ExtReal(v.value)),
                bound_satisfied: satisfied(v.relation, est, se, v.value),
                ..base.clone()
            });
        }
    }
    Ok(rows)
}

/// Evaluates the config's bounds without running any strategy.
///
/// `combine` is evaluated once per strategy of the config.
pub fn evaluate_bounds(cfg: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    cfg.validate()?;
    let d = cfg.distribution.build()?;
    let label = cfg.distribution.label();
    let mut rows = Vec::new();
    for name in &cfg.bounds_to_check {
        let b: BoundName = name.parse()?;
        if b == BoundName::Combine {
            for spec in &cfg.strategy {
                let v = b.evaluate(&d, Some(&spec.build()?))?;
                rows.push(BoundRow {
                    distribution: label.clone(),
                    bound_name: format!("combine[{spec}]"),
                    value: ExtReal(v.value),
                    target: v.target,
                    relation: v.relation,
                });
            }
            continue;
        }
        let v = b.evaluate(&d, None)?;
        rows.push(BoundRow {
            distribution: label.clone(),
            bound_name: b.to_string(),
            value: ExtReal(v.value),
            target: v.target,
            relation: v.relation,
        });
    }
    Ok(rows)
}

/// Writes rows as CSV (with header) or as a JSON array.
pub fn write_rows<T: Serialize, W: std::io::Write>(rows: &[T], format: OutputFormat, out: W) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

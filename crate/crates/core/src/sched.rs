//! Randomized schedules: the simulated-parallel combiner over a family of
//! cutoff sequences, and the SPRS / symmetric SPRS instantiations.
//!
//! A combiner keeps one run counter `K_i` per member and, at every step,
//! picks member `i` with probability proportional to `r_i / S^i_{K_i}`, so
//! that in the long run member `i` receives a share `r_i` of the time.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::CutoffSequence;

/// Default truncation index of the infinite families.
pub const DEFAULT_I_MAX: usize = 64;
/// Largest accepted truncation index (2^{−i−1} must stay a normal float).
pub const MAX_I_MAX: usize = 1000;
/// Full recomputation period of the running normalizer.
const RECOMPUTE_PERIOD: u32 = 1 << 16;

/// Weight profile `φ` of the infinite families, `r_i = 1/(C·φ(i))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFunction {
    /// `φ(x) = 1 + x·log₂²x`, with `φ(0) = φ(1) = 1`.
    #[default]
    PolyLog,
    /// `φ(x) = 1 + x^{1+ε}`.
    Power1PlusEps { eps: f64 },
}

impl WeightFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightFunction::PolyLog => Ok(()),
            WeightFunction::Power1PlusEps { eps } if *eps > 0.0 && eps.is_finite() => Ok(()),
            WeightFunction::Power1PlusEps { eps } => {
                Err(Error::InvalidStrategy(format!("weight exponent eps must be positive, got {eps}")))
            }
        }
    }

    /// `φ(x) − 1`: `x·log₂²x` (zero for `x ≤ 1`) or `x^{1+ε}`.
    pub fn growth(&self, x: f64) -> f64 {
        match self {
            WeightFunction::PolyLog => {
                if x <= 1.0 {
                    0.0
                } else {
                    let l = x.log2();
                    x * l * l
                }
            }
            WeightFunction::Power1PlusEps { eps } => x.max(0.0).powf(1.0 + eps),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        1.0 + self.growth(x)
    }

    /// The constant `C` in `r_i = 1/(C·φ(i))`.
    pub fn normalizer(&self) -> f64 {
        match self {
            WeightFunction::PolyLog => 2.8,
            WeightFunction::Power1PlusEps { eps } => 2.0 + 1.0 / eps,
        }
    }

    /// A proven upper bound on `Σ_{i≥0} 1/φ(i)`.
    pub fn certified_sum_bound(&self) -> f64 {
        match self {
            // partial sum to 10^6 plus the integral tail ln 2 / log₂(10^6)
            WeightFunction::PolyLog => 2.83,
            WeightFunction::Power1PlusEps { eps } => 1.5 + 1.0 / eps,
        }
    }

    /// `Σ_{i≤n} 1/φ(i)`.
    pub fn partial_sum(&self, n: usize) -> f64 {
        (0..=n).map(|i| 1.0 / self.phi(i as f64)).sum()
    }

    /// `r_i = 1/(C·φ(i))`.
    pub fn weight(&self, i: usize) -> f64 {
        1.0 / (self.normalizer() * self.phi(i as f64))
    }
}

/// A finite family of deterministic sequences with weights `r_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerFamily {
    members: Vec<CutoffSequence>,
    weights: Vec<f64>,
}

impl CombinerFamily {
    pub fn new(members: Vec<CutoffSequence>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidStrategy("combiner family is empty".into()));
        }
        if members.len() != weights.len() {
            return Err(Error::InvalidStrategy(format!(
                "{} sequences but {} weights",
                members.len(),
                weights.len()
            )));
        }
        for m in &members {
            m.validate()?;
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidStrategy("combiner weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidStrategy(format!("combiner weights sum to {total} > 1")));
        }
        Ok(Self { members, weights })
    }

    /// Geometric quantile sequences `q_i = 2^{−i−1}`, `i = 0..=i_max`, with `r_i = 1/(C·φ(i))`.
    pub fn sprs(weights: WeightFunction, i_max: usize) -> Result<Self> {
        weights.validate()?;
        check_i_max(i_max)?;
        let members = (0..=i_max).map(|i| CutoffSequence::GeometricQuantile { q: dyadic(i) }).collect();
        let r = (0..=i_max).map(|i| weights.weight(i)).collect();
        Self::new(members, r)
    }

    /// The flat symmetric family: index 0 is Luby with weight 1/3, index
    /// `2i+1` the quantile sequence `q_i = 2^{−i−1}` and index `2i+2` the
    /// constant `2^{i+1}`, both with weight `1/(3C·φ(i))`.
    pub fn ssprs(weights: WeightFunction, i_max: usize) -> Result<Self> {
        weights.validate()?;
        check_i_max(i_max)?;
        let mut members = vec![CutoffSequence::Luby];
        let mut r = vec![1.0 / 3.0];
        for i in 0..=i_max {
            let w = weights.weight(i) / 3.0;
            members.push(CutoffSequence::GeometricQuantile { q: dyadic(i) });
            members.push(CutoffSequence::Constant { alpha: 2f64.powi(i as i32 + 1) });
            r.extend([w, w]);
        }
        Self::new(members, r)
    }

    pub fn members(&self) -> &[CutoffSequence] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn start(&self) -> CombinerState<'_> {
        CombinerState::new(self)
    }
}

fn dyadic(i: usize) -> f64 {
    2f64.powi(-(i as i32) - 1)
}

fn check_i_max(i_max: usize) -> Result<()> {
    if i_max > MAX_I_MAX {
        return Err(Error::InvalidStrategy(format!("i_max {i_max} exceeds {MAX_I_MAX}")));
    }
    Ok(())
}

/// One scheduling decision: which member runs next, and for how long.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub index: usize,
    pub cutoff: f64,
    pub saturated: bool,
}

/// Mutable combiner state for one trial.
#[derive(Debug, Clone)]
pub struct CombinerState<'a> {
    family: &'a CombinerFamily,
    counts: Vec<u64>,
    current: Vec<f64>,
    z: f64,
    since_recompute: u32,
    draws: u64,
}

impl<'a> CombinerState<'a> {
    fn new(family: &'a CombinerFamily) -> Self {
        let current: Vec<f64> =
            family.members.iter().zip(&family.weights).map(|(s, r)| r / s.cutoff(0)).collect();
        let z = current.iter().sum();
        Self { family, counts: vec![0; family.len()], current, z, since_recompute: 0, draws: 0 }
    }

    /// Run counters `K_i`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Probability of each member being selected by the next draw.
    pub fn selection_probabilities(&self) -> Vec<f64> {
        let z: f64 = self.current.iter().sum();
        self.current.iter().map(|w| w / z).collect()
    }

    /// Samples the index of the next draw without advancing the state.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let target = rng.random::<f64>() * self.z;
        let mut acc = 0.0;
        for (i, w) in self.current.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        // rounding left the target past the last cumulative weight
        self.current.iter().rposition(|w| *w > 0.0).unwrap_or(self.current.len() - 1)
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Draw {
        let index = self.sample_index(rng);
        self.advance(index)
    }

    /// Runs member `index` once: emits `S^index_{K_index}` and increments its counter.
    pub fn advance(&mut self, index: usize) -> Draw {
        let member = &self.family.members[index];
        let cutoff = member.cutoff_flagged(self.counts[index]);
        self.counts[index] += 1;
        let updated = self.family.weights[index] / member.cutoff(self.counts[index]);
        self.z += updated - self.current[index];
        self.current[index] = updated;
        self.draws += 1;
        self.since_recompute += 1;
        if self.since_recompute == RECOMPUTE_PERIOD {
            self.z = self.current.iter().sum();
            self.since_recompute = 0;
        }
        Draw { index, cutoff: cutoff.value, saturated: cutoff.saturated }
    }

    /// The current unnormalized selection weight `r_i / S^i_{K_i}` of member `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.current[i]
    }
}

/// Sampling mode of the symmetric SPRS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsprsMode {
    /// One combiner over the flat family of [`CombinerFamily::ssprs`].
    #[default]
    Flat,
    /// Pick a branch uniformly at random, then draw inside it.
    TwoStage,
}

/// The symmetric SPRS sampled in two stages: a uniform branch
/// `U ∈ {1, 2, 3}`, then the Luby sequence, an SPRS draw, or a constant
/// `2^{I+1}` with `P(I = i) ∝ 2^{−i−1}/φ(i)`.
///
/// Draw indices use the flat numbering of [`CombinerFamily::ssprs`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageSsprs {
    sprs: CombinerFamily,
    constant_cdf: Vec<f64>,
    weights: WeightFunction,
    i_max: usize,
}

impl TwoStageSsprs {
    pub fn new(weights: WeightFunction, i_max: usize) -> Result<Self> {
        let sprs = CombinerFamily::sprs(weights, i_max)?;
        let mut constant_cdf = Vec::with_capacity(i_max + 1);
        let mut acc = 0.0;
        for i in 0..=i_max {
            acc += dyadic(i) / weights.phi(i as f64);
            constant_cdf.push(acc);
        }
        Ok(Self { sprs, constant_cdf, weights, i_max })
    }

    pub fn i_max(&self) -> usize {
        self.i_max
    }

    pub fn weights(&self) -> WeightFunction {
        self.weights
    }

    pub fn start(&self) -> TwoStageState<'_> {
        TwoStageState { owner: self, luby_runs: 0, sprs: self.sprs.start(), draws: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageState<'a> {
    owner: &'a TwoStageSsprs,
    luby_runs: u64,
    sprs: CombinerState<'a>,
    draws: u64,
}

impl TwoStageState<'_> {
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Probability of each flat index being selected by the next draw.
    pub fn selection_probabilities(&self) -> Vec<f64> {
        let n = self.owner.i_max + 1;
        let mut out = vec![0.0; 2 * n + 1];
        out[0] = 1.0 / 3.0;
        let total = self.owner.constant_cdf[n - 1];
        for (i, p) in self.sprs.selection_probabilities().into_iter().enumerate() {
            out[2 * i + 1] = p / 3.0;
            let mass = dyadic(i) / self.owner.weights.phi(i as f64);
            out[2 * i + 2] = mass / total / 3.0;
        }
        out
    }

    /// Samples the flat index of the next draw without advancing the state.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match rng.random_range(0..3u8) {
            0 => 0,
            1 => 2 * self.sprs.sample_index(rng) + 1,
            _ => 2 * self.sample_constant(rng) + 2,
        }
    }

    fn sample_constant<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let cdf = &self.owner.constant_cdf;
        let target = rng.random::<f64>() * cdf[cdf.len() - 1];
        cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Draw {
        let index = self.sample_index(rng);
        self.advance(index)
    }

    /// Runs flat index `index` once.
    pub fn advance(&mut self, index: usize) -> Draw {
        self.draws += 1;
        if index == 0 {
            let cutoff = crate::seq::luby(self.luby_runs);
            self.luby_runs += 1;
            Draw { index: 0, cutoff, saturated: false }
        } else if index % 2 == 1 {
            let d = self.sprs.advance(index / 2);
            Draw { index, ..d }
        } else {
            Draw { index, cutoff: 2f64.powi((index / 2) as i32), saturated: false }
        }
    }
}

/// A cutoff strategy: a fixed sequence or a randomized schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Sequence(CutoffSequence),
    Combiner { family: CombinerFamily, spec: StrategySpec },
    TwoStage(TwoStageSsprs),
}

impl Strategy {
    pub fn schedule(&self) -> Schedule<'_> {
        match self {
            Strategy::Sequence(seq) => Schedule::Sequence { seq, k: 0 },
            Strategy::Combiner { family, .. } => Schedule::Combiner(family.start()),
            Strategy::TwoStage(t) => Schedule::TwoStage(t.start()),
        }
    }

    pub fn is_randomized(&self) -> bool {
        !matches!(self, Strategy::Sequence(_))
    }

    pub fn as_sequence(&self) -> Option<&CutoffSequence> {
        match self {
            Strategy::Sequence(s) => Some(s),
            _ => None,
        }
    }

    /// The flat member list and weights of a combiner-based strategy.
    pub fn family(&self) -> Option<&CombinerFamily> {
        match self {
            Strategy::Combiner { family, .. } => Some(family),
            _ => None,
        }
    }

    pub fn to_spec(&self) -> StrategySpec {
        match self {
            Strategy::Sequence(CutoffSequence::Luby) => StrategySpec::Luby,
            Strategy::Sequence(CutoffSequence::GeometricQuantile { q }) => StrategySpec::Quantile { q: *q },
            Strategy::Sequence(CutoffSequence::Constant { alpha }) => StrategySpec::Constant { alpha: *alpha },
            Strategy::Sequence(CutoffSequence::Explicit { cutoffs }) => {
                StrategySpec::Explicit { cutoffs: cutoffs.clone() }
            }
            Strategy::Combiner { spec, .. } => spec.clone(),
            Strategy::TwoStage(t) => {
                StrategySpec::Ssprs { i_max: t.i_max, weights: t.weights, mode: SsprsMode::TwoStage }
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_spec().fmt(f)
    }
}

/// Per-trial scheduling state.
#[derive(Debug, Clone)]
pub enum Schedule<'a> {
    Sequence { seq: &'a CutoffSequence, k: u64 },
    Combiner(CombinerState<'a>),
    TwoStage(TwoStageState<'a>),
}

impl Schedule<'_> {
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Draw {
        match self {
            Schedule::Sequence { seq, k } => {
                let c = seq.cutoff_flagged(*k);
                *k += 1;
                Draw { index: 0, cutoff: c.value, saturated: c.saturated }
            }
            Schedule::Combiner(state) => state.next(rng),
            Schedule::TwoStage(state) => state.next(rng),
        }
    }

    pub fn is_combiner(&self) -> bool {
        !matches!(self, Schedule::Sequence { .. })
    }
}

fn default_i_max() -> usize {
    DEFAULT_I_MAX
}

/// A strategy as written in config files, tagged by `"strategy"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Luby,
    Quantile {
        q: f64,
    },
    Constant {
        alpha: f64,
    },
    Explicit {
        cutoffs: Vec<f64>,
    },
    Sprs {
        #[serde(default = "default_i_max")]
        i_max: usize,
        #[serde(default)]
        weights: WeightFunction,
    },
    Ssprs {
        #[serde(default = "default_i_max")]
        i_max: usize,
        #[serde(default)]
        weights: WeightFunction,
        #[serde(default)]
        mode: SsprsMode,
    },
    Combine {
        parts: Vec<StrategySpec>,
        weights: Vec<f64>,
    },
}

impl StrategySpec {
    pub fn build(&self) -> Result<Strategy> {
        let sequence = |s: CutoffSequence| -> Result<Strategy> {
            s.validate()?;
            Ok(Strategy::Sequence(s))
        };
        match self {
            StrategySpec::Luby => sequence(CutoffSequence::Luby),
            StrategySpec::Quantile { q } => sequence(CutoffSequence::GeometricQuantile { q: *q }),
            StrategySpec::Constant { alpha } => sequence(CutoffSequence::Constant { alpha: *alpha }),
            StrategySpec::Explicit { cutoffs } => sequence(CutoffSequence::Explicit { cutoffs: cutoffs.clone() }),
            StrategySpec::Sprs { i_max, weights } => {
                Ok(Strategy::Combiner { family: CombinerFamily::sprs(*weights, *i_max)?, spec: self.clone() })
            }
            StrategySpec::Ssprs { i_max, weights, mode: SsprsMode::Flat } => {
                Ok(Strategy::Combiner { family: CombinerFamily::ssprs(*weights, *i_max)?, spec: self.clone() })
            }
            StrategySpec::Ssprs { i_max, weights, mode: SsprsMode::TwoStage } => {
                Ok(Strategy::TwoStage(TwoStageSsprs::new(*weights, *i_max)?))
            }
            StrategySpec::Combine { parts, weights } => {
                let members = parts
                    .iter()
                    .map(|p| match p.build()? {
                        Strategy::Sequence(s) => Ok(s),
                        _ => Err(Error::InvalidStrategy(format!(
                            "combine parts must be deterministic sequences, got `{p}`"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Strategy::Combiner { family: CombinerFamily::new(members, weights.clone())?, spec: self.clone() })
            }
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Luby => f.write_str("luby"),
            StrategySpec::Quantile { q } => write!(f, "quantile:{q}"),
            StrategySpec::Constant { alpha } => write!(f, "constant:{alpha}"),
            StrategySpec::Explicit { cutoffs } => {
                let parts: Vec<String> = cutoffs.iter().map(|c| c.to_string()).collect();
                write!(f, "explicit:{}", parts.join(" "))
            }
            StrategySpec::Sprs { i_max, weights } => {
                write!(f, "sprs:{i_max}")?;
                write_weights(f, weights)
            }
            StrategySpec::Ssprs { i_max, weights, mode } => {
                let name = match mode {
                    SsprsMode::Flat => "ssprs",
                    SsprsMode::TwoStage => "ssprs_two_stage",
                };
                write!(f, "{name}:{i_max}")?;
                write_weights(f, weights)
            }
            StrategySpec::Combine { parts, weights } => {
                let inner: Vec<String> = parts.iter().zip(weights).map(|(p, w)| format!("{w}*{p}")).collect();
                write!(f, "combine({})", inner.join(" + "))
            }
        }
    }
}

fn write_weights(f: &mut fmt::Formatter<'_>, w: &WeightFunction) -> fmt::Result {
    match w {
        WeightFunction::PolyLog => Ok(()),
        WeightFunction::Power1PlusEps { eps } => write!(f, ":eps={eps}"),
    }
}

/// Parses either a JSON strategy record or a shorthand: `luby`,
/// `quantile:Q`, `constant:A`, `explicit:A,B,…`, `sprs[:I]`,
/// `ssprs[:I]`, `ssprs_two_stage[:I]`.
impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let spec: StrategySpec = serde_json::from_str(s).map_err(|e| Error::InvalidStrategy(format!("{e}")))?;
            spec.build()?;
            return Ok(spec);
        }
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::InvalidStrategy(format!("`{name}` needs a parameter, e.g. `{name}:2`")))?;
            a.trim().parse().map_err(|_| Error::InvalidStrategy(format!("bad parameter `{a}` for `{name}`")))
        };
        let i_max = |a: Option<&str>| -> Result<usize> {
            match a {
                None => Ok(DEFAULT_I_MAX),
                Some(a) => a.trim().parse().map_err(|_| Error::InvalidStrategy(format!("bad i_max `{a}`"))),
            }
        };
        let spec = match name {
            "luby" if arg.is_none() => StrategySpec::Luby,
            "quantile" => StrategySpec::Quantile { q: number(arg)? },
            "constant" => StrategySpec::Constant { alpha: number(arg)? },
            "explicit" => {
                let list = arg.ok_or_else(|| Error::InvalidStrategy("`explicit` needs cutoffs".into()))?;
                let cutoffs = list
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidStrategy(format!("bad cutoff `{v}`"))))
                    .collect::<Result<Vec<_>>>()?;
                StrategySpec::Explicit { cutoffs }
            }
            "sprs" => StrategySpec::Sprs { i_max: i_max(arg)?, weights: WeightFunction::PolyLog },
            "ssprs" => StrategySpec::Ssprs { i_max: i_max(arg)?, weights: WeightFunction::PolyLog, mode: SsprsMode::Flat },
            "ssprs_two_stage" => {
                StrategySpec::Ssprs { i_max: i_max(arg)?, weights: WeightFunction::PolyLog, mode: SsprsMode::TwoStage }
            }
            _ => {
                return Err(Error::InvalidStrategy(format!(
                    "unknown strategy `{s}`; expected luby, quantile:Q, constant:A, explicit:A,B,..., sprs, ssprs, ssprs_two_stage or a JSON record"
                )))
            }
        };
        spec.build()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests;

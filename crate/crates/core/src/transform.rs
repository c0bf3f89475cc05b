//! Increasing transforms `φ : [1, +∞) → ℝ` used for generalized means
//! `μ_φ(T) = φ⁻¹(E[φ(T)])`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// The closed-form transform families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConcaveTransform {
    /// `x`
    Identity,
    /// `ln x`
    Log,
    /// `ln(1 + ln x)`
    LogLog,
    /// `x^a`, `a > 0` (concave for `a ≤ 1`)
    Power { a: f64 },
    /// `1 − x^{−β}`, `β > 0`
    OneMinusPow { beta: f64 },
    /// `1 − e^{−s x}`, `s > 0`
    ExpNeg { s: f64 },
}

/// Whether an algorithmic reverse Jensen inequality `L̄(S) = O(μ_φ(T))` can hold,
/// read off the limit of `t φ''(t)/φ'(t)` against `−2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReverseJensen {
    Achievable,
    Impossible,
    Boundary,
}

impl ConcaveTransform {
    pub fn power(a: f64) -> Result<Self> {
        positive("a", a)?;
        Ok(Self::Power { a })
    }

    pub fn one_minus_pow(beta: f64) -> Result<Self> {
        positive("beta", beta)?;
        Ok(Self::OneMinusPow { beta })
    }

    pub fn exp_neg(s: f64) -> Result<Self> {
        positive("s", s)?;
        Ok(Self::ExpNeg { s })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Power { a } => positive("a", a),
            Self::OneMinusPow { beta } => positive("beta", beta),
            Self::ExpNeg { s } => positive("s", s),
            _ => Ok(()),
        }
    }

    pub fn is_concave(&self) -> bool {
        !matches!(*self, Self::Power { a } if a > 1.0)
    }

    /// `φ(x)`; `φ(+∞)` is the limit [`Self::sup`].
    pub fn forward(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return self.sup();
        }
        match *self {
            Self::Identity => x,
            Self::Log => x.ln(),
            Self::LogLog => x.ln().ln_1p(),
            Self::Power { a } => x.powf(a),
            Self::OneMinusPow { beta } => -(-beta * x.ln()).exp_m1(),
            Self::ExpNeg { s } => -(-s * x).exp_m1(),
        }
    }

    /// `φ⁻¹(y)`; values at or above `sup φ` map to `+∞`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y >= self.sup() {
            return f64::INFINITY;
        }
        match *self {
            Self::Identity => y,
            Self::Log => y.exp(),
            Self::LogLog => y.exp_m1().exp(),
            Self::Power { a } => y.powf(1.0 / a),
            Self::OneMinusPow { beta } => (-(-y).ln_1p() / beta).exp(),
            Self::ExpNeg { s } => -(-y).ln_1p() / s,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::Log => 1.0 / x,
            Self::LogLog => 1.0 / (x * x.ln().ln_1p().exp()),
            Self::Power { a } => a * x.powf(a - 1.0),
            Self::OneMinusPow { beta } => beta * x.powf(-beta - 1.0),
            Self::ExpNeg { s } => s * (-s * x).exp(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::Log => -1.0 / (x * x),
            Self::LogLog => {
                let l = 1.0 + x.ln();
                -(1.0 + l) / (x * x * l * l)
            }
            Self::Power { a } => a * (a - 1.0) * x.powf(a - 2.0),
            Self::OneMinusPow { beta } => -beta * (beta + 1.0) * x.powf(-beta - 2.0),
            Self::ExpNeg { s } => -s * s * (-s * x).exp(),
        }
    }

    /// `lim_{x→∞} φ(x)`.
    pub fn sup(&self) -> f64 {
        match self {
            Self::OneMinusPow { .. } | Self::ExpNeg { .. } => 1.0,
            _ => f64::INFINITY,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.sup().is_finite()
    }

    /// `t φ''(t)/φ'(t)`, simplified per family so it stays finite where the
    /// raw derivatives underflow.
    pub fn curvature_ratio(&self, t: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::Log => -1.0,
            Self::LogLog => {
                let l = 1.0 + t.ln();
                -(1.0 + l) / l
            }
            Self::Power { a } => a - 1.0,
            Self::OneMinusPow { beta } => -(beta + 1.0),
            Self::ExpNeg { s } => -s * t,
        }
    }

    /// `lim_{t→∞} t φ''(t)/φ'(t)`.
    pub fn curvature_limit(&self) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::Log | Self::LogLog => -1.0,
            Self::Power { a } => a - 1.0,
            Self::OneMinusPow { beta } => -(beta + 1.0),
            Self::ExpNeg { .. } => f64::NEG_INFINITY,
        }
    }

    pub fn reverse_jensen(&self) -> ReverseJensen {
        let limit = self.curvature_limit();
        if limit == -2.0 {
            ReverseJensen::Boundary
        } else if limit > -2.0 {
            ReverseJensen::Achievable
        } else {
            ReverseJensen::Impossible
        }
    }

    /// The transforms reported by default in oracle output.
    pub fn standard_set() -> Vec<ConcaveTransform> {
        vec![
            Self::Identity,
            Self::Log,
            Self::LogLog,
            Self::Power { a: 0.5 },
            Self::OneMinusPow { beta: 0.5 },
            Self::OneMinusPow { beta: 1.0 },
            Self::ExpNeg { s: 1.0 },
        ]
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("transform parameter {name} must be positive and finite, got {v}")))
    }
}

impl fmt::Display for ConcaveTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Log => f.write_str("log"),
            Self::LogLog => f.write_str("loglog"),
            Self::Power { a } => write!(f, "power:{a}"),
            Self::OneMinusPow { beta } => write!(f, "one_minus_pow:{beta}"),
            Self::ExpNeg { s } => write!(f, "exp_neg:{s}"),
        }
    }
}

impl FromStr for ConcaveTransform {
    type Err = Error;

    /// Parses `identity`, `log`, `loglog`, `power:A`, `one_minus_pow:B`, `exp_neg:S`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let num = |label: &str| -> Result<f64> {
            let p = param.ok_or_else(|| domain(format!("transform `{name}` needs a parameter ({label})")))?;
            p.parse::<f64>().map_err(|_| domain(format!("bad transform parameter `{p}`")))
        };
        let t = match name {
            "identity" | "id" => Self::Identity,
            "log" | "ln" => Self::Log,
            "loglog" => Self::LogLog,
            "power" => Self::power(num("a")?)?,
            "one_minus_pow" => Self::one_minus_pow(num("beta")?)?,
            "exp_neg" => Self::exp_neg(num("s")?)?,
            other => {
                return Err(domain(format!(
                    "unknown transform `{other}` (expected identity, log, loglog, power:A, one_minus_pow:B, exp_neg:S)"
                )))
            }
        };
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<ConcaveTransform> {
        let mut v = ConcaveTransform::standard_set();
        v.extend([
            ConcaveTransform::Power { a: 0.3 },
            ConcaveTransform::OneMinusPow { beta: 0.3 },
            ConcaveTransform::ExpNeg { s: 0.01 },
        ]);
        v
    }

    #[test]
    fn inverse_undoes_forward() {
        for phi in all() {
            for &x in &[1.0, 1.5, 3.0, 10.0, 1e3, 1e6] {
                let y = phi.forward(x);
                if y >= phi.sup() {
                    // 1 − e^{−x} saturates in double precision
                    continue;
                }
                let back = phi.inverse(y);
                assert!(((back - x) / x).abs() < 1e-10, "{phi}: x={x} back={back}");
            }
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        for phi in all() {
            for &t in &[1.5, 10.0, 1e3, 1e6] {
                let h = 1e-5 * t;
                let fd1 = (phi.forward(t + h) - phi.forward(t - h)) / (2.0 * h);
                let d1 = phi.derivative(t);
                if d1.abs() < 1e-200 {
                    continue;
                }
                // Cancellation in φ(t+h) − φ(t−h) is the floor on achievable accuracy
                // once φ is flat relative to its magnitude.
                let floor = 4.0 * f64::EPSILON * phi.forward(t).abs().max(1.0) / (2.0 * h);
                assert!((fd1 - d1).abs() <= 1e-6 * d1.abs() + floor, "{phi} φ' at {t}: {fd1} vs {d1}");
                let fd2 = (phi.derivative(t + h) - phi.derivative(t - h)) / (2.0 * h);
                let d2 = phi.second_derivative(t);
                if d2 != 0.0 {
                    assert!(((fd2 - d2) / d2).abs() < 1e-6, "{phi} φ'' at {t}: {fd2} vs {d2}");
                }
            }
        }
    }

    #[test]
    fn simplified_curvature_agrees_with_raw_ratio() {
        for phi in all() {
            for &t in &[1.5, 10.0, 100.0] {
                let d1 = phi.derivative(t);
                if d1 == 0.0 {
                    continue;
                }
                let raw = t * phi.second_derivative(t) / d1;
                let simple = phi.curvature_ratio(t);
                assert!((raw - simple).abs() <= 1e-10 * simple.abs().max(1.0), "{phi} at {t}");
            }
        }
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(ConcaveTransform::Log.curvature_ratio(7.0), -1.0);
        assert_eq!(ConcaveTransform::OneMinusPow { beta: 1.0 }.curvature_ratio(3.0), -2.0);
        assert_eq!(ConcaveTransform::OneMinusPow { beta: 1.0 }.reverse_jensen(), ReverseJensen::Boundary);
        assert_eq!(ConcaveTransform::ExpNeg { s: 1.0 }.curvature_ratio(10.0), -10.0);
        assert_eq!(ConcaveTransform::ExpNeg { s: 1.0 }.reverse_jensen(), ReverseJensen::Impossible);
        assert_eq!(ConcaveTransform::LogLog.reverse_jensen(), ReverseJensen::Achievable);
        assert_eq!(ConcaveTransform::OneMinusPow { beta: 1.5 }.reverse_jensen(), ReverseJensen::Impossible);
    }

    #[test]
    fn parse_and_display_round_trip() {
        for phi in all() {
            let back: ConcaveTransform = phi.to_string().parse().unwrap();
            assert_eq!(back, phi);
        }
        assert!("power:-1".parse::<ConcaveTransform>().is_err());
        assert!("cosh".parse::<ConcaveTransform>().is_err());
    }
}

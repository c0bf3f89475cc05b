//! Deterministic cutoff sequences, exposed as pure index → cutoff functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// One cutoff together with the overflow flag of saturating sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub value: f64,
    /// Set when the exact value exceeds the largest finite `f64` and was clamped.
    pub saturated: bool,
}

impl Cutoff {
    fn exact(value: f64) -> Self {
        Self { value, saturated: false }
    }
}

/// A cutoff sequence `S = (S_0, S_1, …)` with every term in `[1, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffSequence {
    /// The reluctant-doubling sequence 1, 1, 2, 1, 1, 2, 4, …
    Luby,
    /// `S_k = (1 − q/2)^{−k}`.
    GeometricQuantile { q: f64 },
    Constant { alpha: f64 },
    /// Listed cutoffs, repeating the last one forever.
    Explicit { cutoffs: Vec<f64> },
}

impl CutoffSequence {
    pub fn geometric_quantile(q: f64) -> Result<Self> {
        let s = CutoffSequence::GeometricQuantile { q };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        let s = CutoffSequence::Constant { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn explicit(cutoffs: Vec<f64>) -> Result<Self> {
        let s = CutoffSequence::Explicit { cutoffs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |v: f64| {
            if v >= 1.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidStrategy(format!("cutoffs must be finite and >= 1, got {v}")))
            }
        };
        match self {
            CutoffSequence::Luby => Ok(()),
            CutoffSequence::GeometricQuantile { q } => {
                if *q > 0.0 && *q <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidStrategy(format!("quantile level must be in (0, 1], got {q}")))
                }
            }
            CutoffSequence::Constant { alpha } => check(*alpha),
            CutoffSequence::Explicit { cutoffs } => {
                if cutoffs.is_empty() {
                    return Err(Error::InvalidStrategy("explicit cutoff list is empty".into()));
                }
                cutoffs.iter().try_for_each(|&v| check(v))
            }
        }
    }

    /// `S_k`.
    pub fn cutoff(&self, k: u64) -> f64 {
        self.cutoff_flagged(k).value
    }

    pub fn cutoff_flagged(&self, k: u64) -> Cutoff {
        match self {
            CutoffSequence::Luby => Cutoff::exact(luby(k)),
            CutoffSequence::GeometricQuantile { q } => geometric_term(*q, k),
            CutoffSequence::Constant { alpha } => Cutoff::exact(*alpha),
            CutoffSequence::Explicit { cutoffs } => {
                let idx = usize::try_from(k).unwrap_or(usize::MAX).min(cutoffs.len() - 1);
                Cutoff::exact(cutoffs[idx])
            }
        }
    }

    /// The first `n` terms.
    pub fn prefix(&self, n: usize) -> Vec<f64> {
        (0..n as u64).map(|k| self.cutoff(k)).collect()
    }
}

impl fmt::Display for CutoffSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutoffSequence::Luby => f.write_str("luby"),
            CutoffSequence::GeometricQuantile { q } => write!(f, "quantile({q})"),
            CutoffSequence::Constant { alpha } => write!(f, "constant({alpha})"),
            CutoffSequence::Explicit { cutoffs } => {
                let parts: Vec<String> = cutoffs.iter().map(|c| c.to_string()).collect();
                write!(f, "explicit({})", parts.join(" "))
            }
        }
    }
}

/// The `k`-th term (0-indexed) of the Luby sequence, in `O(log k)`.
///
/// `u_k = 2^{i−1}` when `k = 2^i − 2`, otherwise `u_k = u_{k − 2^{i−1} + 1}`
/// for `2^{i−1} − 1 ≤ k < 2^i − 2`.
pub fn luby(k: u64) -> f64 {
    let mut k = u128::from(k);
    loop {
        let n = k + 2;
        // smallest i with n ≤ 2^i
        let i = 128 - (n - 1).leading_zeros();
        if n == 1u128 << i {
            return 2f64.powi(i as i32 - 1);
        }
        k = k + 1 - (1u128 << (i - 1));
    }
}

/// `(1 − q/2)^{−k}`, clamped to `f64::MAX` on overflow.
pub fn geometric_quantile(q: f64, k: u64) -> Result<Cutoff> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(domain(format!("quantile level must be in (0, 1], got {q}")));
    }
    Ok(geometric_term(q, k))
}

/// `ln` of the ratio `(1 − q/2)^{−1}` between consecutive geometric terms.
pub fn geometric_log_ratio(q: f64) -> f64 {
    -(-0.5 * q).ln_1p()
}

/// `(1 − q/2)^{−k}` for a real index `k ≥ 0`; `+∞` on overflow.
pub fn geometric_value(q: f64, k: f64) -> f64 {
    let base = 1.0 - 0.5 * q;
    if 1.0 - base == 0.5 * q {
        // base is exact, so powf is correctly rounded (8 for q = 1, k = 3)
        base.powf(-k)
    } else {
        (k * geometric_log_ratio(q)).exp()
    }
}

fn geometric_term(q: f64, k: u64) -> Cutoff {
    let v = geometric_value(q, k as f64);
    if v.is_finite() {
        Cutoff::exact(v)
    } else {
        Cutoff { value: f64::MAX, saturated: true }
    }
}

/// A constant sequence term; provided for symmetry with the other sequences.
pub fn constant(alpha: f64, _k: u64) -> Result<f64> {
    if alpha >= 1.0 && alpha.is_finite() {
        Ok(alpha)
    } else {
        Err(domain(format!("constant cutoff must be finite and >= 1, got {alpha}")))
    }
}

//! Extended reals on the wire.
//!
//! JSON has no infinity, so `+∞` is written as the string `"inf"`. Finite
//! values stay plain numbers.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An `f64` that serializes `+∞` as `"inf"` (and `-∞` as `"-inf"`, NaN as `null`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct ExtReal(pub f64);

impl ExtReal {
    pub const INFINITY: ExtReal = ExtReal(f64::INFINITY);

    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal(v)
    }
}

impl From<ExtReal> for f64 {
    fn from(v: ExtReal) -> Self {
        v.0
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_ext(self.0, f)
    }
}

pub(crate) fn fmt_ext(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v == f64::INFINITY {
        f.write_str("inf")
    } else if v == f64::NEG_INFINITY {
        f.write_str("-inf")
    } else {
        write!(f, "{v}")
    }
}

/// Formats a value the way CSV output expects it (`inf` for `+∞`).
pub fn format_ext(v: f64) -> String {
    ExtReal(v).to_string()
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_nan() {
            s.serialize_none()
        } else if v == f64::INFINITY {
            s.serialize_str("inf")
        } else if v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(v)
        }
    }
}

struct ExtVisitor;

impl<'de> Visitor<'de> for ExtVisitor {
    type Value = ExtReal;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a number or the string \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtReal, E> {
        Ok(ExtReal(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtReal, E> {
        Ok(ExtReal(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtReal, E> {
        Ok(ExtReal(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtReal, E> {
        match v.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Ok(ExtReal(f64::INFINITY)),
            "-inf" | "-infinity" => Ok(ExtReal(f64::NEG_INFINITY)),
            other => other
                .parse::<f64>()
                .map(ExtReal)
                .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }

    fn visit_unit<E: de::Error>(self) -> Result<ExtReal, E> {
        Ok(ExtReal(f64::NAN))
    }

    fn visit_none<E: de::Error>(self) -> Result<ExtReal, E> {
        Ok(ExtReal(f64::NAN))
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(ExtVisitor)
    }
}

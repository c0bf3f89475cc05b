//! Restart strategies for Las Vegas algorithms.
//!
//! The crate models a random running time `T ∈ [1, +∞]`, cutoff sequences
//! and randomized restart schedules, and evaluates the expected total time of
//! the resulting multi-start algorithm either exactly (series evaluation) or
//! by seeded Monte Carlo. The [`oracle`] module computes optimal restart
//! baselines and the upper bounds the strategies are known to satisfy.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod dist;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod ext;
pub mod oracle;
pub mod quad;
pub mod sched;
pub mod seq;
pub mod transform;
pub mod wrap;

pub use dist::{DistSpec, RuntimeDistribution, Time};
pub use error::{Error, Result};
pub use transform::ConcaveTransform;

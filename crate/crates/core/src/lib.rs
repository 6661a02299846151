//! Modelling, loop-closure resolution, constrained dynamics and trajectory optimisation
//! for series-parallel hybrid robots.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod boxfddp;
pub mod constrained;
pub mod error;
pub mod loopclosure;
pub mod modelio;
pub mod motions;
pub mod ocp;
pub mod spatial;
pub mod treedyn;

pub use error::{Error, Result};

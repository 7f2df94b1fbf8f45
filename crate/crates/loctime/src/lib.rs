//! Brownian motion conditioned on `L_t <= f(t)`: boundary analysis, stable-1/2
//! subordinator samplers, bracketed survival estimators, renewal asymptotics,
//! limiting-process assembly and repulsion envelopes.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values, and
// oracle constants keep the digits they were computed with.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod boundary;
pub mod bridge;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod limit;
pub mod parallel;
pub mod quad;
pub mod renewal;
pub mod repulsion;
pub mod rng;
pub mod stable;
pub mod stats;
pub mod survival;

pub use boundary::{BoundaryFunction, BoundaryKind, Classification};
pub use error::{Error, Result};

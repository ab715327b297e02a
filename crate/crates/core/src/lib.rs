//! Constrained square-root unscented Kalman filtering for range-only
//! tracking when some links are non-line-of-sight.
//!
//! NLOS ranges are not fused as measurements. Each one bounds the target to a
//! disc around its anchor, and sigma points outside the intersection are
//! projected back in the metric of the current covariance.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod baseline;
pub mod chi2;
pub mod error;
pub mod filters;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod projection;
pub mod qcqp;
pub mod scenario;
pub mod srukf;

pub use error::{Error, Infeasibility, Result};

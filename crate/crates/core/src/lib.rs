//! Robust output-feedback trajectory synthesis with system level response maps.
//!
//! The pipeline linearizes a nonlinear model about a nominal trajectory, solves an
//! output-feedback LQG problem in closed-loop response form with two Riccati sweeps,
//! bounds the reachable deviations with per-step tubes, and iterates a sequential
//! convex program over the nominal.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod block;
pub mod calibration;
pub mod envs;
pub mod error;
pub mod linalg;
pub mod ltv;
pub mod model;
pub mod oracle;
pub mod qp;
pub mod riccati;
pub mod scp;
pub mod sls;
pub mod spec;
pub mod tubes;

pub use error::{Error, Result};

//! Stationary measure of the open ASEP through the matrix product ansatz and
//! its reweighted-random-walk form, and the continuum stationary measure of
//! the KPZ equation on an interval as reweighted Brownian paths.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod params;
pub mod rng;
pub mod dynamics;
pub mod mpa;
pub mod oracle;
pub mod path;
pub mod report;
pub mod stats;
pub mod continuum;
pub mod cli;
pub mod walks;

pub use error::{Error, Result};
pub use params::{ModelParams, ScalingParams};
pub use rng::RandomStream;

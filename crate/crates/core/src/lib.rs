//! Social spatial-temporal event prediction: detect group meetups in
//! check-in data, forecast each user's next meetup time with an ARMA model
//! whose AR coefficients are tracked by a Kalman filter, and rank candidate
//! regions for where it will happen.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arma;
pub mod cli;
pub mod config;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod ingestion;
pub mod kalman;
pub mod location;
pub mod synthgen;

pub use error::{Result, SsteError};

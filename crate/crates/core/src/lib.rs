//! Split-learning laboratory.
//!
//! Simulates two-party split learning, mounts a feature-oriented
//! reconstruction attack from the server side, and evaluates client-side
//! defenses and a gradient-similarity attack detector.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub mod data;
pub mod metrics;
pub mod attack;
pub mod defense;
pub mod detection;
pub mod models;
pub mod archive;
mod codec;
pub mod protocol;
pub mod experiment;

//! Deterministic simulator for Byzantine-robust distributed learning on
//! non-i.i.d. data.
//!
//! A fleet of workers holds disjoint shards of a dataset; some workers are
//! Byzantine and replace their transmitted messages with attacks. The server
//! aggregates with robust rules (geometric median, Krum, an optional
//! resampling pre-pass) over plain stochastic gradients, variance-reduced
//! gradients, or consensus models, and the [`theorycheck`] module evaluates
//! and empirically verifies the concentration bounds that predict how close
//! each combination gets to the optimum.
//!
//! Every run is a pure function of its configuration: all randomness flows
//! from one root seed through named [`rng`] streams, so results reproduce
//! bit for bit across reruns and across worker reorderings.

pub mod aggregation;
pub mod attacks;
pub mod cohort;
pub mod engine;
pub mod error;
pub mod models;
pub mod rng;
pub mod saga;
pub mod theorycheck;
pub mod vecmath;

pub use cohort::{Cohort, Message};
pub use error::{Error, Result};

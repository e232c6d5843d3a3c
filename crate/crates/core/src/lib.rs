//! Stochastic rail-network simulation with learned per-train movement policies.
//!
//! Trains move on a macroscopic clock: every step each active train advances zero, one or two
//! stations. Policies trained by regression, behavioural cloning or drift-corrected imitation
//! produce Monte Carlo delay forecasts.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod features;
pub mod forecast;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod policy;
pub mod rollout;
pub mod schedule;
pub mod seed;
pub mod training;

pub use error::{Error, Result};

//! Simulation and estimation toolkit for strategic agent selection under
//! competing decision makers.
//!
//! The library is organised around a Stackelberg round loop: decision makers
//! publish linear scoring rules, agents best-respond with costly effort,
//! each decision maker selects a top fraction of the round's cohort, agents
//! comply with at most one positive decision, and outcomes are observed only
//! for enrolled agents. On top of the simulator sit estimators for the true
//! causal coefficients (mean-shift regression over scaled deployments, naive
//! OLS, a two-stage baseline), welfare bounds for a regulator, and a CLI
//! harness that reproduces the reference tables and figures.

pub mod agents;
pub mod chart;
pub mod commands;
pub mod error;
pub mod estimators;
pub mod model;
pub mod numerics;
pub mod protocol;
pub mod seeding;
pub mod selection;
pub mod simulator;
pub mod welfare;

pub use error::{Error, Result};

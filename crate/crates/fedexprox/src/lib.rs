//! Federated proximal-optimization simulator.
//!
//! Implements the FedExProx family of methods on synthetic quadratic problems
//! in the interpolation regime: exact and inexact proximal oracles, server-side
//! extrapolation policies, tau-nice client sampling, Moreau-envelope analytics,
//! and a calculator for every closed-form convergence bound so that empirical
//! traces can be checked against their theoretical envelopes.

pub mod engine;
pub mod error;
pub mod linalg;
pub mod moreau;
pub mod problem;
pub mod prox;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};

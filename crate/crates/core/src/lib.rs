//! Federated fair averaging (FedFV) simulator.
//!
//! Clients train a shared model locally and send pseudo-gradients. FedFV
//! projects conflicting gradients onto each other's normal planes before
//! averaging, so the update does not sacrifice clients whose gradients point
//! away from the majority. [`fedcore`] runs the federation, [`theory`] checks
//! the convergence and fairness bounds numerically, [`metrics`] measures
//! accuracy spread across clients and [`harness`] ties everything to config
//! files and output directories.

pub mod datagen;
pub mod dataset;
pub mod error;
pub mod fedcore;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod seeding;
pub mod theory;
pub mod vecmath;

pub use error::{Error, Result};
pub use vecmath::ParamVector;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/round.md")]
    mod round {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
}

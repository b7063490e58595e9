//! Decentralized simultaneous-perturbation gradient descent with constant
//! sensitivity parameters.
//!
//! `d` agents each own one coordinate of a shared decision vector and one
//! local objective they can only sample. Agents estimate their partial
//! derivative from two objective evaluations at randomly perturbed points,
//! using whatever (possibly outdated) values of the other coordinates have
//! made it across lossy channels.
//!
//! - [`objective`]: local objectives and the random quadratic family
//! - [`estimator`]: perturbation sampling, the estimators and exact moment enumeration
//! - [`network`]: erasure channels, mailboxes and staleness
//! - [`runtime`]: agents, step schedules, activation and the simulation loop
//! - [`consensus`]: the two-stage variant minimizing a sum of local objectives
//! - [`experiment`]: config parsing, parameter sweeps and diagnostics output

pub mod consensus;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod network;
pub mod objective;
pub mod runtime;
pub mod seed;

pub use error::{Error, Result};

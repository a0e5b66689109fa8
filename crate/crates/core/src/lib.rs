//! Exactly analyzable simulator for interactive imitation learning.
//!
//! The crate provides layered episodic MDPs with closed-form dynamic
//! programming (values, visitations, performance difference), finite policy
//! classes with exact empirical risk minimization, perturbed and bootstrapped
//! online imitation learners (behavior cloning, DAgger, MFTPL-P,
//! Bootstrap-DAgger), and an analysis layer that computes true regret,
//! recoverability, and smoothness quantities instead of estimating them.

pub mod algo;
pub mod analysis;
pub mod dp;
pub mod error;
pub mod harness;
pub mod linear;
pub mod mdp;
pub mod oracle;
pub mod perturb;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

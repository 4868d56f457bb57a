//! Policy-gradient estimation and ascent of the average reward in POMDPs
//! controlled by parameterized stochastic policies.
//!
//! The crate is organised around the simulation contract in [`sim`]:
//! an [`Environment`](sim::Environment) generates observations, controls are
//! drawn from a [`Policy`](policy::Policy), and the per-step score ratio
//! `∇μ_u / μ_u` drives the estimators in [`estimator`]. The [`optimizer`]
//! module consumes any gradient oracle (noisy or exact) through a
//! Polak-Ribière conjugate-gradient driver with a gradient-bracketing line
//! search. [`oracle`] computes exact average rewards and gradients for finite
//! chains, and [`envs`] provides the four benchmark environments.

pub mod envs;
pub mod error;
pub mod estimator;
pub mod optimizer;
pub mod oracle;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use sim::{derive_seed, rng_from_seed, Environment, SimRng, TrajectoryStep};

//! Hamilton-Jacobi reachability restricted to equality-constraint manifolds.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] - constraint manifolds, Jacobians, tangent projectors, retraction.
//! * [`hamiltonian`] - closed-form constrained Hamiltonians for velocity-controlled
//!   systems and a sampling oracle for them.
//! * [`value_net`] - a sinusoidal MLP `V(t, x)` with exact input and parameter
//!   derivatives, including the second-order path needed by the PDE residual loss.
//! * [`trainer`] - residual training with a backward time curriculum.
//! * [`oracle`] - analytic and grid-based ground truth for the circle-constrained
//!   particle, plus BRS classification metrics.
//! * [`planner`] - decentralized receding-horizon planner with a learned pairwise
//!   safety constraint and a fail-safe fallback.
//! * [`simulator`] - closed-loop multi-agent trials and benchmark aggregation.
//! * [`config`] / [`cli`] - declarative TOML run configuration and the command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod hamiltonian;
pub mod oracle;
pub mod planner;
pub mod simulator;
pub mod trainer;
pub mod value_net;

pub use error::{ReachError, Result};

/// Dense column vector used for states, gradients and controls.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for Jacobians and projectors.
pub type Matrix = nalgebra::DMatrix<f64>;

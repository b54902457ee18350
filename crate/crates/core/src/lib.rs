//! Online stochastic solvers for smooth constrained convex programs.
//!
//! The crate provides four online solvers (projected SGD, a variant of
//! Nesterov's dual averaging, classical dual averaging, and a Riemannian
//! stochastic gradient method safeguarded by dual averaging) plus a
//! sample-average-approximation baseline, together with the machinery to
//! predict their asymptotic covariances from problem data and to estimate
//! those covariances empirically from Monte Carlo trial ensembles.
//!
//! Modules:
//! - [`geometry`]: dense projections, pseudo-inverses, tangent projectors,
//!   and Euclidean projection onto convex sets and active manifolds.
//! - [`problems`]: stochastic program constructors and KKT ground truth
//!   (optimal point, multipliers, Lagrangian Hessian, tangent projector,
//!   gradient covariance).
//! - [`solvers`]: the solver recursions, producing full [`solvers::SolverTrace`]
//!   histories.
//! - [`analysis`]: covariance predictions, tilt-stability sensitivity checks,
//!   and trial-ensemble statistics.
//! - [`rng`]: pinned deterministic random streams (SplitMix64 + Box-Muller).

pub mod analysis;
mod error;
pub mod geometry;
pub mod problems;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};

//! Finite-horizon discrete-time LQR toolkit.
//!
//! The crate solves the classic LQR problem through four equivalent
//! formulations (dense quadratic program, KKT system, Riccati sweep,
//! Pontryagin conditions), computes stabilizing constant-feedback gains
//! under a Lyapunov/LMI or Riccati-theoretic stability criterion, and
//! wraps both in the scenario approach for sampled model uncertainty.
//! Leslie population models provide the benchmark systems.

pub mod leslie;
pub mod lqr;
pub mod matrix;
pub mod opt;
pub mod random;
pub mod scenario;
pub mod stability;

pub use matrix::{Mat, MatrixError, Vector};

//! Small dense optimizers used by the stability solvers.

pub mod lbfgs;
pub mod nelder_mead;

pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult};
pub use nelder_mead::{nelder_mead_minimize, NelderMeadConfig, NelderMeadResult};

//! Local optimizers used by the estimators and the bid solver.

mod levenberg_marquardt;
mod nelder_mead;

pub use levenberg_marquardt::{levenberg_marquardt, LmOptions, LmResult};
pub use nelder_mead::{nelder_mead, Minimum, NelderMeadOptions};

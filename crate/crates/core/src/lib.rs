//! Joint nonparametric precision-matrix estimation under a scalar
//! confounder, together with the baselines, synthetic benchmark and
//! evaluation tools used to compare against it.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod jne;
pub mod kernel;
pub mod lp;
pub mod synth;

pub use data::{elementwise_inf, entrywise_l1, validate_dataset, vector_l1, Dataset, SquareMatrix};
pub use error::{Error, Result};

//! Automatic debiased machine learning for effects that depend on
//! high-dimensional regressions: cross-fitted Neyman-orthogonal estimation
//! with Lasso/Dantzig minimum-distance learners of the Riesz representer
//! estimated directly from the identifying moment functions.

pub mod data;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod functionals;
pub mod gmm;
pub mod linalg;
pub mod lp;
pub mod numeric;
pub mod regression;
pub mod riesz;
pub mod sim;

pub use error::{Error, Result};

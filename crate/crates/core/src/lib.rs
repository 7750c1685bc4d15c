//! Edge eigenvalue statistics for sample covariance matrices `X^T Sigma X`
//! with a general diagonal population.

pub mod airy;
pub mod detect;
pub mod ensemble_sim;
pub mod error;
pub mod green_flow;
pub mod linalg;
pub mod par;
pub mod population;
pub mod rng;
pub mod stats;
pub mod stieltjes;
pub mod tracy_widom;

pub use error::{EdgeError, Result};
pub use population::{EdgeParams, PopulationSpectrum};

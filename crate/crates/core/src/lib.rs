//! Calibration of spatial computer models in basis-coefficient space.
//!
//! Gridded simulator outputs and observations are compressed into truncated
//! basis coefficients ([`basis`]), the coefficient–parameter map is emulated
//! by a block-diagonal Gaussian process ([`calibration`]), and the joint
//! posterior over calibration inputs and hyperparameters is explored with
//! single-site Metropolis–Hastings ([`sampler`]). Nonstationary Matérn
//! (SPDE/GMRF) scale and precision coefficients ([`spde`]) can be appended
//! as extra coefficient blocks. An EOF baseline lives in [`eof`] and design
//! generation in [`doe`].

pub mod basis;
pub mod calibration;
pub mod doe;
pub mod eof;
mod error;
pub mod linalg;
pub mod sampler;
pub mod spde;

pub use error::{Error, Result};

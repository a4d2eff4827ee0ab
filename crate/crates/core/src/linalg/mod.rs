//! Dense and sparse linear-algebra kernels used across the crate.

pub mod qr;
pub mod sparse;

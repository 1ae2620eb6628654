//! Infinite-width kernels of deep maxout networks and exact GP inference
//! with them.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the table, sampling and command-line layers use.

pub mod datasets;
pub mod error;
pub mod fq;
pub mod gp;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod mc;
pub mod rng;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use fq::FqTable;
pub use kernel::KernelParams;
pub use scalar::Scalar;

pub type Real = f64;
pub type Matrix = linalg::Matrix<Real>;
pub type KernelMatrix = kernel::KernelMatrix<Real>;
pub type PosteriorResult = gp::PosteriorResult<Real>;

//! Dense matrix kernel: products, symmetric eigendecomposition, PSD
//! projection, Gaussian and entry-wise sampling, seeded streams.

mod eig;
mod matrix;
mod rng;
mod sampling;

pub use eig::{psd_project, sym_eig, sym_eig_jacobi, EigDecomposition};
pub(crate) use matrix::gemm;
pub use matrix::Matrix;
pub use rng::RngStream;
pub use sampling::{sample_elementwise, sample_mvn, sample_mvn_factored, CovFactor, Elementwise};

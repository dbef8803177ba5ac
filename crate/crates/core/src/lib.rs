// Validation negates comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod domains;
pub mod error;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod suites;
pub mod trainers;

pub use domains::{Domain, SplitTarget};
pub use error::{Error, ErrorKind, Result};
pub use linalg::{Matrix, RngStream};
pub use model::Model;

//! Spectral pyramid graph attention networks for hyperspectral pixel
//! classification, on a small dependency-free tensor and autodiff core.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod par;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

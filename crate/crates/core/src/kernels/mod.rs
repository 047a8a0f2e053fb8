//! Slice-level forward and backward kernels behind the tape primitives.
//!
//! All reductions run in a fixed order (outer index ascending), so the
//! parallel and sequential paths agree bit for bit.

pub mod conv;
pub mod matmul;
pub mod norm;
pub mod softmax;

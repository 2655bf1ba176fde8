//! Appearance-motion decomposition for self-supervised object segmentation.
//!
//! An appearance network splits a single frame into `c` soft segments. A
//! motion network compares two frames and yields dense motion features,
//! which are pooled per segment and read out as one flow vector per segment.
//! Broadcasting the vectors back over their masks gives a *segment flow*
//! field; warping one frame by it and scoring the result against the other
//! frame with SSIM trains both networks without labels.
//!
//! The crate is `no_std` (with `alloc`). The `std` feature only enables
//! runtime CPU dispatch in the matrix kernels and faster float intrinsics.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod pathways;
pub mod real;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

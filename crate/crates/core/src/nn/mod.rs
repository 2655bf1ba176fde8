//! Network layer kernels (forward and adjoint) used by the pathways.

pub mod conv;
pub mod correlation;
pub mod norm;

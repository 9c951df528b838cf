//! PIPMN: an MLP audio classifier built from Dense MLP blocks arranged in a
//! paired inverse pyramid, together with the cepstral front end, data
//! pipeline and training loop it needs.

pub mod autodiff;
pub mod data;
pub mod dsp;
pub mod model;
pub mod tensor;
pub mod train;

pub use tensor::{Scalar, Tensor, TensorError};

//! Data-free reconstruction of training samples from a trained classifier by
//! driving its parameters toward a stationary point of the max-margin problem.

pub mod autodiff;
pub mod data;
pub mod kkt;
pub mod linalg;
pub mod models;
pub mod quasi;
pub mod serialize;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] records operations as they run; [`Graph::backward`] sweeps the
//! tape once in reverse. Learned tensors live in a [`ParamStore`] and are bound
//! onto a fresh graph for every forward pass. No op broadcasts implicitly:
//! shapes must match exactly, and [`Graph::expand`] / [`Graph::bias_add`] make
//! repetition explicit.

mod backward;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use backward::Gradients;
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::AdamW;
pub use params::{ParamId, ParamStore};
pub use tensor::{numel, Tensor};

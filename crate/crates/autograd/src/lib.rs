//! A deliberately small reverse-mode automatic differentiation engine over
//! dense `f64` tensors in NCHW layout.
//!
//! Operations are evaluated eagerly as they are recorded on a [`Graph`];
//! [`Graph::backward`] then walks the tape in reverse. Everything runs on one
//! thread, so results are bitwise reproducible for a fixed sequence of ops.

mod conv;
mod error;
mod graph;
mod linalg;
pub mod nn;
mod norm;
mod optim;
mod params;
mod spatial;
mod tensor;

pub use conv::ConvOpts;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamBuilder, ParamId, ParamStore};
pub use tensor::Tensor;

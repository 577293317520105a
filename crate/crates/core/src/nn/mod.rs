//! Minimal neural network machinery: parameter storage, a reverse-mode
//! differentiation tape and an adaptive-moment optimizer.

mod graph;
mod optim;
mod params;

pub use graph::{softmax, Graph, Var};
pub use optim::{clip_grad_norm, Adam};
pub use params::{ParamId, ParamStore, Real, Tensor};

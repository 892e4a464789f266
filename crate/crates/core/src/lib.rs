//! Temporal attention modules for per-frame feature sequences, with a small
//! reverse-mode autodiff engine, a toy parametric body model, losses,
//! metrics, synthetic motion data and a training harness.

pub mod body;
pub mod checkpoint;
pub mod count;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod hafi;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod moca;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Grads, Graph, Var};
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Forward ops are recorded on a [`Tape`]; [`Tape::backward`] sweeps them in
//! reverse. Trainable tensors live in a [`ParamStore`] and are pulled onto a
//! tape with [`Tape::param`]. Execution is single-threaded and bit-deterministic.

mod adam;
mod error;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, NORM_EPS};
pub use tensor::Tensor;

//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A fresh [`Tape`] is built for every forward pass; hop counts vary per
//! episode so the graph shape is never static.

pub mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::DEFAULT_STEP;
pub use tape::{log_sigmoid, sigmoid, softmax_in_place, Tape, Var, LAYER_NORM_EPS, LOG_CLAMP};
pub use tensor::{argmax, Tensor};

#[cfg(test)]
mod tests;

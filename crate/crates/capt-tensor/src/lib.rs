//! Dense f64 tensors with tape-based reverse-mode autodiff, an Adam
//! optimizer, a binary checkpoint format, and finite-difference gradient
//! checking utilities. Sized for desk-scale training: rank 1 and 2 tensors,
//! eager ops, one tape per training step.

pub mod check;
pub mod checkpoint;
pub mod error;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

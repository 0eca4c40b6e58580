//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Every forward operation is recorded on a [`Tape`] and returns a [`Var`]
//! handle. Calling [`Tape::backward`] on a scalar result walks the recorded
//! operations in exact reverse order and accumulates gradients additively
//! into every node that requires them.
//!
//! ```
//! use apnea_autograd::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
//! let y = tape.add(x, x).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
//! ```
//!
//! The layer set is deliberately narrow: convolution, batch normalization,
//! ReLU, 2x2 max pooling, global average pooling, dense, dropout, sigmoid,
//! elementwise add, plus a hook for scalar losses with closed-form gradients.

mod check;
mod error;
mod ops;
mod real;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheck};
pub use error::{AutogradError, Result};
pub use ops::{conv_output_len, BatchNormState, Padding};
pub use real::Real;
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Build a [`Graph`] per forward pass: register parameters and constants as
//! leaves, combine them with the operations defined on `Graph`, then call
//! [`Graph::backward`] on a scalar node and read gradients back with
//! [`Graph::grad`].

mod adam;
mod complex;
mod error;
pub mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use complex::ComplexPair;
pub use error::{AutodiffError, Result};
pub use graph::{Graph, Var};
pub use ops::{take_conv_mults, BnMode, DemapTable, RunningStats, SepConvWeights, GATHER_ZERO, PIVOT_TOL};
pub use tensor::Tensor;

//! Model-driven neural MU-MIMO receiver and the link-level simulation
//! around it.

pub mod constellation;
pub mod dmrs;
pub mod error;
pub mod grid;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub mod channel;
pub mod classical;
pub mod scenario;
pub mod sim;
pub mod mdx;
pub mod trainer;
pub mod analysis;
pub mod eval;
pub mod checkpoint;
pub mod fec;
pub mod gradcheck_suite;
pub mod experiment;

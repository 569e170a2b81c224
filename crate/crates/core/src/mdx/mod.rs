//! The learned receiver: parameters, positional encoding and the forward
//! graph.

pub mod forward;
pub mod params;
pub mod pe;

pub use forward::{build, da_ls_estimate, prepare, register_params, Mode, MdxOutput, Prepared, TtiNodes};
pub use params::{MdxConfig, MdxParams};

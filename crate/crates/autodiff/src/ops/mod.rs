mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;

pub use conv::{take_conv_mults, SepConvWeights};
pub use elementwise::GATHER_ZERO;
pub use linalg::PIVOT_TOL;
pub use loss::DemapTable;
pub use norm::{BnMode, RunningStats};

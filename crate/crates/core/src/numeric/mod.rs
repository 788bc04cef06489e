//! Dense matrices, reverse-mode differentiation, and parameter storage.

mod matrix;
mod ops;
mod params;
mod real;
mod tape;

pub use matrix::Matrix;
pub use ops::{batch_norm, dropout, BatchNormState, Mode};
pub use params::ParamStore;
pub use real::{lit, DType, Real};
pub use tape::{softmax_rows, BatchStats, Gradients, NodeId, Tape};

#[cfg(test)]
mod tests;

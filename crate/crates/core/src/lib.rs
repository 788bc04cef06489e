//! Permutation-equivariant learning-to-rank.
//!
//! The crate provides three families of listwise scorers behind one
//! interface: univariate scoring, groupwise scoring functions (GSF) with pair
//! or larger group pooling, and the self-attentive document interaction
//! network (attn-DIN), which feeds self-attention embeddings of the whole
//! candidate set into a wide-and-deep per-document head. Training minimizes
//! listwise losses (softmax cross-entropy, ApproxNDCG) with Adagrad on top of
//! a small reverse-mode differentiation core.

pub mod benchmark;
pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod scorers;
pub mod training;

pub use error::{Error, Result};

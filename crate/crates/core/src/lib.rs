//! Bidirectional action-sequence learning for long-term action anticipation.
//!
//! A small autoregressive model is trained jointly on forward
//! (past to future) and backward (reversed future to reversed past)
//! anticipation, and evaluated with forward-only, grammar-constrained
//! generation scored by minimum edit distance over K candidates.

pub mod data;
pub mod error;
pub mod eval;
pub mod generate;
mod linalg;
pub mod model;
pub mod prompt;
pub mod seed;
pub mod sequence;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

//! Sentence embeddings that preserve analogical proportions between
//! question/answer pairs, and answer ranking on top of them.
//!
//! A quadruple `(q_p, a_p, q, a)` pairs a well-understood prototype QA pair
//! with a QA pair under consideration. A bidirectional GRU encoder with max
//! pooling is trained so that the shift `f(q_p) − f(a_p)` is parallel to
//! `f(q) − f(a)` exactly when `a` correctly answers `q`. Candidates are then
//! ranked by the best cosine between shifts over a prototype set.

pub mod analogy;
pub mod checks;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod numerics;
pub mod quadgen;
pub mod seed;
pub mod synthetic;
pub mod text;
pub mod training;

pub use error::{Error, Result};

//! Open-domain question answering toolkit: corpus handling, answer span
//! recovery, tokenization, sparse and dense retrieval, weak supervision
//! for training data, and evaluation.

pub mod bm25;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod mining;
pub mod run;
pub mod span;
pub mod tokenize;

pub use error::{Error, Result};

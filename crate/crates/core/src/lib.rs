//! Keyphrase generation with a dynamic syntactic graph encoder, a copy decoder and
//! diversified phrase-level beam search.

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod instance;
pub mod io;
pub mod model;
pub mod numerics;
pub mod syntax;
pub mod training;

pub use error::{Error, ErrorClass, Result};

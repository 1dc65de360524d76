//! Attentional sequence-to-sequence translation with soft attention and
//! attention density matrices, built on a small reverse-mode
//! differentiation engine.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod dropout;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

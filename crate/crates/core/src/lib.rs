pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synthgen;
pub mod tokenizer;

pub use error::{Error, Result};

//! Deep joint source-channel coding over a cross-technology link.

pub mod codec;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod link;
pub mod nn;
pub mod semantic_kb;
pub mod training;

pub use error::{Error, Result};

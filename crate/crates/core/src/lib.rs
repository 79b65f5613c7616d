//! Multilingual NMT with language-specific encoders and decoders joined by a
//! shared interlingua: the top encoder layers are parameter-tied across
//! languages and only the low decoder layers cross-attend to them.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use error::{Error, Result};

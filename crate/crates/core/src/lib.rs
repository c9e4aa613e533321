pub mod analysis;
pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod evaluate;
pub mod nnkit;
pub mod postag;
pub mod prsalm;
pub mod saliency;
pub mod seq2saliency;
pub mod tokenize;

pub use error::{Error, Result};

//! Hybrid convolution/attention image classifier with reverse-mode
//! autodiff, training, evaluation statistics and saliency tooling.

pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod tensor;
pub mod train;
pub mod xai;

pub use autodiff::{Graph, Var};
pub use error::{CmfError, Result};
pub use tensor::{Element, Tensor};

/// Generator used for every seeded stream in the crate.
pub type CmfRng = rand_chacha::ChaCha8Rng;

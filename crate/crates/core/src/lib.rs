//! Unsupervised video summarization with adversarially trained
//! selector / variational encoder-decoder / discriminator models.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod losses;
pub mod models;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

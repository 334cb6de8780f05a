//! Multimodal speech emotion recognition heads over pre-extracted speech and
//! text embeddings, with prosodic (F0) and spectral branches, sequence
//! augmentation, a training loop, and majority-vote ensemble selection.

pub mod augment;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod evalens;
pub mod featpipe;
pub mod fusion;
pub mod gradsuite;
pub mod trainer;

pub use error::{Error, Result};

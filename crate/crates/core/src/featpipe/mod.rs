//! Prosodic (F0) and spectral branches; each yields one fixed-size vector per
//! utterance.

pub mod f0;
pub mod spectral;

pub use f0::{hz_to_mel, quantize_f0, F0Branch, F0CnnBranch, F0Config, F0EmbedBranch, F0Track};
pub use spectral::{SpectralBranch, SpectralConfig, SpectralMode};

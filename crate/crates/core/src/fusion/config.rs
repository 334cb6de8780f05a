use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featpipe::{F0Config, SpectralConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Simple,
    Transformer,
    Hcam,
    Mdat,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Simple,
        Strategy::Transformer,
        Strategy::Hcam,
        Strategy::Mdat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Simple => "SIMPLE",
            Strategy::Transformer => "TRANSFORMER",
            Strategy::Hcam => "HCAM",
            Strategy::Mdat => "MDAT",
        }
    }

    pub fn default_heads(self) -> usize {
        match self {
            Strategy::Mdat => 8,
            _ => 4,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown strategy {s:?}; expected one of SIMPLE, TRANSFORMER, HCAM, MDAT"
                ))
            })
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum F0Variant {
    Quant,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MlpKind {
    /// linear → ReLU → dropout → linear
    ReluDefault,
    Swiglu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub strategy: Strategy,
    pub model_dim: usize,
    /// `None` picks 8 for MDAT and 4 otherwise.
    pub heads: Option<usize>,
    pub use_f0: bool,
    pub f0_variant: F0Variant,
    pub use_spectral: bool,
    pub mlp: MlpKind,
    /// Classifier hidden width; `None` means `model_dim`.
    pub mlp_hidden: Option<usize>,
    pub num_classes: usize,
    pub speech_dim: usize,
    pub text_dim: usize,
    pub dropout: f64,
    pub f0: F0Config,
    pub spectral: SpectralConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Simple,
            model_dim: 64,
            heads: None,
            use_f0: false,
            f0_variant: F0Variant::Quant,
            use_spectral: false,
            mlp: MlpKind::ReluDefault,
            mlp_hidden: None,
            num_classes: 8,
            speech_dim: 64,
            text_dim: 48,
            dropout: 0.1,
            f0: F0Config::default(),
            spectral: SpectralConfig::default(),
        }
    }
}

impl HeadConfig {
    pub fn heads(&self) -> usize {
        self.heads.unwrap_or_else(|| self.strategy.default_heads())
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or(self.model_dim)
    }

    /// Width of the classifier input: pooled fusion output plus enabled branches.
    pub fn classifier_in_dim(&self) -> usize {
        let mut d = 2 * self.model_dim;
        if self.use_f0 {
            d += self.f0.out_dim;
        }
        if self.use_spectral {
            d += self.spectral.out_dim;
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be ≥ 2, got {}",
                self.num_classes
            )));
        }
        if self.model_dim == 0 || self.speech_dim == 0 || self.text_dim == 0 {
            return Err(Error::config("model_dim, speech_dim and text_dim must be ≥ 1"));
        }
        let heads = self.heads();
        if heads == 0 || self.model_dim % heads != 0 {
            return Err(Error::config(format!(
                "model_dim {} is not divisible by {heads} heads",
                self.model_dim
            )));
        }
        if self.strategy == Strategy::Hcam && self.model_dim % 2 != 0 {
            return Err(Error::config(format!(
                "HCAM needs an even model_dim for its bidirectional GRU, got {}",
                self.model_dim
            )));
        }
        if self.mlp_hidden() == 0 {
            return Err(Error::config("mlp_hidden must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.use_f0 {
            self.f0.validate()?;
        }
        if self.use_spectral && self.spectral.out_dim == 0 {
            return Err(Error::config("spectral out_dim must be ≥ 1"));
        }
        Ok(())
    }
}

//! Spectral branch. Either passes through an externally produced utterance
//! embedding, or runs a small trainable encoder over the mel filterbank.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Linear, Matrix, ParamStore, Tape, TransformerEncoderLayer, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpectralMode {
    /// Read the embedding from each example's spectral file.
    Precomputed,
    /// Band projection → one transformer block → mean pool → linear.
    Local,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub mode: SpectralMode,
    pub bands: usize,
    pub hidden: usize,
    pub heads: usize,
    pub out_dim: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            mode: SpectralMode::Local,
            bands: 64,
            hidden: 128,
            heads: 4,
            out_dim: 512,
        }
    }
}

#[derive(Clone, Debug)]
pub enum SpectralBranch {
    Precomputed { dim: usize },
    Local {
        band_proj: Linear,
        encoder: TransformerEncoderLayer,
        out: Linear,
        bands: usize,
    },
}

impl SpectralBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &SpectralConfig,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.out_dim == 0 {
            return Err(Error::config("spectral out_dim must be ≥ 1"));
        }
        Ok(match cfg.mode {
            SpectralMode::Precomputed => SpectralBranch::Precomputed { dim: cfg.out_dim },
            SpectralMode::Local => SpectralBranch::Local {
                band_proj: Linear::new(store, &format!("{name}.band_proj"), cfg.bands, cfg.hidden, rng),
                encoder: TransformerEncoderLayer::new(
                    store,
                    &format!("{name}.encoder"),
                    cfg.hidden,
                    cfg.heads,
                    dropout,
                    rng,
                )?,
                out: Linear::new(store, &format!("{name}.out"), cfg.hidden, cfg.out_dim, rng),
                bands: cfg.bands,
            },
        })
    }

    /// Utterance-level spectral embedding (`1 × out_dim`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        mel: &Matrix,
        precomputed: Option<&[f64]>,
    ) -> Result<Var> {
        match self {
            SpectralBranch::Precomputed { dim } => {
                let v = precomputed.ok_or_else(|| {
                    Error::data("spectral branch is PRECOMPUTED but the example has no embedding")
                })?;
                if v.len() != *dim {
                    return Err(Error::data(format!(
                        "precomputed spectral embedding has {} values, expected {dim}",
                        v.len()
                    )));
                }
                Ok(tape.constant(Matrix::row_vector(v.to_vec())))
            }
            SpectralBranch::Local {
                band_proj,
                encoder,
                out,
                bands,
            } => {
                if mel.rows() == 0 {
                    return Err(Error::data("mel filterbank has no frames"));
                }
                if mel.cols() != *bands {
                    return Err(Error::data(format!(
                        "mel filterbank has {} bands, expected {bands}",
                        mel.cols()
                    )));
                }
                let x = tape.constant(mel.clone());
                let h = band_proj.forward(tape, x)?;
                let h = encoder.forward(tape, h)?;
                let p = tape.mean_rows(h);
                out.forward(tape, p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn precomputed_passes_through_verbatim() {
        let mut store = ParamStore::new();
        let cfg = SpectralConfig {
            mode: SpectralMode::Precomputed,
            out_dim: 3,
            ..Default::default()
        };
        let b = SpectralBranch::new(&mut store, "spec", &cfg, 0.1, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let mut tape = Tape::new(&store);
        let v = [0.25, -1.5, 3.0];
        let y = b.forward(&mut tape, &Matrix::zeros(1, 1), Some(&v)).unwrap();
        assert_eq!(tape.value(y).data(), &v);
        assert!(matches!(
            b.forward(&mut tape, &Matrix::zeros(1, 1), None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn local_output_dim_is_fixed() {
        let mut store = ParamStore::new();
        let cfg = SpectralConfig {
            bands: 16,
            hidden: 32,
            ..Default::default()
        };
        let b = SpectralBranch::new(&mut store, "spec", &cfg, 0.1, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        for frames in [1, 5, 20] {
            let mut tape = Tape::new(&store);
            let mel = Matrix::filled(frames, 16, 0.3);
            let y = b.forward(&mut tape, &mel, None).unwrap();
            assert_eq!(tape.shape(y), (1, 512));
        }
    }
}

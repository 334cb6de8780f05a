use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{F0Variant, HeadConfig, MlpKind, Strategy};
use crate::dataio::Example;
use crate::diffcore::{
    Adjacency, AttentionWeights, AttentivePool, BiGru, GatLayer, Linear, Matrix,
    MultiHeadAttention, ParamId, ParamStore, SwiGlu, Tape, TransformerEncoderLayer, Var,
};
use crate::error::{Error, Result};
use crate::featpipe::{F0Branch, F0CnnBranch, F0EmbedBranch, SpectralBranch};

/// Per-modality refined sequences and the pooled joint vector
/// (`1 × 2·model_dim`).
#[derive(Clone, Debug)]
pub struct FusedRepresentation {
    pub speech_refined: Var,
    pub text_refined: Var,
    pub pooled: Var,
    /// Cross-modal attention maps, speech→text first, when the strategy has them.
    pub cross_attention: Vec<AttentionWeights>,
    /// GAT attention per modality (speech, text) for MDAT.
    pub graph_attention: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub enum Fuser {
    Simple,
    Transformer {
        type_speech: ParamId,
        type_text: ParamId,
        encoder: TransformerEncoderLayer,
    },
    Hcam {
        gru_speech: BiGru,
        gru_text: BiGru,
        self_speech: MultiHeadAttention,
        self_text: MultiHeadAttention,
        cross_speech: MultiHeadAttention,
        cross_text: MultiHeadAttention,
        pool_speech: AttentivePool,
        pool_text: AttentivePool,
    },
    Mdat {
        gat_speech: GatLayer,
        gat_text: GatLayer,
        cross_speech: MultiHeadAttention,
        cross_text: MultiHeadAttention,
        enc_speech: TransformerEncoderLayer,
        enc_text: TransformerEncoderLayer,
    },
}

#[derive(Clone, Debug)]
pub enum ClassifierHead {
    ReluDefault { hidden: Linear, out: Linear, dropout: f64 },
    Swiglu(SwiGlu),
}

impl ClassifierHead {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            ClassifierHead::ReluDefault { hidden, out, dropout } => {
                let h = hidden.forward(tape, x)?;
                let h = tape.relu(h);
                let h = tape.dropout(h, *dropout);
                out.forward(tape, h)
            }
            ClassifierHead::Swiglu(m) => m.forward(tape, x),
        }
    }
}

/// A complete head: modality projections, fusion strategy, optional F0 and
/// spectral branches, and the classifier. Parameters live in a separate
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub cfg: HeadConfig,
    pub proj_speech: Linear,
    pub proj_text: Linear,
    pub fuser: Fuser,
    pub f0: Option<F0Branch>,
    pub spectral: Option<SpectralBranch>,
    pub head: ClassifierHead,
}

impl FusionModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &HeadConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let heads = cfg.heads();
        let proj_speech = Linear::new(store, "proj.speech", cfg.speech_dim, d, rng);
        let proj_text = Linear::new(store, "proj.text", cfg.text_dim, d, rng);
        let fuser = match cfg.strategy {
            Strategy::Simple => Fuser::Simple,
            Strategy::Transformer => Fuser::Transformer {
                type_speech: store.glorot("fuse.type_speech", 1, d, rng),
                type_text: store.glorot("fuse.type_text", 1, d, rng),
                encoder: TransformerEncoderLayer::new(store, "fuse.encoder", d, heads, cfg.dropout, rng)?,
            },
            Strategy::Hcam => Fuser::Hcam {
                gru_speech: BiGru::new(store, "fuse.gru_speech", d, d / 2, rng)?,
                gru_text: BiGru::new(store, "fuse.gru_text", d, d / 2, rng)?,
                self_speech: MultiHeadAttention::new(store, "fuse.self_speech", d, 1, rng)?,
                self_text: MultiHeadAttention::new(store, "fuse.self_text", d, 1, rng)?,
                cross_speech: MultiHeadAttention::new(store, "fuse.cross_speech", d, heads, rng)?,
                cross_text: MultiHeadAttention::new(store, "fuse.cross_text", d, heads, rng)?,
                pool_speech: AttentivePool::new(store, "fuse.pool_speech", d, d, rng),
                pool_text: AttentivePool::new(store, "fuse.pool_text", d, d, rng),
            },
            Strategy::Mdat => Fuser::Mdat {
                gat_speech: GatLayer::new(store, "fuse.gat_speech", d, d, rng),
                gat_text: GatLayer::new(store, "fuse.gat_text", d, d, rng),
                cross_speech: MultiHeadAttention::new(store, "fuse.cross_speech", d, heads, rng)?,
                cross_text: MultiHeadAttention::new(store, "fuse.cross_text", d, heads, rng)?,
                enc_speech: TransformerEncoderLayer::new(store, "fuse.enc_speech", d, heads, cfg.dropout, rng)?,
                enc_text: TransformerEncoderLayer::new(store, "fuse.enc_text", d, heads, cfg.dropout, rng)?,
            },
        };
        let f0 = if cfg.use_f0 {
            Some(match cfg.f0_variant {
                F0Variant::Quant => F0Branch::Quantized(F0EmbedBranch::new(store, "f0", &cfg.f0, rng)?),
                F0Variant::Cnn => F0Branch::Cnn(F0CnnBranch::new(store, "f0", &cfg.f0, rng)?),
            })
        } else {
            None
        };
        let spectral = if cfg.use_spectral {
            Some(SpectralBranch::new(store, "spectral", &cfg.spectral, cfg.dropout, rng)?)
        } else {
            None
        };
        let in_dim = cfg.classifier_in_dim();
        let hidden = cfg.mlp_hidden();
        let head = match cfg.mlp {
            MlpKind::ReluDefault => ClassifierHead::ReluDefault {
                hidden: Linear::new(store, "head.hidden", in_dim, hidden, rng),
                out: Linear::new(store, "head.out", hidden, cfg.num_classes, rng),
                dropout: cfg.dropout,
            },
            MlpKind::Swiglu => {
                ClassifierHead::Swiglu(SwiGlu::new(store, "head.swiglu", in_dim, hidden, cfg.num_classes, rng))
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            proj_speech,
            proj_text,
            fuser,
            f0,
            spectral,
            head,
        })
    }

    /// Builds a model and a fresh parameter store from a seed.
    pub fn build(cfg: &HeadConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::new(&mut store, cfg, &mut rng)?;
        Ok((model, store))
    }

    /// Projects both modalities to `model_dim`.
    pub fn project_modalities(&self, tape: &mut Tape, speech: Var, text: Var) -> Result<(Var, Var)> {
        let s = self.proj_speech.forward(tape, speech)?;
        let t = self.proj_text.forward(tape, text)?;
        Ok((s, t))
    }

    /// Applies the configured fusion strategy to projected sequences.
    pub fn fuse(&self, tape: &mut Tape, speech: Var, text: Var) -> Result<FusedRepresentation> {
        match &self.fuser {
            Fuser::Simple => {
                let ps = tape.mean_rows(speech);
                let pt = tape.mean_rows(text);
                Ok(FusedRepresentation {
                    speech_refined: speech,
                    text_refined: text,
                    pooled: tape.concat_cols(&[ps, pt]),
                    cross_attention: Vec::new(),
                    graph_attention: Vec::new(),
                })
            }
            Fuser::Transformer {
                type_speech,
                type_text,
                encoder,
            } => {
                let ts = tape.param(*type_speech);
                let tt = tape.param(*type_text);
                let s = tape.add_row(speech, ts);
                let t = tape.add_row(text, tt);
                let n_s = tape.shape(s).0;
                let n_t = tape.shape(t).0;
                let joint = tape.concat_rows(&[s, t]);
                let joint = encoder.forward(tape, joint)?;
                let s = tape.slice_rows(joint, 0, n_s);
                let t = tape.slice_rows(joint, n_s, n_t);
                let ps = tape.mean_rows(s);
                let pt = tape.mean_rows(t);
                Ok(FusedRepresentation {
                    speech_refined: s,
                    text_refined: t,
                    pooled: tape.concat_cols(&[ps, pt]),
                    cross_attention: Vec::new(),
                    graph_attention: Vec::new(),
                })
            }
            Fuser::Hcam {
                gru_speech,
                gru_text,
                self_speech,
                self_text,
                cross_speech,
                cross_text,
                pool_speech,
                pool_text,
            } => {
                let s = gru_speech.forward(tape, speech)?;
                let t = gru_text.forward(tape, text)?;
                let (a, _) = self_speech.forward(tape, s, s)?;
                let s = tape.add(s, a);
                let (a, _) = self_text.forward(tape, t, t)?;
                let t = tape.add(t, a);
                let (cs, ws) = cross_speech.forward(tape, s, t)?;
                let (ct, wt) = cross_text.forward(tape, t, s)?;
                let s = tape.add(s, cs);
                let t = tape.add(t, ct);
                let ps = pool_speech.forward(tape, s)?;
                let pt = pool_text.forward(tape, t)?;
                Ok(FusedRepresentation {
                    speech_refined: s,
                    text_refined: t,
                    pooled: tape.concat_cols(&[ps, pt]),
                    cross_attention: vec![ws, wt],
                    graph_attention: Vec::new(),
                })
            }
            Fuser::Mdat {
                gat_speech,
                gat_text,
                cross_speech,
                cross_text,
                enc_speech,
                enc_text,
            } => {
                let adj_s = Adjacency::fully_connected(tape.shape(speech).0);
                let adj_t = Adjacency::fully_connected(tape.shape(text).0);
                let (s, gs) = gat_speech.forward(tape, speech, &adj_s)?;
                let (t, gt) = gat_text.forward(tape, text, &adj_t)?;
                let (cs, ws) = cross_speech.forward(tape, s, t)?;
                let (ct, wt) = cross_text.forward(tape, t, s)?;
                let s = tape.add(s, cs);
                let t = tape.add(t, ct);
                let s = enc_speech.forward(tape, s)?;
                let t = enc_text.forward(tape, t)?;
                let ps = tape.mean_rows(s);
                let pt = tape.mean_rows(t);
                Ok(FusedRepresentation {
                    speech_refined: s,
                    text_refined: t,
                    pooled: tape.concat_cols(&[ps, pt]),
                    cross_attention: vec![ws, wt],
                    graph_attention: vec![gs, gt],
                })
            }
        }
    }

    /// Concatenates the pooled fusion output with the enabled branch vectors
    /// and returns `1 × num_classes` logits.
    pub fn classify(&self, tape: &mut Tape, pooled: Var, f0: Option<Var>, spec: Option<Var>) -> Result<Var> {
        let mut parts = vec![pooled];
        match (self.cfg.use_f0, f0) {
            (true, Some(v)) => parts.push(v),
            (true, None) => return Err(Error::data("F0 branch is enabled but no F0 embedding was given")),
            (false, Some(_)) => return Err(Error::data("F0 embedding given but the F0 branch is disabled")),
            (false, None) => {}
        }
        match (self.cfg.use_spectral, spec) {
            (true, Some(v)) => parts.push(v),
            (true, None) => {
                return Err(Error::data("spectral branch is enabled but no spectral embedding was given"))
            }
            (false, Some(_)) => {
                return Err(Error::data("spectral embedding given but the spectral branch is disabled"))
            }
            (false, None) => {}
        }
        let x = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts) };
        self.head.forward(tape, x)
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.speech.cols() != self.cfg.speech_dim {
            return Err(Error::ingestion(
                &ex.id,
                format!("speech features have {} dims, expected {}", ex.speech.cols(), self.cfg.speech_dim),
            ));
        }
        if ex.text.cols() != self.cfg.text_dim {
            return Err(Error::ingestion(
                &ex.id,
                format!("text features have {} dims, expected {}", ex.text.cols(), self.cfg.text_dim),
            ));
        }
        Ok(())
    }

    /// Logits for each example of a batch. The batch matters only for the
    /// CNN F0 branch, whose batch norm pools statistics in training mode.
    pub fn forward_batch(&self, tape: &mut Tape, batch: &[&Example]) -> Result<Vec<Var>> {
        for ex in batch {
            self.check_example(ex)?;
        }
        let f0: Vec<Option<Var>> = match &self.f0 {
            Some(branch) => {
                let tracks: Vec<_> = batch.iter().map(|e| &e.f0).collect();
                branch.forward_batch(tape, &tracks)?.into_iter().map(Some).collect()
            }
            None => vec![None; batch.len()],
        };
        let mut out = Vec::with_capacity(batch.len());
        for (ex, f0) in batch.iter().zip(f0) {
            let s = tape.constant(ex.speech.clone());
            let t = tape.constant(ex.text.clone());
            let (s, t) = self.project_modalities(tape, s, t)?;
            let fused = self.fuse(tape, s, t)?;
            let spec = match &self.spectral {
                Some(b) => Some(b.forward(tape, &ex.mel, ex.spectral.as_deref())?),
                None => None,
            };
            out.push(self.classify(tape, fused.pooled, f0, spec)?);
        }
        Ok(out)
    }

    /// Evaluation-mode logits for one example.
    pub fn logits(&self, store: &ParamStore, ex: &Example) -> Result<Vec<f64>> {
        let mut tape = Tape::new(store);
        let y = self.forward_batch(&mut tape, &[ex])?[0];
        Ok(tape.value(y).data().to_vec())
    }

    /// Evaluation-mode argmax predictions, computed in parallel.
    pub fn predict(&self, store: &ParamStore, examples: &[Example]) -> Result<Vec<usize>> {
        examples
            .par_iter()
            .map(|ex| self.logits(store, ex).map(|z| argmax(&z)))
            .collect()
    }
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

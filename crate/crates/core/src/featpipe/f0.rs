//! The prosodic branch: mel-scaled F0 quantization feeding a learnable
//! embedding table, and the raw-F0 convolutional baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Linear, Matrix, ParamId, ParamStore, Tape, Var};
use crate::diffcore::layers::Embedding;
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-frame fundamental frequency in Hz; unvoiced frames are `0.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    hz: Vec<f64>,
}

impl F0Track {
    pub fn new(hz: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = hz.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::data(format!(
                "F0 frame {i} has invalid value {v}; expected finite and ≥ 0"
            )));
        }
        Ok(Self { hz })
    }

    pub fn frames(&self) -> usize {
        self.hz.len()
    }

    pub fn hz(&self) -> &[f64] {
        &self.hz
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct F0Config {
    pub bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub embed_dim: usize,
    pub cnn_channels: usize,
    pub out_dim: usize,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            bins: 256,
            fmin: 50.0,
            fmax: 1100.0,
            embed_dim: 256,
            cnn_channels: 256,
            out_dim: 512,
        }
    }
}

impl F0Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.fmin > 0.0 && self.fmin < self.fmax) {
            return Err(Error::config(format!(
                "F0 range must satisfy 0 < fmin < fmax, got [{}, {}]",
                self.fmin, self.fmax
            )));
        }
        if self.bins < 2 {
            return Err(Error::config(format!("F0 bins must be ≥ 2, got {}", self.bins)));
        }
        if self.embed_dim == 0 || self.out_dim == 0 || self.cnn_channels == 0 {
            return Err(Error::config("F0 branch dimensions must be ≥ 1"));
        }
        Ok(())
    }
}

/// Maps each frame to a mel bin in `[0, bins)`, or to the padding index
/// `bins` when unvoiced.
pub fn quantize_f0(track: &F0Track, fmin: f64, fmax: f64, bins: usize) -> Result<Vec<usize>> {
    if !(fmin > 0.0 && fmin < fmax) || bins < 2 {
        return Err(Error::config(format!(
            "invalid quantizer: fmin={fmin}, fmax={fmax}, bins={bins}"
        )));
    }
    if track.frames() == 0 {
        return Err(Error::ingestion("<f0 track>", "empty F0 track"));
    }
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    let top = (bins - 1) as f64;
    Ok(track
        .hz
        .iter()
        .map(|&hz| {
            if hz <= 0.0 {
                bins
            } else {
                let pos = ((hz_to_mel(hz) - lo) / (hi - lo) * bins as f64).floor();
                pos.clamp(0.0, top) as usize
            }
        })
        .collect())
}

/// Embedding lookup (`(bins+1) × embed_dim`), projection to `out_dim`, mean
/// over time.
#[derive(Clone, Debug)]
pub struct F0EmbedBranch {
    pub embedding: Embedding,
    pub proj: Linear,
    pub cfg: F0Config,
}

impl F0EmbedBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &F0Config,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let embedding = Embedding::new(
            store,
            &format!("{name}.embed"),
            cfg.bins + 1,
            cfg.embed_dim,
            Some(cfg.bins),
            rng,
        );
        let proj = Linear::new(store, &format!("{name}.proj"), cfg.embed_dim, cfg.out_dim, rng);
        Ok(Self {
            embedding,
            proj,
            cfg: cfg.clone(),
        })
    }

    pub fn forward_indices(&self, tape: &mut Tape, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::data("F0 index sequence is empty"));
        }
        let e = self.embedding.forward(tape, indices)?;
        let p = self.proj.forward(tape, e)?;
        Ok(tape.mean_rows(p))
    }

    pub fn forward(&self, tape: &mut Tape, track: &F0Track) -> Result<Var> {
        let idx = quantize_f0(track, self.cfg.fmin, self.cfg.fmax, self.cfg.bins)?;
        self.forward_indices(tape, &idx)
    }
}

/// Raw-F0 baseline: 1→C convolution (kernel 3, stride 1, zero padding 1),
/// batch norm, ReLU, projection to `out_dim`, mean over time.
#[derive(Clone, Debug)]
pub struct F0CnnBranch {
    /// Kernel stored as a `3 × C` matrix applied to `[f(t-1), f(t), f(t+1)]`.
    pub conv: Linear,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub proj: Linear,
    pub channels: usize,
}

impl F0CnnBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &F0Config,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.cnn_channels;
        Ok(Self {
            conv: Linear::new(store, &format!("{name}.conv"), 3, c, rng),
            bn_gamma: store.ones(&format!("{name}.bn.gamma"), 1, c),
            bn_beta: store.zeros(&format!("{name}.bn.beta"), 1, c),
            running_mean: store.add_buffer(&format!("{name}.bn.running_mean"), Matrix::zeros(1, c)),
            running_var: store
                .add_buffer(&format!("{name}.bn.running_var"), Matrix::filled(1, c, 1.0)),
            proj: Linear::new(store, &format!("{name}.proj"), c, cfg.out_dim, rng),
            channels: c,
        })
    }

    fn im2col(track: &F0Track) -> Matrix {
        let hz = track.hz();
        let n = hz.len();
        let mut m = Matrix::zeros(n, 3);
        for t in 0..n {
            let prev = if t > 0 { hz[t - 1] } else { 0.0 };
            let next = if t + 1 < n { hz[t + 1] } else { 0.0 };
            m.row_mut(t).copy_from_slice(&[prev, hz[t], next]);
        }
        m
    }

    /// Batch forward. In training mode batch norm uses statistics pooled over
    /// every frame of every track in the batch and records updated running
    /// statistics on the tape.
    pub fn forward_batch(&self, tape: &mut Tape, tracks: &[&F0Track]) -> Result<Vec<Var>> {
        let mut convs = Vec::with_capacity(tracks.len());
        for (i, track) in tracks.iter().enumerate() {
            if track.frames() < 3 {
                return Err(Error::data(format!(
                    "F0 track {i} has {} frames; the CNN branch needs at least 3",
                    track.frames()
                )));
            }
            let cols = tape.constant(Self::im2col(track));
            convs.push(self.conv.forward(tape, cols)?);
        }
        let gamma = tape.param(self.bn_gamma);
        let beta = tape.param(self.bn_beta);
        let normed: Vec<Var> = if tape.is_training() {
            let all = tape.concat_rows(&convs);
            self.record_running_stats(tape, all);
            let n = tape.norm_cols(all);
            let mut offset = 0;
            convs
                .iter()
                .map(|&c| {
                    let len = tape.shape(c).0;
                    let v = tape.slice_rows(n, offset, len);
                    offset += len;
                    v
                })
                .collect()
        } else {
            let params = tape.params();
            let neg_mean = params.value(self.running_mean).map(|m| -m);
            let inv_std = params
                .value(self.running_var)
                .map(|v| 1.0 / (v + BN_EPS).sqrt());
            let neg_mean = tape.constant(neg_mean);
            let inv_std = tape.constant(inv_std);
            convs
                .iter()
                .map(|&c| {
                    let centered = tape.add_row(c, neg_mean);
                    tape.mul_row(centered, inv_std)
                })
                .collect()
        };
        let mut outs = Vec::with_capacity(normed.len());
        for n in normed {
            let scaled = tape.mul_row(n, gamma);
            let shifted = tape.add_row(scaled, beta);
            let act = tape.relu(shifted);
            let p = self.proj.forward(tape, act)?;
            outs.push(tape.mean_rows(p));
        }
        Ok(outs)
    }

    fn record_running_stats(&self, tape: &mut Tape, all: Var) {
        let x = tape.value(all);
        let n = x.rows() as f64;
        let mean = x.col_means();
        let mut var = Matrix::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                let d = v - mean.get(0, c);
                var.data_mut()[c] += d * d;
            }
        }
        let denom = if n > 1.0 { n - 1.0 } else { 1.0 };
        var.scale_in_place(1.0 / denom);
        let params = tape.params();
        let rm = params
            .value(self.running_mean)
            .zip_map(&mean, |r, m| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m);
        let rv = params
            .value(self.running_var)
            .zip_map(&var, |r, v| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v);
        tape.record_buffer_update(self.running_mean, rm);
        tape.record_buffer_update(self.running_var, rv);
    }
}

/// Either F0 branch behind one interface.
#[derive(Clone, Debug)]
pub enum F0Branch {
    Quantized(F0EmbedBranch),
    Cnn(F0CnnBranch),
}

impl F0Branch {
    pub fn out_dim(&self, cfg: &F0Config) -> usize {
        cfg.out_dim
    }

    pub fn forward_batch(&self, tape: &mut Tape, tracks: &[&F0Track]) -> Result<Vec<Var>> {
        match self {
            F0Branch::Quantized(b) => tracks.iter().map(|t| b.forward(tape, t)).collect(),
            F0Branch::Cnn(b) => b.forward_batch(tape, tracks),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn track(hz: &[f64]) -> F0Track {
        F0Track::new(hz.to_vec()).unwrap()
    }

    #[test]
    fn unvoiced_maps_to_padding() {
        assert_eq!(quantize_f0(&track(&[0.0]), 50.0, 1100.0, 256).unwrap(), vec![256]);
    }

    #[test]
    fn range_boundaries() {
        let idx = quantize_f0(&track(&[50.0, 1100.0]), 50.0, 1100.0, 256).unwrap();
        assert_eq!(idx, vec![0, 255]);
    }

    #[test]
    fn closed_form_bin_for_300_hz() {
        // floor((m(300) - m(50)) / (m(1100) - m(50)) * 256) with the HTK mel
        // formula, evaluated offline: 84.
        let idx = quantize_f0(&track(&[300.0]), 50.0, 1100.0, 256).unwrap();
        assert_eq!(idx, vec![84]);
    }

    #[test]
    fn out_of_range_clips() {
        let idx = quantize_f0(&track(&[10.0, 5000.0]), 50.0, 1100.0, 256).unwrap();
        assert_eq!(idx, vec![0, 255]);
    }

    #[test]
    fn empty_track_is_ingestion_error() {
        let err = quantize_f0(&track(&[]), 50.0, 1100.0, 256).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }));
    }

    #[test]
    fn invalid_quantizer_is_config_error() {
        assert!(matches!(
            quantize_f0(&track(&[100.0]), 300.0, 100.0, 256),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            quantize_f0(&track(&[100.0]), 50.0, 1100.0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn negative_hz_rejected() {
        assert!(F0Track::new(vec![100.0, -1.0]).is_err());
    }

    fn small_cfg() -> F0Config {
        F0Config {
            bins: 16,
            embed_dim: 6,
            cnn_channels: 5,
            out_dim: 7,
            ..Default::default()
        }
    }

    #[test]
    fn all_padding_gives_zero_vector() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let branch = F0EmbedBranch::new(&mut store, "f0", &small_cfg(), &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let y = branch.forward(&mut tape, &track(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(tape.shape(y), (1, 7));
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_is_projection_of_its_embedding() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let branch = F0EmbedBranch::new(&mut store, "f0", &small_cfg(), &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let y = branch.forward_indices(&mut tape, &[3]).unwrap();
        let emb = store.value(branch.embedding.table).slice_rows(3, 1);
        let expected = emb.matmul(store.value(branch.proj.w));
        assert_eq!(tape.value(y), &expected);
    }

    #[test]
    fn embed_out_of_range_index_is_data_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let branch = F0EmbedBranch::new(&mut store, "f0", &small_cfg(), &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let err = branch.forward_indices(&mut tape, &[0, 17]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("frame 1"));
    }

    #[test]
    fn cnn_zero_track_gives_zero_vector() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let branch = F0CnnBranch::new(&mut store, "cnn", &small_cfg(), &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let t = track(&[0.0; 6]);
        let y = branch.forward_batch(&mut tape, &[&t]).unwrap();
        assert!(tape.value(y[0]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cnn_output_dim_is_fixed() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let branch = F0CnnBranch::new(&mut store, "cnn", &F0Config::default(), &mut rng).unwrap();
        for n in [3, 4, 17] {
            let mut tape = Tape::new(&store);
            let t = track(&vec![150.0; n]);
            let y = branch.forward_batch(&mut tape, &[&t]).unwrap();
            assert_eq!(tape.shape(y[0]), (1, 512));
        }
    }

    #[test]
    fn cnn_short_track_is_data_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let branch = F0CnnBranch::new(&mut store, "cnn", &small_cfg(), &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let t = track(&[100.0, 120.0]);
        assert!(matches!(
            branch.forward_batch(&mut tape, &[&t]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn cnn_training_records_running_stats() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let branch = F0CnnBranch::new(&mut store, "cnn", &small_cfg(), &mut rng).unwrap();
        let mut tape = Tape::training(&store, 0);
        let a = track(&[100.0, 120.0, 0.0, 130.0]);
        let b = track(&[200.0, 210.0, 220.0]);
        branch.forward_batch(&mut tape, &[&a, &b]).unwrap();
        let updates = tape.take_buffer_updates();
        assert_eq!(updates.len(), 2);
        assert!(updates.iter().all(|(_, m)| m.is_finite()));
    }
}

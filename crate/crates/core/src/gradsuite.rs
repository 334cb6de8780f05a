//! Named finite-difference cases covering every trainable layer, both F0
//! branches, the spectral branch, and each complete fusion head.
//!
//! Every case draws its parameters and inputs from the seed and weights the
//! op's output by a fixed random matrix before summing, so no gradient
//! vanishes by symmetry (e.g. normalized rows summing to a constant).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::Example;
use crate::diffcore::{
    gradcheck, Adjacency, AttentivePool, BiGru, GatLayer, GradCheckConfig, GradReport, LayerNorm,
    Linear, Matrix, MultiHeadAttention, ParamId, ParamStore, SwiGlu, Tape,
    TransformerEncoderLayer, Var, GRADCHECK_TOL,
};
use crate::error::Result;
use crate::featpipe::{
    F0Config, F0CnnBranch, F0EmbedBranch, F0Track, SpectralBranch, SpectralConfig, SpectralMode,
};
use crate::fusion::{F0Variant, FusionModel, HeadConfig, MlpKind, Strategy};

pub const DEFAULT_SEEDS: u64 = 20;

type CaseFn = fn(u64, &GradCheckConfig) -> GradReport;

#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub run: CaseFn,
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn input(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ParamId {
    let m = random(rows, cols, rng);
    store.add(&format!("input.{name}"), m)
}

/// Randomizes every bias and norm parameter so that no case starts at the
/// zero-bias / unit-scale initialization.
fn perturb_all(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        if p.trainable && !p.name.starts_with("input.") {
            for v in p.value.data_mut() {
                *v += 0.2 * rng.random_range(-1.0..1.0);
            }
        }
    }
}

fn readout(tape: &mut Tape, y: Var, weights: &Matrix) -> Var {
    let w = tape.constant(weights.clone());
    tape.mul(y, w)
}

/// Builds the case, then checks `sum(readout ⊙ forward)`.
fn check<B, F>(seed: u64, cfg: &GradCheckConfig, out_shape: (usize, usize), build: B) -> GradReport
where
    B: FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> F,
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let forward = build(&mut store, &mut rng);
    perturb_all(&mut store, &mut rng);
    let weights = random(out_shape.0, out_shape.1, &mut rng);
    gradcheck(&mut store, cfg, |t| {
        let y = forward(t)?;
        Ok(readout(t, y, &weights))
    })
}

fn case_linear(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (3, 2), |s, r| {
        let x = input(s, "x", 3, 4, r);
        let lin = Linear::new(s, "linear", 4, 2, r);
        move |t| {
            let x = t.param(x);
            lin.forward(t, x)
        }
    })
}

fn case_layer_norm(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (4, 6), |s, r| {
        let x = input(s, "x", 4, 6, r);
        let ln = LayerNorm::new(s, "ln", 6);
        move |t| {
            let x = t.param(x);
            ln.forward(t, x)
        }
    })
}

fn case_softmax(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (3, 5), |s, r| {
        let x = input(s, "x", 3, 5, r);
        move |t| {
            let x = t.param(x);
            Ok(t.softmax_rows(x))
        }
    })
}

fn case_mean_pool(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 4), |s, r| {
        let x = input(s, "x", 5, 4, r);
        move |t| {
            let x = t.param(x);
            Ok(t.mean_rows(x))
        }
    })
}

fn case_mha(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (4, 8), |s, r| {
        let q = input(s, "q", 4, 8, r);
        let c = input(s, "kv", 3, 8, r);
        let mha = MultiHeadAttention::new(s, "mha", 8, 2, r).expect("valid dims");
        move |t| {
            let q = t.param(q);
            let c = t.param(c);
            Ok(mha.forward(t, q, c)?.0)
        }
    })
}

fn case_transformer(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (5, 16), |s, r| {
        let x = input(s, "x", 5, 16, r);
        let enc = TransformerEncoderLayer::new(s, "enc", 16, 4, 0.1, r).expect("valid dims");
        move |t| {
            let x = t.param(x);
            enc.forward(t, x)
        }
    })
}

fn case_bigru(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (6, 10), |s, r| {
        let x = input(s, "x", 6, 3, r);
        let gru = BiGru::new(s, "gru", 3, 5, r).expect("valid dims");
        move |t| {
            let x = t.param(x);
            gru.forward(t, x)
        }
    })
}

fn case_gat(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (4, 5), |s, r| {
        let x = input(s, "x", 4, 6, r);
        let gat = GatLayer::new(s, "gat", 6, 5, r);
        let adj = Adjacency::fully_connected(4);
        move |t| {
            let x = t.param(x);
            Ok(gat.forward(t, x, &adj)?.0)
        }
    })
}

fn case_swiglu(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 4), |s, r| {
        let x = input(s, "x", 1, 8, r);
        let mlp = SwiGlu::new(s, "swiglu", 8, 16, 4, r);
        move |t| {
            let x = t.param(x);
            mlp.forward(t, x)
        }
    })
}

fn case_attentive_pool(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 8), |s, r| {
        let x = input(s, "x", 5, 8, r);
        let pool = AttentivePool::new(s, "pool", 8, 6, r);
        move |t| {
            let x = t.param(x);
            pool.forward(t, x)
        }
    })
}

fn small_f0() -> F0Config {
    F0Config {
        bins: 16,
        embed_dim: 6,
        cnn_channels: 5,
        out_dim: 7,
        ..Default::default()
    }
}

fn random_track(frames: usize, rng: &mut ChaCha8Rng) -> F0Track {
    let hz = (0..frames)
        .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(60.0..400.0) })
        .collect();
    F0Track::new(hz).expect("valid track")
}

fn case_f0_embed(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 7), |s, r| {
        let branch = F0EmbedBranch::new(s, "f0", &small_f0(), r).expect("valid config");
        let track = random_track(9, r);
        move |t| branch.forward(t, &track)
    })
}

fn case_f0_cnn(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 7), |s, r| {
        let branch = F0CnnBranch::new(s, "f0", &small_f0(), r).expect("valid config");
        let hz = random_track(10, r).hz().iter().map(|h| h / 100.0).collect();
        let track = F0Track::new(hz).expect("valid track");
        let mean = Matrix::from_vec(1, 5, (0..5).map(|_| r.random_range(-0.5..0.5)).collect());
        let var = Matrix::from_vec(1, 5, (0..5).map(|_| r.random_range(0.5..2.0)).collect());
        *s.value_mut(branch.running_mean) = mean;
        *s.value_mut(branch.running_var) = var;
        move |t| Ok(branch.forward_batch(t, &[&track])?[0])
    })
}

fn case_spectral_local(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 6), |s, r| {
        let sc = SpectralConfig {
            mode: SpectralMode::Local,
            bands: 16,
            hidden: 8,
            heads: 4,
            out_dim: 6,
        };
        let branch = SpectralBranch::new(s, "spec", &sc, 0.1, r).expect("valid config");
        let mel = random(8, 16, r);
        move |t| branch.forward(t, &mel, None)
    })
}

fn head_config(strategy: Strategy) -> HeadConfig {
    HeadConfig {
        strategy,
        model_dim: 8,
        heads: Some(2),
        num_classes: 3,
        speech_dim: 5,
        text_dim: 4,
        dropout: 0.1,
        mlp_hidden: Some(6),
        f0: small_f0(),
        spectral: SpectralConfig {
            mode: SpectralMode::Local,
            bands: 3,
            hidden: 4,
            heads: 2,
            out_dim: 5,
        },
        ..Default::default()
    }
}

fn case_projection(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (7, 8), |s, r| {
        let model = FusionModel::new(s, &head_config(Strategy::Simple), r).expect("valid config");
        let sp = input(s, "speech", 4, 5, r);
        let tx = input(s, "text", 3, 4, r);
        move |t| {
            let a = t.param(sp);
            let b = t.param(tx);
            let (a, b) = model.project_modalities(t, a, b)?;
            Ok(t.concat_rows(&[a, b]))
        }
    })
}

/// Projection, fusion, and pooling on a 4-frame / 3-token toy input.
fn fusion_case(strategy: Strategy, seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 16), |s, r| {
        let model = FusionModel::new(s, &head_config(strategy), r).expect("valid config");
        let sp = input(s, "speech", 4, 5, r);
        let tx = input(s, "text", 3, 4, r);
        move |t| {
            let a = t.param(sp);
            let b = t.param(tx);
            let (a, b) = model.project_modalities(t, a, b)?;
            Ok(model.fuse(t, a, b)?.pooled)
        }
    })
}

fn case_fuse_simple(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    fusion_case(Strategy::Simple, seed, cfg)
}

fn case_fuse_transformer(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    fusion_case(Strategy::Transformer, seed, cfg)
}

fn case_fuse_hcam(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    fusion_case(Strategy::Hcam, seed, cfg)
}

fn case_fuse_mdat(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    fusion_case(Strategy::Mdat, seed, cfg)
}

/// Complete head with both branches: logits from an example.
fn head_case(strategy: Strategy, variant: F0Variant, mlp: MlpKind, seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 3), |s, r| {
        let mut hc = head_config(strategy);
        hc.use_f0 = true;
        hc.f0_variant = variant;
        hc.use_spectral = true;
        hc.mlp = mlp;
        let model = FusionModel::new(s, &hc, r).expect("valid config");
        let ex = Example {
            id: "gradcheck".into(),
            label: 0,
            speech: random(4, 5, r),
            text: random(3, 4, r),
            f0: random_track(5, r),
            mel: random(4, 3, r),
            spectral: None,
        };
        let ex = if variant == F0Variant::Cnn {
            let hz = ex.f0.hz().iter().map(|h| h / 100.0).collect();
            Example { f0: F0Track::new(hz).expect("valid track"), ..ex }
        } else {
            ex
        };
        move |t| Ok(model.forward_batch(t, &[&ex])?[0])
    })
}

fn case_head_simple(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    head_case(Strategy::Simple, F0Variant::Quant, MlpKind::ReluDefault, seed, cfg)
}

fn case_head_transformer(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    head_case(Strategy::Transformer, F0Variant::Cnn, MlpKind::Swiglu, seed, cfg)
}

fn case_head_hcam(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    head_case(Strategy::Hcam, F0Variant::Quant, MlpKind::Swiglu, seed, cfg)
}

fn case_head_mdat(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    head_case(Strategy::Mdat, F0Variant::Cnn, MlpKind::ReluDefault, seed, cfg)
}

fn case_loss(seed: u64, cfg: &GradCheckConfig) -> GradReport {
    check(seed, cfg, (1, 1), |s, r| {
        let z = input(s, "logits", 1, 5, r);
        let target = r.random_range(0..5);
        let weight = r.random_range(0.2..3.0);
        move |t| {
            let z = t.param(z);
            let ce = t.class_loss(z, target, weight, 0.0);
            let fl = t.class_loss(z, target, weight, 2.0);
            Ok(t.add(ce, fl))
        }
    })
}

pub fn cases() -> Vec<GradCase> {
    macro_rules! case {
        ($name:literal, $f:ident) => {
            GradCase { name: $name, run: $f }
        };
    }
    vec![
        case!("linear", case_linear),
        case!("layer_norm", case_layer_norm),
        case!("softmax_rows", case_softmax),
        case!("mean_pool", case_mean_pool),
        case!("multihead_attention", case_mha),
        case!("transformer_encoder_layer", case_transformer),
        case!("bigru", case_bigru),
        case!("gat_layer", case_gat),
        case!("swiglu_mlp", case_swiglu),
        case!("attentive_pool", case_attentive_pool),
        case!("class_loss", case_loss),
        case!("f0_embed_branch", case_f0_embed),
        case!("f0_cnn_branch", case_f0_cnn),
        case!("spectral_branch", case_spectral_local),
        case!("project_modalities", case_projection),
        case!("fuse_simple", case_fuse_simple),
        case!("fuse_transformer", case_fuse_transformer),
        case!("fuse_hcam", case_fuse_hcam),
        case!("fuse_mdat", case_fuse_mdat),
        case!("head_simple", case_head_simple),
        case!("head_transformer", case_head_transformer),
        case!("head_hcam", case_head_hcam),
        case!("head_mdat", case_head_mdat),
    ]
}

pub fn find(name: &str) -> Option<GradCase> {
    cases().into_iter().find(|c| c.name == name)
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseSummary {
    pub name: String,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub worst_seed: u64,
    pub worst_param: String,
    pub failure: Option<String>,
}

impl CaseSummary {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_err < GRADCHECK_TOL
    }
}

/// Runs `case` for seeds `0..seeds` in parallel and keeps the worst report.
pub fn run_case(case: &GradCase, seeds: u64, cfg: &GradCheckConfig) -> CaseSummary {
    let reports: Vec<(u64, GradReport)> = (0..seeds)
        .into_par_iter()
        .map(|seed| (seed, (case.run)(seed, cfg)))
        .collect();
    let mut summary = CaseSummary {
        name: case.name.to_string(),
        seeds,
        max_rel_err: 0.0,
        worst_seed: 0,
        worst_param: String::new(),
        failure: None,
    };
    for (seed, r) in reports {
        if let (None, Some(f)) = (&summary.failure, &r.failure) {
            summary.failure = Some(format!("seed {seed}: {f}"));
        }
        if r.max_rel_err > summary.max_rel_err {
            summary.max_rel_err = r.max_rel_err;
            summary.worst_seed = seed;
            summary.worst_param = r.worst_param;
        }
    }
    summary
}

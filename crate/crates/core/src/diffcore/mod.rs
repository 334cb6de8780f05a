//! Differentiable dense-math primitives and their finite-difference oracle.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradcheck, GradCheckConfig, GradReport, GRADCHECK_TOL};
pub use layers::{
    linear, mean_pool, Adjacency, AttentionWeights, AttentivePool, BiGru, Embedding, GatLayer,
    LayerNorm, Linear, MultiHeadAttention, SwiGlu, TransformerEncoderLayer,
};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Matrix, SeqTensor};

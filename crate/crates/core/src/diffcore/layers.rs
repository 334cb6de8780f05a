//! Trainable layers assembled from tape operations.
//!
//! Every layer owns only [`ParamId`] handles; values live in the
//! [`ParamStore`] so a whole model can be checkpointed or perturbed for a
//! gradient check without touching layer structs.

use std::rc::Rc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Matrix;
use crate::error::{Error, Result};

/// Slope of the LeakyReLU applied to GAT attention scores.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

fn check_cols(tape: &Tape, x: Var, expected: usize, what: &str) -> Result<()> {
    let (r, c) = tape.shape(x);
    if c != expected {
        return Err(Error::config(format!(
            "{what}: input is {r}x{c} but the layer expects {expected} columns"
        )));
    }
    Ok(())
}

/// `y = xW + b`, applied per row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(&format!("{name}.w"), in_dim, out_dim, rng);
        let b = store.zeros(&format!("{name}.b"), 1, out_dim);
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        linear(tape, x, w, b)
    }
}

/// Free-standing affine map on tape values; shapes are validated.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xr, xc) = tape.shape(x);
    let (wr, wc) = tape.shape(w);
    let (br, bc) = tape.shape(b);
    if xc != wr || br != 1 || bc != wc {
        return Err(Error::config(format!(
            "linear: input {xr}x{xc} incompatible with weight {wr}x{wc} and bias {br}x{bc}"
        )));
    }
    let y = tape.matmul(x, w);
    Ok(tape.add_row(y, b))
}

/// Mean over the time axis.
pub fn mean_pool(tape: &mut Tape, x: Var) -> Var {
    tape.mean_rows(x)
}

/// Row-wise layer normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.ones(&format!("{name}.gamma"), 1, dim),
            beta: store.zeros(&format!("{name}.beta"), 1, dim),
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_cols(tape, x, self.dim, "layer norm")?;
        let n = tape.norm_rows(x);
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        let y = tape.mul_row(n, g);
        Ok(tape.add_row(y, b))
    }
}

/// Attention probabilities of one multi-head call, one `queries × keys`
/// matrix per head.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub per_head: Vec<Matrix>,
}

impl AttentionWeights {
    pub fn heads(&self) -> usize {
        self.per_head.len()
    }
}

/// Scaled dot-product multi-head attention with input and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!(
                "{name}: model dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    /// Queries come from `query`, keys and values from `context`. Pass the
    /// same var twice for self-attention.
    pub fn forward(
        &self,
        tape: &mut Tape,
        query: Var,
        context: Var,
    ) -> Result<(Var, AttentionWeights)> {
        check_cols(tape, query, self.dim, "attention query")?;
        check_cols(tape, context, self.dim, "attention context")?;
        let q = self.q.forward(tape, query)?;
        let k = self.k.forward(tape, context)?;
        let v = self.v.forward(tape, context)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim);
            let kh = tape.slice_cols(k, h * head_dim, head_dim);
            let vh = tape.slice_cols(v, h * head_dim, head_dim);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            weights.push(tape.value(attn).clone());
            outs.push(tape.matmul(attn, vh));
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        let y = self.o.forward(tape, joined)?;
        Ok((y, AttentionWeights { per_head: weights }))
    }
}

/// Pre-norm transformer encoder block:
/// `h = x + MHA(LN(x))`, `y = h + FFN(LN(h))`, FFN width 4× with GELU.
#[derive(Clone, Debug)]
pub struct TransformerEncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub dropout: f64,
}

impl TransformerEncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, 4 * dim, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * dim, dim, rng),
            dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n1 = self.ln1.forward(tape, x)?;
        let (a, _) = self.attn.forward(tape, n1, n1)?;
        let a = tape.dropout(a, self.dropout);
        let h = tape.add(x, a);
        let n2 = self.ln2.forward(tape, h)?;
        let f = self.ff1.forward(tape, n2)?;
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, f)?;
        let f = tape.dropout(f, self.dropout);
        Ok(tape.add(h, f))
    }
}

/// One GRU direction. Gate column order in the stacked weights is
/// reset, update, candidate.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.ih"), in_dim, 3 * hidden, rng),
            recurrent: Linear::new(store, &format!("{name}.hh"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    /// Runs the recurrence from a zero state. Returns one `1 × hidden` output
    /// per frame, in the original frame order.
    fn run(&self, tape: &mut Tape, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let t_len = tape.shape(x).0;
        let hd = self.hidden;
        let gates_in = self.input.forward(tape, x)?;
        let mut h = tape.constant(Matrix::zeros(1, hd));
        let mut outs = vec![h; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let gi = tape.slice_rows(gates_in, t, 1);
            let gh = self.recurrent.forward(tape, h)?;
            let gi_r = tape.slice_cols(gi, 0, hd);
            let gh_r = tape.slice_cols(gh, 0, hd);
            let r = tape.add(gi_r, gh_r);
            let r = tape.sigmoid(r);
            let gi_z = tape.slice_cols(gi, hd, hd);
            let gh_z = tape.slice_cols(gh, hd, hd);
            let z = tape.add(gi_z, gh_z);
            let z = tape.sigmoid(z);
            let gi_n = tape.slice_cols(gi, 2 * hd, hd);
            let gh_n = tape.slice_cols(gh, 2 * hd, hd);
            let gated = tape.mul(r, gh_n);
            let n = tape.add(gi_n, gated);
            let n = tape.tanh(n);
            // h' = (1 - z) ⊙ n + z ⊙ h = n + z ⊙ (h - n)
            let diff = tape.sub(h, n);
            let zd = tape.mul(z, diff);
            h = tape.add(n, zd);
            outs[t] = h;
        }
        Ok(outs)
    }
}

/// Bidirectional GRU; output is `T × 2·hidden` (forward half first).
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
    pub in_dim: usize,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config(format!("{name}: GRU hidden size must be ≥ 1")));
        }
        Ok(Self {
            fwd: GruCell::new(store, &format!("{name}.fwd"), in_dim, hidden, rng),
            bwd: GruCell::new(store, &format!("{name}.bwd"), in_dim, hidden, rng),
            in_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_cols(tape, x, self.in_dim, "bigru")?;
        let f = self.fwd.run(tape, x, false)?;
        let b = self.bwd.run(tape, x, true)?;
        let f = tape.concat_rows(&f);
        let b = tape.concat_rows(&b);
        Ok(tape.concat_cols(&[f, b]))
    }
}

/// Neighborhood structure for [`GatLayer`]; `mask[i·n + j]` means node `i`
/// attends to node `j`.
#[derive(Clone, Debug)]
pub struct Adjacency {
    nodes: usize,
    mask: Rc<Vec<bool>>,
}

impl Adjacency {
    /// Complete graph with self-loops.
    pub fn fully_connected(nodes: usize) -> Self {
        Self {
            nodes,
            mask: Rc::new(vec![true; nodes * nodes]),
        }
    }

    /// Builds an adjacency from directed `(node, neighbor)` pairs.
    pub fn from_pairs(nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut mask = vec![false; nodes * nodes];
        for &(i, j) in pairs {
            if i >= nodes || j >= nodes {
                return Err(Error::config(format!(
                    "edge ({i}, {j}) out of range for {nodes} nodes"
                )));
            }
            mask[i * nodes + j] = true;
        }
        for i in 0..nodes {
            if !mask[i * nodes..(i + 1) * nodes].iter().any(|&m| m) {
                return Err(Error::config(format!("node {i} has an empty neighborhood")));
            }
        }
        Ok(Self {
            nodes,
            mask: Rc::new(mask),
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.nodes + j]
    }
}

/// Single-head graph attention layer:
/// `e_ij = LeakyReLU(aᵀ[Wh_i ‖ Wh_j])`, `α = softmax_j(e)`,
/// `h'_i = ELU(Σ_j α_ij W h_j)`.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.glorot(&format!("{name}.w"), in_dim, out_dim, rng),
            a_src: store.glorot(&format!("{name}.a_src"), out_dim, 1, rng),
            a_dst: store.glorot(&format!("{name}.a_dst"), out_dim, 1, rng),
            in_dim,
            out_dim,
        }
    }

    /// Returns the node outputs and the `nodes × nodes` attention matrix.
    pub fn forward(&self, tape: &mut Tape, x: Var, adj: &Adjacency) -> Result<(Var, Matrix)> {
        check_cols(tape, x, self.in_dim, "gat")?;
        let n = tape.shape(x).0;
        if adj.nodes() != n {
            return Err(Error::config(format!(
                "gat: adjacency has {} nodes but input has {n} rows",
                adj.nodes()
            )));
        }
        let w = tape.param(self.w);
        let wh = tape.matmul(x, w);
        let a_src = tape.param(self.a_src);
        let a_dst = tape.param(self.a_dst);
        let s = tape.matmul(wh, a_src);
        let d = tape.matmul(wh, a_dst);
        let d = tape.transpose(d);
        let e = tape.outer_add(s, d);
        let e = tape.leaky_relu(e, GAT_LEAKY_SLOPE);
        let alpha = tape.masked_softmax_rows(e, adj.mask.clone());
        let weights = tape.value(alpha).clone();
        let agg = tape.matmul(alpha, wh);
        Ok((tape.elu(agg), weights))
    }
}

/// `y = (Swish(xW_g + b_g) ⊙ (xW_u + b_u)) W_o + b_o`.
#[derive(Clone, Debug)]
pub struct SwiGlu {
    pub gate: Linear,
    pub up: Linear,
    pub out: Linear,
}

impl SwiGlu {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            gate: Linear::new(store, &format!("{name}.gate"), in_dim, hidden, rng),
            up: Linear::new(store, &format!("{name}.up"), in_dim, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = self.gate.forward(tape, x)?;
        let g = tape.silu(g);
        let u = self.up.forward(tape, x)?;
        let h = tape.mul(g, u);
        self.out.forward(tape, h)
    }
}

/// Additive attention pooling: `s_t = uᵀ tanh(W x_t + b)`,
/// output `Σ_t softmax(s)_t · x_t`.
#[derive(Clone, Debug)]
pub struct AttentivePool {
    pub proj: Linear,
    pub u: ParamId,
}

impl AttentivePool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            proj: Linear::new(store, &format!("{name}.proj"), dim, attn_dim, rng),
            u: store.glorot(&format!("{name}.u"), attn_dim, 1, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.proj.forward(tape, x)?;
        let h = tape.tanh(h);
        let u = tape.param(self.u);
        let s = tape.matmul(h, u);
        let s = tape.transpose(s);
        let w = tape.softmax_rows(s);
        Ok(tape.matmul(w, x))
    }
}

/// Embedding table looked up by integer index.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub entries: usize,
    pub dim: usize,
}

impl Embedding {
    /// Glorot-initialized table; `zero_row` (if any) starts at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        entries: usize,
        dim: usize,
        zero_row: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let mut m = super::params::glorot_matrix(entries, dim, rng);
        if let Some(z) = zero_row {
            m.row_mut(z).fill(0.0);
        }
        Self {
            table: store.add(&format!("{name}.table"), m),
            entries,
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, indices: &[usize]) -> Result<Var> {
        if let Some((pos, &ix)) = indices.iter().enumerate().find(|(_, &i)| i >= self.entries) {
            return Err(Error::data(format!(
                "index {ix} at frame {pos} is outside the table of {} entries",
                self.entries
            )));
        }
        let t = tape.param(self.table);
        Ok(tape.gather_rows(t, Rc::new(indices.to_vec())))
    }
}

//! Causal multi-head self-attention.

use crate::error::{CoreError, Result};
use crate::numerics::array::NdArray;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::params::Init;

use super::rope::rope_apply;
use super::{BlockBuilder, BlockConfig, PROJ_INIT_STD};

/// Additive mask value for future positions. Finite (so the non-finite
/// policy holds) yet large enough that exp underflows to exactly zero,
/// which is what makes causality bitwise.
const MASK_NEG: f64 = -1e30;

/// Positional treatment inside attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosMode {
    /// Positions handled outside (absolute table) or not at all.
    AbsoluteNone,
    /// Rotary embedding applied to queries and keys.
    Rope,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: NodeId,
    pub b_q: NodeId,
    pub w_k: NodeId,
    pub b_k: NodeId,
    pub w_v: NodeId,
    pub b_v: NodeId,
    pub w_o: NodeId,
    pub b_o: NodeId,
}

impl AttentionParams {
    pub fn declare(b: &mut BlockBuilder, prefix: &str, cfg: &BlockConfig) -> Self {
        let d = cfg.embed_dim;
        let proj = Init::Normal { std: PROJ_INIT_STD };
        AttentionParams {
            w_q: b.param(&format!("{prefix}.w_q"), &[d, d], proj.clone()),
            b_q: b.param(&format!("{prefix}.b_q"), &[d], Init::Zeros),
            w_k: b.param(&format!("{prefix}.w_k"), &[d, d], proj.clone()),
            b_k: b.param(&format!("{prefix}.b_k"), &[d], Init::Zeros),
            w_v: b.param(&format!("{prefix}.w_v"), &[d, d], proj.clone()),
            b_v: b.param(&format!("{prefix}.b_v"), &[d], Init::Zeros),
            w_o: b.param(&format!("{prefix}.w_o"), &[d, d], proj),
            b_o: b.param(&format!("{prefix}.b_o"), &[d], Init::Zeros),
        }
    }
}

/// softmax(QK^T / sqrt(head_dim) + causal mask) V per head, heads
/// concatenated, output-projected. RoPE is applied to Q and K when
/// `pos_mode` is [`PosMode::Rope`].
pub fn causal_attention(
    g: &mut Graph,
    x: NodeId,
    p: &AttentionParams,
    cfg: &BlockConfig,
    pos_mode: PosMode,
) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != cfg.embed_dim {
        return Err(CoreError::shape(
            "causal_attention",
            format!("expected (batch, time, {}), got {shape:?}", cfg.embed_dim),
        ));
    }
    let (b_len, t_len, d) = (shape[0], shape[1], shape[2]);
    let heads = cfg.n_heads;
    let hd = cfg.head_dim();

    let heads_view = |g: &mut Graph, y: NodeId| -> Result<NodeId> {
        let r = g.reshape(y, &[b_len, t_len, heads, hd])?;
        g.transpose(r, &[0, 2, 1, 3]) // (B, H, T, hd)
    };

    let qm = g.matmul(x, p.w_q)?;
    let q = g.add(qm, p.b_q)?;
    let km = g.matmul(x, p.w_k)?;
    let k = g.add(km, p.b_k)?;
    let vm = g.matmul(x, p.w_v)?;
    let v = g.add(vm, p.b_v)?;

    let mut q = heads_view(g, q)?;
    let mut k = heads_view(g, k)?;
    let v = heads_view(g, v)?;

    if pos_mode == PosMode::Rope {
        let positions: Vec<usize> = (0..t_len).collect();
        q = rope_apply(g, q, &positions, cfg.rope_base)?;
        k = rope_apply(g, k, &positions, cfg.rope_base)?;
    }

    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?; // (B, H, T, T)
    let scaled = g.mul_scalar(scores, 1.0 / (hd as f64).sqrt());

    let mut mask = NdArray::<f64>::zeros(&[t_len, t_len]);
    for i in 0..t_len {
        for j in (i + 1)..t_len {
            mask.data_mut()[i * t_len + j] = MASK_NEG;
        }
    }
    let mask = g.constant(mask);
    let masked = g.add(scaled, mask)?;
    let probs = g.softmax_last_axis(masked)?;

    let ctx = g.matmul(probs, v)?; // (B, H, T, hd)
    let merged = g.transpose(ctx, &[0, 2, 1, 3])?;
    let flat = g.reshape(merged, &[b_len, t_len, d])?;
    let out = g.matmul(flat, p.w_o)?;
    g.add(out, p.b_o)
}

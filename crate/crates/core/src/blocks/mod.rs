//! Architectural sub-blocks whose combinations define the model variants:
//! norms, feed-forward networks, positional embeddings, causal attention,
//! and the Mamba mixer. Blocks are pure graph builders over (batch, time,
//! embed) activations.

pub mod attention;
pub mod ffn;
pub mod mamba;
pub mod norms;
pub mod rope;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::params::{Init, ParamSpec};

pub use attention::{causal_attention, AttentionParams, PosMode};
pub use ffn::{gelu_mlp, swiglu_ffn, GeluMlpParams, SwigluParams};
pub use mamba::{mamba_mixer, ssm_scan, MambaParams};
pub use norms::{layer_norm, rms_norm};
pub use rope::rope_apply;

/// Sub-block hyperparameters shared by every variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub embed_dim: usize,
    pub n_heads: usize,
    /// GELU MLP hidden width.
    pub ffn_hidden_dim: usize,
    /// SwiGLU hidden width; sized for parameter parity with the GELU MLP.
    pub swiglu_hidden_dim: usize,
    pub mamba_state_dim: usize,
    pub mamba_conv_kernel: usize,
    pub mamba_expand: usize,
    pub mamba_dt_rank: usize,
    pub rope_base: f64,
    pub norm_epsilon: f64,
}

impl BlockConfig {
    /// Defaults for a given width: GELU hidden 4d, SwiGLU hidden
    /// round-up(8d/3, multiple of 8), Mamba state 16 / kernel 4 / expand 4 /
    /// dt-rank ceil(d/16), RoPE base 10000, norm epsilon 1e-5.
    pub fn for_embed(embed_dim: usize, n_heads: usize) -> Self {
        BlockConfig {
            embed_dim,
            n_heads,
            ffn_hidden_dim: 4 * embed_dim,
            swiglu_hidden_dim: (8 * embed_dim).div_ceil(3).div_ceil(8) * 8,
            mamba_state_dim: 16,
            mamba_conv_kernel: 4,
            mamba_expand: 4,
            mamba_dt_rank: embed_dim.div_ceil(16),
            rope_base: 10_000.0,
            norm_epsilon: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn mamba_inner_dim(&self) -> usize {
        self.mamba_expand * self.embed_dim
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(crate::error::CoreError::InvalidArgument(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.norm_epsilon <= 0.0 || self.rope_base <= 0.0 {
            return Err(crate::error::CoreError::InvalidArgument(
                "norm_epsilon and rope_base must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Graph under construction plus the parameter leaves declared so far.
#[derive(Default)]
pub struct BlockBuilder {
    pub graph: Graph,
    pub specs: Vec<ParamSpec>,
}

impl BlockBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a trainable parameter leaf with its initializer.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> NodeId {
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            init,
        });
        self.graph.leaf(name, shape, true)
    }

    /// Declare a non-trainable input leaf.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.graph.leaf(name, shape, false)
    }

    pub fn finish(self) -> (Graph, Vec<ParamSpec>) {
        (self.graph, self.specs)
    }
}

impl Deref for BlockBuilder {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for BlockBuilder {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}

pub(crate) const PROJ_INIT_STD: f64 = 0.02;

//! Model assembly from declarative specs, prediction, and the training loss.


use std::collections::BTreeMap;
use std::sync::Arc;

use crate::blocks::{
    causal_attention, gelu_mlp, layer_norm, mamba_mixer, rms_norm, swiglu_ffn, AttentionParams,
    BlockBuilder, BlockConfig, GeluMlpParams, MambaParams, PosMode, SwigluParams,
};
use crate::error::{CoreError, Result};
use crate::numerics::array::{NdArray, Real};
use crate::numerics::exec::{GraphExec, Layered};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::params::{Init, ParamSet, ParamSpec};
use crate::numerics::rng::RngStream;

use super::arch::{ArchitectureSpec, AttentionKind, FfnKind, NormKind, PosEmb};
use super::prompt::{embed_prompt, PromptBatch};

/// Node handles of a built graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphIo {
    pub tokens: NodeId,
    /// (batch, n_points, output_dim), read at the x-token positions.
    pub predictions: NodeId,
    pub targets: NodeId,
    pub loss_mask: NodeId,
    pub inv_loss_norm: NodeId,
    pub loss: NodeId,
}

pub struct BuiltGraph {
    pub graph: Arc<Graph>,
    pub io: GraphIo,
}

enum NormParams {
    Layer { gain: NodeId, bias: NodeId },
    Rms { gain: NodeId },
}

fn declare_norm(b: &mut BlockBuilder, prefix: &str, kind: NormKind, dim: usize) -> NormParams {
    match kind {
        NormKind::Layer => NormParams::Layer {
            gain: b.param(&format!("{prefix}.gain"), &[dim], Init::Ones),
            bias: b.param(&format!("{prefix}.bias"), &[dim], Init::Zeros),
        },
        NormKind::Rms => NormParams::Rms {
            gain: b.param(&format!("{prefix}.gain"), &[dim], Init::Ones),
        },
    }
}

fn apply_norm(g: &mut Graph, x: NodeId, p: &NormParams, eps: f64) -> Result<NodeId> {
    match p {
        NormParams::Layer { gain, bias } => layer_norm(g, x, *gain, *bias, eps),
        NormParams::Rms { gain } => rms_norm(g, x, *gain, eps),
    }
}

/// Build the computation graph of a variant for one (batch, n_points) shape.
/// Parameter declarations (names, shapes, initializers) are identical for
/// every shape.
pub fn build_graph(
    arch: &ArchitectureSpec,
    cfg: &BlockConfig,
    batch: usize,
    n_points: usize,
) -> Result<(BuiltGraph, Vec<ParamSpec>)> {
    arch.validate()?;
    cfg.validate()?;
    let comps = arch.variant.components();
    let seq_len = 2 * n_points;
    if comps.pos_emb == PosEmb::Absolute && seq_len > arch.max_seq_len {
        return Err(CoreError::shape(
            "build_graph",
            format!(
                "sequence length {seq_len} exceeds the absolute position table ({})",
                arch.max_seq_len
            ),
        ));
    }
    let d = arch.task_input_dim;
    let embed = arch.embed_dim;
    let out_dim = arch.output_dim;
    let eps = cfg.norm_epsilon;

    let mut b = BlockBuilder::new();
    let tokens = b.input("tokens", &[batch, seq_len, d]);

    let w_in = b.param("read_in.w", &[d, embed], Init::Normal { std: 0.02 });
    let b_in = b.param("read_in.b", &[embed], Init::Zeros);
    let mut x = b.graph.matmul(tokens, w_in)?;
    x = b.graph.add(x, b_in)?;

    match comps.pos_emb {
        PosEmb::Absolute => {
            let table = b.param(
                "pos_table",
                &[arch.max_seq_len, embed],
                Init::Normal { std: 0.02 },
            );
            let rows = b.graph.slice_axis(table, 0, 0, seq_len, 1)?;
            x = b.graph.add(x, rows)?;
        }
        PosEmb::MambaPrefix => {
            let norm = declare_norm(&mut b, "pos_mixer.norm", comps.norm, embed);
            let params = MambaParams::declare(&mut b, "pos_mixer", cfg);
            let normed = apply_norm(&mut b.graph, x, &norm, eps)?;
            let mixed = mamba_mixer(&mut b.graph, normed, &params, cfg)?;
            x = b.graph.add(x, mixed)?;
        }
        PosEmb::Rope | PosEmb::None => {}
    }

    if comps.attention == AttentionKind::None {
        // Pure mixer stack: n_layers * multiplier blocks of
        // [norm -> mixer -> residual].
        for l in 0..arch.mamba_stack_depth() {
            let norm = declare_norm(&mut b, &format!("layers.{l}.norm1"), comps.norm, embed);
            let params = MambaParams::declare(&mut b, &format!("layers.{l}.mixer"), cfg);
            let normed = apply_norm(&mut b.graph, x, &norm, eps)?;
            let mixed = mamba_mixer(&mut b.graph, normed, &params, cfg)?;
            x = b.graph.add(x, mixed)?;
        }
    } else {
        let pos_mode = if comps.pos_emb == PosEmb::Rope {
            PosMode::Rope
        } else {
            PosMode::AbsoluteNone
        };
        for l in 0..arch.n_layers {
            let norm1 = declare_norm(&mut b, &format!("layers.{l}.norm1"), comps.norm, embed);
            let attn = AttentionParams::declare(&mut b, &format!("layers.{l}.attn"), cfg);
            let normed = apply_norm(&mut b.graph, x, &norm1, eps)?;
            let attended = causal_attention(&mut b.graph, normed, &attn, cfg, pos_mode)?;
            x = b.graph.add(x, attended)?;

            let norm2 = declare_norm(&mut b, &format!("layers.{l}.norm2"), comps.norm, embed);
            let normed = apply_norm(&mut b.graph, x, &norm2, eps)?;
            let fed = match comps.ffn {
                FfnKind::GeluMlp => {
                    let p = GeluMlpParams::declare(&mut b, &format!("layers.{l}.ffn"), cfg);
                    gelu_mlp(&mut b.graph, normed, &p)?
                }
                FfnKind::Swiglu => {
                    let p = SwigluParams::declare(&mut b, &format!("layers.{l}.ffn"), cfg);
                    swiglu_ffn(&mut b.graph, normed, &p)?
                }
                FfnKind::MambaMixer => {
                    let p = MambaParams::declare(&mut b, &format!("layers.{l}.ffn"), cfg);
                    mamba_mixer(&mut b.graph, normed, &p, cfg)?
                }
                FfnKind::None => normed,
            };
            x = b.graph.add(x, fed)?;
        }
    }

    let final_norm = declare_norm(&mut b, "final_norm", comps.norm, embed);
    x = apply_norm(&mut b.graph, x, &final_norm, eps)?;

    // Predictions are read at the x-token positions (even indices).
    let at_queries = b.graph.slice_axis(x, 1, 0, seq_len, 2)?;
    let w_out = b.param("read_out.w", &[embed, out_dim], Init::Normal { std: 0.02 });
    let b_out = b.param("read_out.b", &[out_dim], Init::Zeros);
    let mut preds = b.graph.matmul(at_queries, w_out)?;
    preds = b.graph.add(preds, b_out)?;

    // Loss leaves come after the prediction node so prediction-only forward
    // passes need no target bindings.
    let targets = b.input("targets", &[batch, n_points, out_dim]);
    let loss_mask = b.input("loss_mask", &[n_points, 1]);
    let inv_loss_norm = b.input("inv_loss_norm", &[]);
    let diff = b.graph.sub(preds, targets)?;
    let sq = b.graph.mul(diff, diff)?;
    let masked = b.graph.mul(sq, loss_mask)?;
    let total = b.graph.sum_all(masked)?;
    let loss = b.graph.mul(total, inv_loss_norm)?;

    let (graph, specs) = b.finish();
    Ok((
        BuiltGraph {
            graph: Arc::new(graph),
            io: GraphIo {
                tokens,
                predictions: preds,
                targets,
                loss_mask,
                inv_loss_norm,
                loss,
            },
        },
        specs,
    ))
}

/// A parameterized model: spec, block config, and named parameter arrays.
/// Prediction is stateless; callers that loop over one shape should hold a
/// [`GraphExec`] themselves (the training loop does).
pub struct Model<F: Real> {
    pub arch: ArchitectureSpec,
    pub block_cfg: BlockConfig,
    pub params: ParamSet<F>,
    /// Training steps behind these parameters (0 at initialization).
    pub trained_steps: u64,
}

impl<F: Real> Model<F> {
    /// Initialize a fresh model; parameter draws consume `rng` in declaration
    /// order.
    pub fn build(arch: ArchitectureSpec, block_cfg: BlockConfig, rng: &mut RngStream) -> Result<Self> {
        let (_, specs) = build_graph(&arch, &block_cfg, 1, 1)?;
        let params = ParamSet::initialize(&specs, rng);
        Ok(Model {
            arch,
            block_cfg,
            params,
            trained_steps: 0,
        })
    }

    pub fn from_params(
        arch: ArchitectureSpec,
        block_cfg: BlockConfig,
        params: ParamSet<F>,
        trained_steps: u64,
    ) -> Self {
        Model {
            arch,
            block_cfg,
            params,
            trained_steps,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }

    pub fn built_graph(&self, batch: usize, n_points: usize) -> Result<Arc<BuiltGraph>> {
        let (built, _) = build_graph(&self.arch, &self.block_cfg, batch, n_points)?;
        Ok(Arc::new(built))
    }

    /// Predictions for every context length of the batch:
    /// (batch, n_points, output_dim). The prediction at context length i uses
    /// only tokens x_0..y_{i-1}, x_i.
    pub fn predict(&self, batch: &PromptBatch) -> Result<NdArray<f64>> {
        let built = self.built_graph(batch.batch_size(), batch.n_points())?;
        let tokens: NdArray<F> = embed_prompt(batch)?.cast();
        let mut exec = GraphExec::new(Arc::clone(&built.graph));
        let data: BTreeMap<String, NdArray<F>> = BTreeMap::from([("tokens".to_string(), tokens)]);
        exec.forward_upto(&Layered(&data, &self.params), built.io.predictions)?;
        Ok(exec.value(built.io.predictions).to_f64())
    }
}

/// Mean squared error over the masked prediction positions, averaged over
/// batch, positions, and output coordinates. This is the training objective
/// and agrees with the graph's loss node.
pub fn mse_loss(predictions: &NdArray<f64>, batch: &PromptBatch) -> f64 {
    let (b, n, o) = (
        batch.batch_size(),
        batch.n_points(),
        batch.output_dim(),
    );
    let mask_total: f64 = batch.loss_mask.iter().sum();
    if mask_total == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for bi in 0..b {
        for i in 0..n {
            let w = batch.loss_mask[i];
            if w == 0.0 {
                continue;
            }
            for oi in 0..o {
                let idx = (bi * n + i) * o + oi;
                let diff = predictions.data()[idx] - batch.ys.data()[idx];
                total += w * diff * diff;
            }
        }
    }
    total / (b as f64 * mask_total * o as f64)
}

/// Scale factor binding for the graph loss node matching [`mse_loss`].
pub fn inv_loss_norm(batch: &PromptBatch) -> f64 {
    let mask_total: f64 = batch.loss_mask.iter().sum();
    let denom = batch.batch_size() as f64 * mask_total * batch.output_dim() as f64;
    if denom == 0.0 {
        0.0
    } else {
        1.0 / denom
    }
}

/// Loss-side leaf bindings for a batch.
pub fn loss_bindings<F: Real>(batch: &PromptBatch) -> Result<BTreeMap<String, NdArray<F>>> {
    let tokens: NdArray<F> = embed_prompt(batch)?.cast();
    let n = batch.n_points();
    let mask = NdArray::from_vec(vec![n, 1], batch.loss_mask.clone())?;
    Ok(BTreeMap::from([
        ("tokens".to_string(), tokens),
        ("targets".to_string(), batch.ys.cast()),
        ("loss_mask".to_string(), mask.cast()),
        (
            "inv_loss_norm".to_string(),
            NdArray::scalar(F::from_f64(inv_loss_norm(batch))),
        ),
    ]))
}

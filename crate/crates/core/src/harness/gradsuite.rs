//! The block and end-to-end gradient verification suite behind the
//! `gradcheck` subcommand and the acceptance gate.

use crate::blocks::{
    causal_attention, gelu_mlp, layer_norm, mamba_mixer, rms_norm, swiglu_ffn, AttentionParams,
    BlockBuilder, BlockConfig, GeluMlpParams, MambaParams, PosMode, SwigluParams,
};
use crate::error::Result;
use crate::models::arch::{ArchitectureSpec, VariantId};
use crate::models::model::build_graph;
use crate::numerics::array::NdArray;
use crate::numerics::gradcheck::{default_init, gradcheck, GradCheckConfig, GradCheckReport};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::params::Init;

/// Settings shared by every check in the suite: h = 1e-5, tolerance 1e-4,
/// 64-bit, >= 10 seeds.
pub fn suite_config() -> GradCheckConfig {
    GradCheckConfig {
        seeds: 10,
        ..GradCheckConfig::default()
    }
}

fn mean_square_loss(g: &mut Graph, out: NodeId) -> Result<NodeId> {
    let sq = g.mul(out, out)?;
    let axes: Vec<usize> = (0..g.shape(sq).len()).collect();
    g.reduce_mean(sq, &axes, false)
}

/// Gradcheck every architectural block at a small shape; returns
/// (name, report) pairs.
pub fn block_reports(base_seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let cfg = suite_config();
    let mut out = Vec::new();

    let block4 = BlockConfig::for_embed(4, 2);
    let mut mamba_cfg = BlockConfig::for_embed(4, 2);
    mamba_cfg.mamba_expand = 2;
    mamba_cfg.mamba_state_dim = 3;

    out.push((
        "layer_norm".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 3, 6], true);
                let gain = b.param("gain", &[6], Init::Ones);
                let bias = b.param("bias", &[6], Init::Zeros);
                let normed = layer_norm(&mut b.graph, x, gain, bias, 1e-5)?;
                let loss = mean_square_loss(&mut b.graph, normed)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed,
        )?,
    ));

    out.push((
        "rms_norm".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 3, 6], true);
                let gain = b.param("gain", &[6], Init::Ones);
                let normed = rms_norm(&mut b.graph, x, gain, 1e-5)?;
                let loss = mean_square_loss(&mut b.graph, normed)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed + 1,
        )?,
    ));

    out.push((
        "gelu_mlp".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 3, 4], true);
                let p = GeluMlpParams::declare(&mut b, "ffn", &block4);
                let y = gelu_mlp(&mut b.graph, x, &p)?;
                let loss = mean_square_loss(&mut b.graph, y)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed + 2,
        )?,
    ));

    out.push((
        "swiglu_ffn".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 3, 4], true);
                let p = SwigluParams::declare(&mut b, "ffn", &block4);
                let y = swiglu_ffn(&mut b.graph, x, &p)?;
                let loss = mean_square_loss(&mut b.graph, y)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed + 3,
        )?,
    ));

    out.push((
        "causal_attention".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 4, 4], true);
                let p = AttentionParams::declare(&mut b, "attn", &block4);
                let y = causal_attention(&mut b.graph, x, &p, &block4, PosMode::AbsoluteNone)?;
                let loss = mean_square_loss(&mut b.graph, y)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed + 4,
        )?,
    ));

    out.push((
        "rope_attention".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 4, 4], true);
                let p = AttentionParams::declare(&mut b, "attn", &block4);
                let y = causal_attention(&mut b.graph, x, &p, &block4, PosMode::Rope)?;
                let loss = mean_square_loss(&mut b.graph, y)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed + 5,
        )?,
    ));

    out.push((
        "mamba_mixer".to_string(),
        gradcheck(
            |g| {
                let mut b = BlockBuilder {
                    graph: std::mem::take(g),
                    specs: vec![],
                };
                let x = b.graph.leaf("x", &[2, 4, 4], true);
                let p = MambaParams::declare(&mut b, "mixer", &mamba_cfg);
                let y = mamba_mixer(&mut b.graph, x, &p, &mamba_cfg)?;
                let loss = mean_square_loss(&mut b.graph, y)?;
                *g = b.graph;
                Ok(loss)
            },
            default_init,
            &cfg,
            base_seed + 6,
        )?,
    ));

    Ok(out)
}

/// End-to-end gradcheck of one variant at the tiny configuration
/// (2 layers, embed 32, 2 heads), coordinates subsampled per leaf.
pub fn variant_report(variant: VariantId, base_seed: u64) -> Result<GradCheckReport> {
    let mut arch = ArchitectureSpec::new(variant, 2, 32, 2);
    arch.task_input_dim = 3;
    arch.output_dim = 1;
    arch.max_seq_len = 8;
    let block = BlockConfig::for_embed(32, 2);
    let (batch, n_points) = (2usize, 3usize);
    let inv_norm = 1.0 / (batch as f64 * n_points as f64);

    let cfg = GradCheckConfig {
        max_coords_per_leaf: Some(8),
        ..suite_config()
    };
    gradcheck(
        |g| {
            let (built, _) = build_graph(&arch, &block, batch, n_points)?;
            *g = std::sync::Arc::try_unwrap(built.graph).expect("freshly built graph is unshared");
            Ok(built.io.loss)
        },
        move |name, shape, rng| match name {
            "loss_mask" => NdArray::full(shape, 1.0),
            "inv_loss_norm" => NdArray::scalar(inv_norm),
            _ if name.ends_with(".gain") => {
                let mut v = rng.draw(crate::numerics::rng::DrawDistribution::StandardNormal, shape);
                for x in v.data_mut() {
                    *x = 1.0 + 0.1 * *x;
                }
                v
            }
            _ => default_init(name, shape, rng),
        },
        &cfg,
        base_seed,
    )
}

/// All twelve variants.
pub fn variant_reports(base_seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for (i, variant) in VariantId::ALL.iter().enumerate() {
        out.push((
            format!("variant {}", variant),
            variant_report(*variant, base_seed + 100 + i as u64)?,
        ));
    }
    Ok(out)
}

/// Run both halves of the suite, returning (name, report) pairs.
pub fn full_suite(base_seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut all = block_reports(base_seed)?;
    all.extend(variant_reports(base_seed)?);
    Ok(all)
}

//! Feed-forward blocks.

use crate::error::Result;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::params::Init;

use super::{BlockBuilder, BlockConfig, PROJ_INIT_STD};

#[derive(Debug, Clone, Copy)]
pub struct GeluMlpParams {
    pub w_in: NodeId,
    pub b_in: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

impl GeluMlpParams {
    pub fn declare(b: &mut BlockBuilder, prefix: &str, cfg: &BlockConfig) -> Self {
        let (d, h) = (cfg.embed_dim, cfg.ffn_hidden_dim);
        GeluMlpParams {
            w_in: b.param(&format!("{prefix}.w_in"), &[d, h], Init::Normal { std: PROJ_INIT_STD }),
            b_in: b.param(&format!("{prefix}.b_in"), &[h], Init::Zeros),
            w_out: b.param(&format!("{prefix}.w_out"), &[h, d], Init::Normal { std: PROJ_INIT_STD }),
            b_out: b.param(&format!("{prefix}.b_out"), &[d], Init::Zeros),
        }
    }
}

/// W_out * GELU(W_in * x + b_in) + b_out, per token.
pub fn gelu_mlp(g: &mut Graph, x: NodeId, p: &GeluMlpParams) -> Result<NodeId> {
    let pre = g.matmul(x, p.w_in)?;
    let pre = g.add(pre, p.b_in)?;
    let act = g.gelu(pre);
    let out = g.matmul(act, p.w_out)?;
    g.add(out, p.b_out)
}

#[derive(Debug, Clone, Copy)]
pub struct SwigluParams {
    pub w_gate: NodeId,
    pub w_up: NodeId,
    pub w_down: NodeId,
}

impl SwigluParams {
    pub fn declare(b: &mut BlockBuilder, prefix: &str, cfg: &BlockConfig) -> Self {
        let (d, h) = (cfg.embed_dim, cfg.swiglu_hidden_dim);
        SwigluParams {
            w_gate: b.param(&format!("{prefix}.w_gate"), &[d, h], Init::Normal { std: PROJ_INIT_STD }),
            w_up: b.param(&format!("{prefix}.w_up"), &[d, h], Init::Normal { std: PROJ_INIT_STD }),
            w_down: b.param(&format!("{prefix}.w_down"), &[h, d], Init::Normal { std: PROJ_INIT_STD }),
        }
    }
}

/// W_down * (SiLU(W_gate * x) ⊙ (W_up * x)); no biases.
pub fn swiglu_ffn(g: &mut Graph, x: NodeId, p: &SwigluParams) -> Result<NodeId> {
    let gate = g.matmul(x, p.w_gate)?;
    let gate = g.silu(gate)?;
    let up = g.matmul(x, p.w_up)?;
    let prod = g.mul(gate, up)?;
    g.matmul(prod, p.w_down)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::numerics::array::NdArray;
    use crate::numerics::exec::forward_graph;
    use crate::numerics::gradcheck::{default_init, gradcheck, GradCheckConfig};
    use crate::numerics::params::ParamSet;
    use crate::numerics::rng::RngStream;

    fn tiny_cfg() -> BlockConfig {
        BlockConfig::for_embed(4, 2)
    }

    #[test]
    fn gelu_mlp_maps_zero_to_zero() {
        let cfg = tiny_cfg();
        let mut b = BlockBuilder::new();
        let x = b.input("x", &[1, 2, 4]);
        let p = GeluMlpParams::declare(&mut b, "ffn", &cfg);
        let out = gelu_mlp(&mut b.graph, x, &p).unwrap();
        let (graph, specs) = b.finish();
        let mut rng = RngStream::new(1, 0);
        let params: ParamSet<f64> = ParamSet::initialize(&specs, &mut rng);
        let mut bindings: BTreeMap<String, NdArray<f64>> =
            params.iter().map(|(n, a)| (n.clone(), a.clone())).collect();
        bindings.insert("x".to_string(), NdArray::zeros(&[1, 2, 4]));
        let vals = forward_graph(&Arc::new(graph), &bindings, &[out]).unwrap();
        assert!(vals[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gelu_asymptote_is_identity_for_large_positive_input() {
        // 1-wide config with identity weights: gelu(x) -> x for large x.
        let mut g = Graph::new();
        let x = g.leaf("x", &[1, 1], false);
        let y = g.gelu(x);
        let vals = forward_graph(
            &Arc::new(g),
            &BTreeMap::from([(
                "x".to_string(),
                NdArray::from_vec(vec![1, 1], vec![30.0]).unwrap(),
            )]),
            &[y],
        )
        .unwrap();
        let diff: f64 = vals[0].data()[0] - 30.0;
        assert!(diff.abs() < 1e-9);
    }

    #[test]
    fn swiglu_zero_input_and_zero_up_gate_to_zero() {
        let cfg = tiny_cfg();
        let build = |zero_up: bool| {
            let mut b = BlockBuilder::new();
            let x = b.input("x", &[1, 2, 4]);
            let p = SwigluParams::declare(&mut b, "ffn", &cfg);
            let out = swiglu_ffn(&mut b.graph, x, &p).unwrap();
            let (graph, specs) = b.finish();
            let mut rng = RngStream::new(2, 0);
            let params: ParamSet<f64> = ParamSet::initialize(&specs, &mut rng);
            let mut bindings: BTreeMap<String, NdArray<f64>> =
                params.iter().map(|(n, a)| (n.clone(), a.clone())).collect();
            if zero_up {
                bindings.insert("ffn.w_up".to_string(), NdArray::zeros(&[4, cfg.swiglu_hidden_dim]));
                let mut rng2 = RngStream::new(3, 1);
                bindings.insert(
                    "x".to_string(),
                    rng2.draw(crate::numerics::rng::DrawDistribution::StandardNormal, &[1, 2, 4]),
                );
            } else {
                bindings.insert("x".to_string(), NdArray::zeros(&[1, 2, 4]));
            }
            forward_graph(&Arc::new(graph), &bindings, &[out]).unwrap().remove(0)
        };
        assert!(build(false).data().iter().all(|&v| v == 0.0));
        assert!(build(true).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn both_ffns_pass_gradcheck() {
        let cfg = tiny_cfg();
        for which in ["gelu", "swiglu"] {
            let report = gradcheck(
                |g| {
                    let mut b = BlockBuilder {
                        graph: std::mem::take(g),
                        specs: vec![],
                    };
                    let x = b.graph.leaf("x", &[2, 3, 4], true);
                    let out = if which == "gelu" {
                        let p = GeluMlpParams::declare(&mut b, "ffn", &cfg);
                        gelu_mlp(&mut b.graph, x, &p)?
                    } else {
                        let p = SwigluParams::declare(&mut b, "ffn", &cfg);
                        swiglu_ffn(&mut b.graph, x, &p)?
                    };
                    let sq = b.graph.mul(out, out)?;
                    let loss = b.graph.reduce_mean(sq, &[0, 1, 2], false)?;
                    *g = b.graph;
                    Ok(loss)
                },
                default_init,
                &GradCheckConfig::default(),
                21,
            )
            .unwrap();
            assert!(report.pass, "{which}: max rel error {}", report.max_rel_error);
        }
    }
}

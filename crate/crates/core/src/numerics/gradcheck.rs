//! Central finite-difference verification of reverse-mode gradients.
//!
//! Always runs in f64. The relative error of a coordinate is
//! |analytic - fd| / max(|analytic| + |fd|, floor); the floor turns the check
//! into an absolute one for near-zero gradients, where finite differences
//! carry ~1e-9 of roundoff noise.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::Result;
use crate::numerics::array::NdArray;
use crate::numerics::exec::GraphExec;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng::{DrawDistribution, RngStream};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Max allowed relative error.
    pub tolerance: f64,
    /// Random restarts; each draws fresh leaf values.
    pub seeds: usize,
    /// Cap on checked coordinates per leaf (deterministically subsampled);
    /// None checks every coordinate.
    pub max_coords_per_leaf: Option<usize>,
    /// Denominator floor of the relative error.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tolerance: 1e-4,
            seeds: 10,
            max_coords_per_leaf: None,
            denom_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    /// Leaf holding the worst coordinate.
    pub worst_leaf: Option<String>,
    /// Total coordinates compared.
    pub checks: usize,
}

/// Default leaf initializer: N(0, 0.5).
pub fn default_init(_name: &str, shape: &[usize], rng: &mut RngStream) -> NdArray<f64> {
    let mut v = rng.draw(DrawDistribution::StandardNormal, shape);
    for x in v.data_mut() {
        *x *= 0.5;
    }
    v
}

/// Compare reverse-mode gradients of a scalar loss against central finite
/// differences over randomized inputs.
///
/// `build` assembles the loss graph; every trainable leaf is checked. `init`
/// provides leaf values per seed (see [`default_init`]).
pub fn gradcheck(
    build: impl Fn(&mut Graph) -> Result<NodeId>,
    init: impl Fn(&str, &[usize], &mut RngStream) -> NdArray<f64>,
    cfg: &GradCheckConfig,
    base_seed: u64,
) -> Result<GradCheckReport> {
    let mut graph = Graph::new();
    let loss = build(&mut graph)?;
    let graph = Arc::new(graph);
    let mut exec = GraphExec::<f64>::new(Arc::clone(&graph));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        pass: true,
        worst_leaf: None,
        checks: 0,
    };

    for seed in 0..cfg.seeds {
        let mut rng = RngStream::new(base_seed, seed as u64);
        let mut bindings: BTreeMap<String, NdArray<f64>> = BTreeMap::new();
        for (name, id) in graph.leaves() {
            bindings.insert(name.clone(), init(name, graph.shape(*id), &mut rng));
        }

        exec.forward(&bindings)?;
        exec.backward(loss)?;
        let analytic: Vec<(String, NodeId, NdArray<f64>)> = graph
            .trainable_leaves()
            .into_iter()
            .map(|(name, id)| {
                let g = exec.leaf_grad(id);
                (name, id, g)
            })
            .collect();

        for (name, id, grad) in &analytic {
            let n = graph.shape(*id).iter().product::<usize>();
            let coords: Vec<usize> = match cfg.max_coords_per_leaf {
                Some(cap) if n > cap => {
                    let mut pick_rng = rng.substream(0xC0_0D + *id as u64);
                    pick_rng.choose_distinct(n, cap)
                }
                _ => (0..n).collect(),
            };
            for &c in &coords {
                let fd = central_difference(&mut exec, &mut bindings, loss, name, c, cfg.h)?;
                let a = grad.data()[c];
                let rel = rel_error(a, fd, cfg.denom_floor);
                report.checks += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst_leaf = Some(name.clone());
                }
            }
        }
    }
    report.pass = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}

fn central_difference(
    exec: &mut GraphExec<f64>,
    bindings: &mut BTreeMap<String, NdArray<f64>>,
    loss: NodeId,
    leaf: &str,
    coord: usize,
    h: f64,
) -> Result<f64> {
    let original = bindings.get(leaf).expect("leaf bound").data()[coord];
    bindings.get_mut(leaf).unwrap().data_mut()[coord] = original + h;
    exec.forward_upto(bindings, loss)?;
    let f_plus = exec.value(loss).scalar_value();
    bindings.get_mut(leaf).unwrap().data_mut()[coord] = original - h;
    exec.forward_upto(bindings, loss)?;
    let f_minus = exec.value(loss).scalar_value();
    bindings.get_mut(leaf).unwrap().data_mut()[coord] = original;
    Ok((f_plus - f_minus) / (2.0 * h))
}

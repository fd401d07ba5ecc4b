//! Rotary positional embedding.

use crate::error::{CoreError, Result};
use crate::numerics::array::NdArray;
use crate::numerics::graph::{Graph, NodeId};

/// Rotate adjacent coordinate pairs of per-head vectors by
/// angle = position * base^(-2i/head_dim).
///
/// `x` has shape (batch, heads, time, head_dim) with even head_dim;
/// `positions` gives the absolute position of each time step.
pub fn rope_apply(g: &mut Graph, x: NodeId, positions: &[usize], base: f64) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(CoreError::shape(
            "rope_apply",
            format!("expected (batch, heads, time, head_dim), got {shape:?}"),
        ));
    }
    let (t_len, hd) = (shape[2], shape[3]);
    if hd % 2 != 0 {
        return Err(CoreError::shape(
            "rope_apply",
            format!("head_dim {hd} must be even"),
        ));
    }
    if positions.len() != t_len {
        return Err(CoreError::shape(
            "rope_apply",
            format!("{} positions for {} time steps", positions.len(), t_len),
        ));
    }
    let half = hd / 2;
    let mut cos = NdArray::<f64>::zeros(&[t_len, half]);
    let mut sin = NdArray::<f64>::zeros(&[t_len, half]);
    for (t, &pos) in positions.iter().enumerate() {
        for i in 0..half {
            let inv_freq = base.powf(-2.0 * i as f64 / hd as f64);
            let angle = pos as f64 * inv_freq;
            cos.data_mut()[t * half + i] = angle.cos();
            sin.data_mut()[t * half + i] = angle.sin();
        }
    }
    let cos = g.constant(cos);
    let sin = g.constant(sin);

    let full: Vec<(usize, usize, usize)> = shape.iter().map(|&d| (0, d, 1)).collect();
    let mut even_ranges = full.clone();
    even_ranges[3] = (0, hd, 2);
    let mut odd_ranges = full;
    odd_ranges[3] = (1, hd, 2);
    let x_even = g.slice(x, &even_ranges)?;
    let x_odd = g.slice(x, &odd_ranges)?;

    // (cos, sin) broadcast from (time, half) over (batch, heads, time, half).
    let ec = g.mul(x_even, cos)?;
    let os = g.mul(x_odd, sin)?;
    let out_even = g.sub(ec, os)?;
    let es = g.mul(x_even, sin)?;
    let oc = g.mul(x_odd, cos)?;
    let out_odd = g.add(es, oc)?;

    // Re-interleave pairs: (..., half) -> (..., half, 1) -> concat -> (..., hd).
    let col = [shape[0], shape[1], t_len, half, 1];
    let e5 = g.reshape(out_even, &col)?;
    let o5 = g.reshape(out_odd, &col)?;
    let pairs = g.concat(&[e5, o5], 4)?;
    g.reshape(pairs, &[shape[0], shape[1], t_len, hd])
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::numerics::exec::forward_graph;
    use crate::numerics::rng::{DrawDistribution, RngStream};

    fn apply(v: &NdArray<f64>, positions: &[usize], base: f64) -> NdArray<f64> {
        let mut g = Graph::new();
        let x = g.leaf("x", v.shape(), false);
        let out = rope_apply(&mut g, x, positions, base).unwrap();
        forward_graph(
            &Arc::new(g),
            &BTreeMap::from([("x".to_string(), v.clone())]),
            &[out],
        )
        .unwrap()
        .remove(0)
    }

    #[test]
    fn position_zero_is_identity() {
        let mut rng = RngStream::new(5, 0);
        let v = rng.draw(DrawDistribution::StandardNormal, &[1, 1, 1, 8]);
        let out = apply(&v, &[0], 10_000.0);
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rotations_preserve_norms() {
        let mut rng = RngStream::new(6, 0);
        let v = rng.draw(DrawDistribution::StandardNormal, &[1, 1, 4, 16]);
        let out = apply(&v, &[3, 11, 25, 40], 10_000.0);
        for (row_in, row_out) in v.data().chunks(16).zip(out.data().chunks(16)) {
            let ni: f64 = row_in.iter().map(|x| x * x).sum::<f64>().sqrt();
            let no: f64 = row_out.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((ni - no).abs() < 1e-12, "{ni} vs {no}");
        }
    }

    #[test]
    fn inner_products_depend_only_on_position_differences() {
        let mut rng = RngStream::new(7, 0);
        let hd = 8;
        for trial in 0..100 {
            let q = rng.draw(DrawDistribution::StandardNormal, &[1, 1, 1, hd]);
            let k = rng.draw(DrawDistribution::StandardNormal, &[1, 1, 1, hd]);
            let m = rng.uniform_int(0, 64) as usize;
            let n = rng.uniform_int(0, 64) as usize;
            let s = rng.uniform_int(0, 64) as usize;
            let dot = |a: &NdArray<f64>, b: &NdArray<f64>| -> f64 {
                a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
            };
            let base_dot = dot(&apply(&q, &[m], 10_000.0), &apply(&k, &[n], 10_000.0));
            let shifted = dot(&apply(&q, &[m + s], 10_000.0), &apply(&k, &[n + s], 10_000.0));
            assert!(
                (base_dot - shifted).abs() < 1e-9,
                "trial {trial}: {base_dot} vs {shifted}"
            );
        }
    }

    #[test]
    fn odd_head_dim_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf("x", &[1, 1, 2, 7], false);
        assert!(rope_apply(&mut g, x, &[0, 1], 10_000.0).is_err());
    }
}

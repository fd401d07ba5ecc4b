//! Per-token normalizations.

use crate::error::Result;
use crate::numerics::graph::{Graph, NodeId};

/// Zero-mean unit-variance normalization over the last axis, then affine:
/// gain * (x - mean) / sqrt(var + eps) + bias.
pub fn layer_norm(g: &mut Graph, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
    let last = g.shape(x).len() - 1;
    let mu = g.reduce_mean(x, &[last], true)?;
    let centered = g.sub(x, mu)?;
    let sq = g.mul(centered, centered)?;
    let var = g.reduce_mean(sq, &[last], true)?;
    let var_eps = g.add_scalar(var, eps);
    let std = g.sqrt(var_eps);
    let normed = g.div(centered, std)?;
    let scaled = g.mul(normed, gain)?;
    g.add(scaled, bias)
}

/// Root-mean-square normalization over the last axis, then gain multiply.
/// No mean subtraction, no bias.
pub fn rms_norm(g: &mut Graph, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId> {
    let last = g.shape(x).len() - 1;
    let sq = g.mul(x, x)?;
    let ms = g.reduce_mean(sq, &[last], true)?;
    let ms_eps = g.add_scalar(ms, eps);
    let rms = g.sqrt(ms_eps);
    let normed = g.div(x, rms)?;
    g.mul(normed, gain)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use super::*;
    use crate::numerics::array::NdArray;
    use crate::numerics::exec::forward_graph;

    fn run_norm(
        build: impl Fn(&mut Graph, NodeId, NodeId, NodeId) -> Result<NodeId>,
        x: NdArray<f64>,
        gain: NdArray<f64>,
        bias: NdArray<f64>,
    ) -> NdArray<f64> {
        let mut g = Graph::new();
        let xn = g.leaf("x", x.shape(), false);
        let gn = g.leaf("gain", gain.shape(), false);
        let bn = g.leaf("bias", bias.shape(), false);
        let out = build(&mut g, xn, gn, bn).unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("x".to_string(), x);
        bindings.insert("gain".to_string(), gain);
        bindings.insert("bias".to_string(), bias);
        forward_graph(&Arc::new(g), &bindings, &[out]).unwrap().remove(0)
    }

    fn ln(x: NdArray<f64>, gain: NdArray<f64>, bias: NdArray<f64>, eps: f64) -> NdArray<f64> {
        run_norm(|g, x, gn, bn| layer_norm(g, x, gn, bn, eps), x, gain, bias)
    }

    fn vecarr(v: &[f64]) -> NdArray<f64> {
        NdArray::from_vec(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn layer_norm_fixes_unit_variance_input() {
        let out = ln(
            vecarr(&[1.0, -1.0]),
            NdArray::full(&[2], 1.0),
            NdArray::zeros(&[2]),
            1e-5,
        );
        assert!((out.data()[0] - 1.0).abs() < 1e-4);
        assert!((out.data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_maps_constant_token_to_bias() {
        let out = ln(
            vecarr(&[3.7, 3.7]),
            NdArray::full(&[2], 1.0),
            NdArray::zeros(&[2]),
            1e-5,
        );
        assert_eq!(out.data(), &[0.0, 0.0]);

        let out = ln(
            vecarr(&[0.4, -2.0]),
            NdArray::zeros(&[2]),
            NdArray::from_vec(vec![2], vec![5.0, -1.0]).unwrap(),
            1e-5,
        );
        assert_eq!(out.data(), &[5.0, -1.0]);
    }

    #[test]
    fn rms_norm_matches_hand_computation() {
        // x = (3, 4): rms = sqrt(25/2), so out = (3,4)/sqrt(12.5).
        let out = run_norm(
            |g, x, gn, _| rms_norm(g, x, gn, 0.0),
            vecarr(&[3.0, 4.0]),
            NdArray::full(&[2], 1.0),
            NdArray::zeros(&[2]),
        );
        let scale = 12.5f64.sqrt();
        assert!((out.data()[0] - 3.0 / scale).abs() < 1e-12);
        assert!((out.data()[1] - 4.0 / scale).abs() < 1e-12);
    }

    #[test]
    fn rms_norm_unit_rms_input_unchanged() {
        let out = run_norm(
            |g, x, gn, _| rms_norm(g, x, gn, 1e-12),
            vecarr(&[1.0, -1.0]),
            NdArray::full(&[2], 1.0),
            NdArray::zeros(&[2]),
        );
        assert!((out.data()[0] - 1.0).abs() < 1e-9);
        assert!((out.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn rms_norm_is_scale_invariant() {
        let x = vecarr(&[0.3, -1.2, 2.2, 0.9]);
        let mut scaled = x.clone();
        for v in scaled.data_mut() {
            *v *= 37.5;
        }
        let gain = NdArray::full(&[4], 1.0);
        let a = run_norm(
            |g, x, gn, _| rms_norm(g, x, gn, 1e-12),
            x,
            gain.clone(),
            NdArray::zeros(&[4]),
        );
        let b = run_norm(
            |g, x, gn, _| rms_norm(g, x, gn, 1e-12),
            scaled,
            gain,
            NdArray::zeros(&[4]),
        );
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_is_shift_and_scale_invariant() {
        let x = vecarr(&[0.3, -1.2, 2.2, 0.9]);
        let mut moved = x.clone();
        for v in moved.data_mut() {
            *v = *v * 11.0 + 4.5;
        }
        let gain = NdArray::full(&[4], 1.0);
        let a = ln(x, gain.clone(), NdArray::zeros(&[4]), 1e-12);
        let b = ln(moved, gain, NdArray::zeros(&[4]), 1e-12);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}

//! Prompt batches and their token embedding.

use crate::error::{CoreError, Result};
use crate::numerics::array::NdArray;

/// A batch of in-context regression prompts: inputs, targets, and the active
/// curriculum truncation. Coordinates beyond `active_dims` are exactly zero;
/// positions with zero `loss_mask` weight are excluded from losses and error
/// measurement.
#[derive(Debug, Clone)]
pub struct PromptBatch {
    /// (batch, n_points, input_dim)
    pub xs: NdArray<f64>,
    /// (batch, n_points, output_dim)
    pub ys: NdArray<f64>,
    pub active_points: usize,
    pub active_dims: usize,
    /// Per-position weights, length n_points. The default is 1 on the first
    /// `active_points` positions; associative-recall tasks instead mark only
    /// query positions.
    pub loss_mask: Vec<f64>,
}

impl PromptBatch {
    pub fn new(xs: NdArray<f64>, ys: NdArray<f64>, active_points: usize, active_dims: usize) -> Self {
        let n_points = xs.shape()[1];
        let loss_mask = (0..n_points)
            .map(|i| if i < active_points { 1.0 } else { 0.0 })
            .collect();
        PromptBatch {
            xs,
            ys,
            active_points,
            active_dims,
            loss_mask,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.xs.shape()[0]
    }

    pub fn n_points(&self) -> usize {
        self.xs.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.xs.shape()[2]
    }

    pub fn output_dim(&self) -> usize {
        self.ys.shape()[2]
    }

    /// Select a half-open range of prompts.
    pub fn slice_prompts(&self, start: usize, end: usize) -> PromptBatch {
        let (n, d, o) = (self.n_points(), self.input_dim(), self.output_dim());
        let count = end - start;
        let xs = NdArray::from_vec(
            vec![count, n, d],
            self.xs.data()[start * n * d..end * n * d].to_vec(),
        )
        .expect("contiguous prompt slice");
        let ys = NdArray::from_vec(
            vec![count, n, o],
            self.ys.data()[start * n * o..end * n * o].to_vec(),
        )
        .expect("contiguous prompt slice");
        PromptBatch {
            xs,
            ys,
            active_points: self.active_points,
            active_dims: self.active_dims,
            loss_mask: self.loss_mask.clone(),
        }
    }
}

/// Interleave a prompt batch into the token sequence
/// x_0, y_0, x_1, y_1, ... of shape (batch, 2 n_points, input_dim).
///
/// Scalar targets occupy coordinate 0 of their token with the remaining
/// coordinates zero; vector targets (output_dim == input_dim) fill the whole
/// token. The model's prediction for f(x_i) is read at the position of the
/// x_i token.
pub fn embed_prompt(batch: &PromptBatch) -> Result<NdArray<f64>> {
    let (b, n, d, o) = (
        batch.batch_size(),
        batch.n_points(),
        batch.input_dim(),
        batch.output_dim(),
    );
    if o > d {
        return Err(CoreError::shape(
            "embed_prompt",
            format!("output_dim {o} exceeds input_dim {d}"),
        ));
    }
    let mut tokens = NdArray::<f64>::zeros(&[b, 2 * n, d]);
    let (xs, ys) = (batch.xs.data(), batch.ys.data());
    let td = tokens.data_mut();
    for bi in 0..b {
        for i in 0..n {
            let x_src = (bi * n + i) * d;
            let x_dst = (bi * 2 * n + 2 * i) * d;
            td[x_dst..x_dst + d].copy_from_slice(&xs[x_src..x_src + d]);
            let y_src = (bi * n + i) * o;
            let y_dst = (bi * 2 * n + 2 * i + 1) * d;
            td[y_dst..y_dst + o].copy_from_slice(&ys[y_src..y_src + o]);
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_interleaves_to_two_tokens() {
        let xs = NdArray::from_vec(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let ys = NdArray::from_vec(vec![1, 1, 1], vec![9.0]).unwrap();
        let batch = PromptBatch::new(xs, ys, 1, 3);
        let tokens = embed_prompt(&batch).unwrap();
        assert_eq!(tokens.shape(), &[1, 2, 3]);
        assert_eq!(&tokens.data()[0..3], &[1.0, 2.0, 3.0]);
        assert_eq!(&tokens.data()[3..6], &[9.0, 0.0, 0.0]);
    }

    #[test]
    fn scalar_target_pads_with_zeros() {
        let xs = NdArray::zeros(&[1, 1, 4]);
        let ys = NdArray::from_vec(vec![1, 1, 1], vec![3.5]).unwrap();
        let batch = PromptBatch::new(xs, ys, 1, 4);
        let tokens = embed_prompt(&batch).unwrap();
        assert_eq!(&tokens.data()[4..8], &[3.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn vector_target_fills_whole_token() {
        let d = 20;
        let xs = NdArray::zeros(&[1, 1, d]);
        let yvals: Vec<f64> = (0..d).map(|i| i as f64).collect();
        let ys = NdArray::from_vec(vec![1, 1, d], yvals.clone()).unwrap();
        let batch = PromptBatch::new(xs, ys, 1, d);
        let tokens = embed_prompt(&batch).unwrap();
        assert_eq!(&tokens.data()[d..2 * d], yvals.as_slice());
    }

    #[test]
    fn oversized_targets_are_rejected() {
        let xs = NdArray::zeros(&[1, 1, 2]);
        let ys = NdArray::zeros(&[1, 1, 3]);
        let batch = PromptBatch::new(xs, ys, 1, 2);
        assert!(embed_prompt(&batch).is_err());
    }
}

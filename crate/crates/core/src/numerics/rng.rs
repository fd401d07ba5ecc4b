//! Seeded, stream-addressable randomness.
//!
//! One fixed counter-based generator is used everywhere: ChaCha8 as
//! implemented by `rand_chacha` (version pinned in Cargo.lock). A draw is
//! fully determined by `(seed, stream, word position)`; distinct stream ids
//! yield independent sequences (a documented property of the ChaCha stream
//! construction). All draws are produced in f64 regardless of the training
//! precision, so task data is identical across f32 and f64 runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::array::NdArray;

/// Supported sampling distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrawDistribution {
    StandardNormal,
    /// Uniform on [0, 1).
    UniformUnit,
    /// ±1 with equal probability.
    Rademacher,
    /// Uniform integer in [lo, hi) stored as a real value.
    UniformInt { lo: i64, hi: i64 },
    /// Uniform on the sphere of the given radius in the last-axis dimension.
    UniformSphere { radius: f64 },
}

/// Serializable snapshot of a stream's position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// 128-bit ChaCha word position, hex-encoded.
    pub word_pos: String,
}

/// A seeded ChaCha8 stream. `(seed, stream)` fully determines the sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A new independent stream derived from this stream's seed and an id.
    /// Mixing keeps structurally assigned ids (purpose, shard, prompt index)
    /// from colliding.
    pub fn substream(&self, id: u64) -> RngStream {
        RngStream::new(self.seed, mix(self.stream, id))
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: format!("{:032x}", self.rng.get_word_pos()),
        }
    }

    pub fn restore(state: &RngState) -> Result<Self> {
        let mut s = RngStream::new(state.seed, state.stream);
        let pos = u128::from_str_radix(&state.word_pos, 16)
            .map_err(|e| CoreError::InvalidArgument(format!("bad rng word_pos: {e}")))?;
        s.rng.set_word_pos(pos);
        Ok(s)
    }

    pub fn normal_f64(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        self.rng.random_range(lo..hi)
    }

    pub fn rademacher(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }

    /// `k` distinct values sampled uniformly from `0..n`.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} distinct values from {n}");
        let mut perm = self.permutation(n);
        perm.truncate(k);
        perm
    }

    /// Draw an array from `dist`. For `UniformSphere` the last axis is the
    /// ambient dimension and each last-axis vector is normalized to the
    /// requested radius.
    pub fn draw(&mut self, dist: DrawDistribution, shape: &[usize]) -> NdArray<f64> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match dist {
            DrawDistribution::StandardNormal => {
                for _ in 0..n {
                    data.push(self.normal_f64());
                }
            }
            DrawDistribution::UniformUnit => {
                for _ in 0..n {
                    data.push(self.uniform_f64());
                }
            }
            DrawDistribution::Rademacher => {
                for _ in 0..n {
                    data.push(self.rademacher());
                }
            }
            DrawDistribution::UniformInt { lo, hi } => {
                for _ in 0..n {
                    data.push(self.uniform_int(lo, hi) as f64);
                }
            }
            DrawDistribution::UniformSphere { radius } => {
                let d = *shape.last().expect("sphere draw needs at least one axis");
                assert!(d > 0, "sphere dimension must be positive");
                for _ in 0..n / d {
                    loop {
                        let v: Vec<f64> = (0..d).map(|_| self.normal_f64()).collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 1e-12 {
                            data.extend(v.iter().map(|x| x * radius / norm));
                            break;
                        }
                    }
                }
            }
        }
        NdArray::from_vec(shape.to_vec(), data).expect("draw length matches shape")
    }
}

/// splitmix64-style mixing of a stream id with a purpose/index id.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b)
        .wrapping_add(0x243f_6a88_85a3_08d3);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

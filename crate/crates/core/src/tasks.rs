//! Samplers for the six function classes and the training curriculum.
//!
//! Every sampler is deterministic given its stream: a batch draws
//! per-prompt parameters and inputs in prompt order.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::prompt::PromptBatch;
use crate::numerics::array::NdArray;
use crate::numerics::rng::{DrawDistribution, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Linear,
    SparseLinear,
    Mlp2,
    DecisionTree,
    SparseParity,
    VectorMqar,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Linear,
        TaskKind::SparseLinear,
        TaskKind::Mlp2,
        TaskKind::DecisionTree,
        TaskKind::SparseParity,
        TaskKind::VectorMqar,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Linear => "linear",
            TaskKind::SparseLinear => "sparse-linear",
            TaskKind::Mlp2 => "mlp2",
            TaskKind::DecisionTree => "decision-tree",
            TaskKind::SparseParity => "sparse-parity",
            TaskKind::VectorMqar => "vector-mqar",
        }
    }

    /// The four original function classes train under the curriculum; the
    /// two newer ones never do.
    pub fn supports_curriculum(&self) -> bool {
        !matches!(self, TaskKind::SparseParity | TaskKind::VectorMqar)
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| CoreError::Task(format!("unknown task '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub input_dim: usize,
    pub n_points: usize,
    /// Nonzero coordinates for the sparse tasks.
    pub sparsity: usize,
    pub mlp_width: usize,
    pub tree_depth: usize,
}

impl TaskSpec {
    /// Table-of-tasks defaults per kind.
    pub fn defaults(kind: TaskKind) -> Self {
        let (input_dim, n_points) = match kind {
            TaskKind::Linear | TaskKind::SparseLinear => (20, 41),
            TaskKind::Mlp2 | TaskKind::DecisionTree => (20, 101),
            TaskKind::SparseParity => (10, 140),
            TaskKind::VectorMqar => (20, 128),
        };
        let sparsity = match kind {
            TaskKind::SparseLinear => 3,
            TaskKind::SparseParity => 2,
            _ => input_dim,
        };
        TaskSpec {
            kind,
            input_dim,
            n_points,
            sparsity,
            mlp_width: 100,
            tree_depth: 4,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            TaskKind::VectorMqar => self.input_dim,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_points == 0 {
            return Err(CoreError::Task("input_dim and n_points must be positive".into()));
        }
        match self.kind {
            TaskKind::SparseLinear | TaskKind::SparseParity => {
                if self.sparsity == 0 || self.sparsity > self.input_dim {
                    return Err(CoreError::Task(format!(
                        "sparsity {} out of range 1..={}",
                        self.sparsity, self.input_dim
                    )));
                }
            }
            TaskKind::Mlp2 => {
                if self.mlp_width == 0 {
                    return Err(CoreError::Task("mlp width must be positive".into()));
                }
            }
            TaskKind::DecisionTree => {
                if self.tree_depth == 0 {
                    return Err(CoreError::Task("tree depth must be positive".into()));
                }
            }
            TaskKind::VectorMqar => {
                if self.n_points % 2 != 0 {
                    return Err(CoreError::Task("vector-mqar needs an even n_points".into()));
                }
            }
            TaskKind::Linear => {}
        }
        Ok(())
    }
}

/// Full binary decision tree in heap layout: node i branches to 2i+1 (left,
/// taken when x[coord] < 0) and 2i+2.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    /// 2^depth - 1 split coordinates (0-based).
    pub split_coords: Vec<usize>,
    /// 2^depth leaf values.
    pub leaf_values: Vec<f64>,
    pub depth: usize,
}

impl DecisionTree {
    /// Split coordinates are sampled independently and uniformly (with
    /// replacement); leaf values are standard normal.
    pub fn sample(rng: &mut RngStream, depth: usize, input_dim: usize) -> Self {
        let n_splits = (1 << depth) - 1;
        let split_coords = (0..n_splits)
            .map(|_| rng.uniform_int(0, input_dim as i64) as usize)
            .collect();
        let leaf_values = (0..(1 << depth)).map(|_| rng.normal_f64()).collect();
        DecisionTree {
            split_coords,
            leaf_values,
            depth,
        }
    }

    /// Index of the leaf `x` lands in; visits exactly `depth` split nodes.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0usize;
        for _ in 0..self.depth {
            let coord = self.split_coords[node];
            node = if x[coord] < 0.0 { 2 * node + 1 } else { 2 * node + 2 };
        }
        node - self.split_coords.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.leaf_values[self.leaf_index(x)]
    }
}

/// Per-prompt function parameters, returned for oracle tests.
#[derive(Debug, Clone)]
pub enum TaskTheta {
    Linear { w: Vec<f64> },
    Mlp { w1: NdArray<f64>, w2: Vec<f64> },
    Tree(DecisionTree),
    Parity { coords: Vec<usize> },
    Mqar,
}

/// Draw prompt inputs: per-task x distribution with coordinates at or beyond
/// `active_dims` zeroed (curriculum truncation).
pub fn sample_xs(
    spec: &TaskSpec,
    batch: usize,
    rng: &mut RngStream,
    active_dims: usize,
) -> Result<NdArray<f64>> {
    if active_dims > spec.input_dim {
        return Err(CoreError::Task(format!(
            "active_dims {} exceeds input_dim {}",
            active_dims, spec.input_dim
        )));
    }
    let shape = [batch, spec.n_points, spec.input_dim];
    let mut xs = match spec.kind {
        TaskKind::Linear | TaskKind::SparseLinear | TaskKind::Mlp2 | TaskKind::DecisionTree => {
            rng.draw(DrawDistribution::StandardNormal, &shape)
        }
        TaskKind::SparseParity => rng.draw(DrawDistribution::Rademacher, &shape),
        TaskKind::VectorMqar => rng.draw(
            DrawDistribution::UniformSphere {
                radius: (spec.input_dim as f64).sqrt(),
            },
            &shape,
        ),
    };
    if active_dims < spec.input_dim {
        let d = spec.input_dim;
        for chunk in xs.data_mut().chunks_mut(d) {
            for v in chunk[active_dims..].iter_mut() {
                *v = 0.0;
            }
        }
    }
    Ok(xs)
}

/// y_i = w^T x_i with w ~ N(0, I_d), one w per prompt.
pub fn sample_linear(xs: &NdArray<f64>, rng: &mut RngStream) -> (NdArray<f64>, Vec<Vec<f64>>) {
    let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut ys = NdArray::<f64>::zeros(&[b, n, 1]);
    let mut ws = Vec::with_capacity(b);
    for bi in 0..b {
        let w: Vec<f64> = (0..d).map(|_| rng.normal_f64()).collect();
        for i in 0..n {
            let row = &xs.data()[(bi * n + i) * d..(bi * n + i + 1) * d];
            ys.data_mut()[bi * n + i] = dot(row, &w);
        }
        ws.push(w);
    }
    (ys, ws)
}

/// Like [`sample_linear`] but w is zeroed outside k uniformly chosen
/// coordinates.
pub fn sample_sparse_linear(
    xs: &NdArray<f64>,
    k: usize,
    rng: &mut RngStream,
) -> (NdArray<f64>, Vec<Vec<f64>>) {
    let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut ys = NdArray::<f64>::zeros(&[b, n, 1]);
    let mut ws = Vec::with_capacity(b);
    for bi in 0..b {
        let mut w: Vec<f64> = (0..d).map(|_| rng.normal_f64()).collect();
        let support = rng.choose_distinct(d, k);
        let mut keep = vec![false; d];
        for &c in &support {
            keep[c] = true;
        }
        for (c, v) in w.iter_mut().enumerate() {
            if !keep[c] {
                *v = 0.0;
            }
        }
        for i in 0..n {
            let row = &xs.data()[(bi * n + i) * d..(bi * n + i + 1) * d];
            ys.data_mut()[bi * n + i] = dot(row, &w);
        }
        ws.push(w);
    }
    (ys, ws)
}

/// y = W2 ReLU(W1 x), entries standard normal, no biases.
pub fn sample_mlp2(
    xs: &NdArray<f64>,
    width: usize,
    rng: &mut RngStream,
) -> (NdArray<f64>, Vec<(NdArray<f64>, Vec<f64>)>) {
    let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut ys = NdArray::<f64>::zeros(&[b, n, 1]);
    let mut thetas = Vec::with_capacity(b);
    for bi in 0..b {
        let w1 = rng.draw(DrawDistribution::StandardNormal, &[width, d]);
        let w2: Vec<f64> = (0..width).map(|_| rng.normal_f64()).collect();
        for i in 0..n {
            let row = &xs.data()[(bi * n + i) * d..(bi * n + i + 1) * d];
            ys.data_mut()[bi * n + i] = mlp2_eval(&w1, &w2, row);
        }
        thetas.push((w1, w2));
    }
    (ys, thetas)
}

pub fn mlp2_eval(w1: &NdArray<f64>, w2: &[f64], x: &[f64]) -> f64 {
    let width = w1.shape()[0];
    let d = w1.shape()[1];
    let mut y = 0.0;
    for h in 0..width {
        let pre = dot(&w1.data()[h * d..(h + 1) * d], x);
        if pre > 0.0 {
            y += w2[h] * pre;
        }
    }
    y
}

/// One tree per prompt; y_i = tree(x_i).
pub fn sample_decision_tree_targets(
    xs: &NdArray<f64>,
    depth: usize,
    rng: &mut RngStream,
) -> (NdArray<f64>, Vec<DecisionTree>) {
    let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut ys = NdArray::<f64>::zeros(&[b, n, 1]);
    let mut trees = Vec::with_capacity(b);
    for bi in 0..b {
        let tree = DecisionTree::sample(rng, depth, d);
        for i in 0..n {
            let row = &xs.data()[(bi * n + i) * d..(bi * n + i + 1) * d];
            ys.data_mut()[bi * n + i] = tree.eval(row);
        }
        trees.push(tree);
    }
    (ys, trees)
}

/// y = prod over k distinct coordinates of entrywise-±1 inputs.
pub fn sample_sparse_parity(
    xs: &NdArray<f64>,
    k: usize,
    rng: &mut RngStream,
) -> (NdArray<f64>, Vec<Vec<usize>>) {
    let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut ys = NdArray::<f64>::zeros(&[b, n, 1]);
    let mut thetas = Vec::with_capacity(b);
    for bi in 0..b {
        let coords = rng.choose_distinct(d, k);
        for i in 0..n {
            let row = &xs.data()[(bi * n + i) * d..(bi * n + i + 1) * d];
            let mut y = 1.0;
            for &c in &coords {
                y *= row[c];
            }
            ys.data_mut()[bi * n + i] = y;
        }
        thetas.push(coords);
    }
    (ys, thetas)
}

/// Associative-recall prompts. 2N points are drawn from the sphere of radius
/// sqrt(d) and grouped randomly into N candidate key-value pairs; the first
/// n_points/2 sequence slots present fresh pairs and the second half
/// re-presents uniformly chosen first-half keys whose targets are the values
/// originally bound to them. Error is measured only at those query positions
/// (the loss mask).
pub fn sample_mqar(spec: &TaskSpec, batch: usize, rng: &mut RngStream) -> Result<PromptBatch> {
    let d = spec.input_dim;
    let n = spec.n_points;
    if n % 2 != 0 {
        return Err(CoreError::Task("vector-mqar needs an even n_points".into()));
    }
    let half = n / 2;
    let radius = (d as f64).sqrt();
    let mut xs = NdArray::<f64>::zeros(&[batch, n, d]);
    let mut ys = NdArray::<f64>::zeros(&[batch, n, d]);
    for bi in 0..batch {
        let points = rng.draw(DrawDistribution::UniformSphere { radius }, &[2 * n, d]);
        let grouping = rng.permutation(2 * n);
        // Candidate pairs (key j, value j); only the first `half` are shown.
        let key_of = |j: usize| -> &[f64] {
            let p = grouping[2 * j];
            &points.data()[p * d..(p + 1) * d]
        };
        let val_of = |j: usize| -> &[f64] {
            let p = grouping[2 * j + 1];
            &points.data()[p * d..(p + 1) * d]
        };
        for j in 0..half {
            if (0..j).any(|prev| key_of(prev) == key_of(j)) {
                return Err(CoreError::Task(
                    "duplicate key among fresh bindings".into(),
                ));
            }
            let xo = (bi * n + j) * d;
            let yo = (bi * n + j) * d;
            xs.data_mut()[xo..xo + d].copy_from_slice(key_of(j));
            ys.data_mut()[yo..yo + d].copy_from_slice(val_of(j));
        }
        for slot in half..n {
            let j = rng.uniform_int(0, half as i64) as usize;
            let xo = (bi * n + slot) * d;
            xs.data_mut()[xo..xo + d].copy_from_slice(key_of(j));
            ys.data_mut()[xo..xo + d].copy_from_slice(val_of(j));
        }
    }
    let mut batch_out = PromptBatch::new(xs, ys, n, d);
    batch_out.loss_mask = (0..n).map(|i| if i >= half { 1.0 } else { 0.0 }).collect();
    Ok(batch_out)
}

/// Curriculum schedule: active dimensions and points grow stepwise until the
/// task's full (d, N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub enabled: bool,
    pub start_dims: usize,
    pub dims_increment: usize,
    pub start_points: usize,
    pub points_increment: usize,
    pub interval_steps: u64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            enabled: true,
            start_dims: 5,
            dims_increment: 1,
            start_points: 11,
            points_increment: 2,
            interval_steps: 2000,
        }
    }
}

/// (active_dims, active_points) at a training step: monotone non-decreasing,
/// saturating at (d, N). Tasks without curriculum support always run at full
/// size.
pub fn curriculum_state(step: u64, schedule: &CurriculumSchedule, spec: &TaskSpec) -> (usize, usize) {
    if !schedule.enabled || !spec.kind.supports_curriculum() {
        return (spec.input_dim, spec.n_points);
    }
    let ticks = (step / schedule.interval_steps.max(1)) as usize;
    let dims = (schedule.start_dims + ticks * schedule.dims_increment).min(spec.input_dim);
    let points = (schedule.start_points + ticks * schedule.points_increment).min(spec.n_points);
    (dims.min(spec.input_dim), points.min(spec.n_points))
}

/// Sample a full prompt batch at the given curriculum state.
pub fn sample_batch(
    spec: &TaskSpec,
    batch: usize,
    rng: &mut RngStream,
    active_dims: usize,
    active_points: usize,
) -> Result<PromptBatch> {
    spec.validate()?;
    if spec.kind == TaskKind::VectorMqar {
        return sample_mqar(spec, batch, rng);
    }
    let xs = sample_xs(spec, batch, rng, active_dims)?;
    let (ys, _) = sample_targets(spec, &xs, rng)?;
    Ok(PromptBatch::new(xs, ys, active_points, active_dims))
}

/// Targets (and the drawn parameters) for pre-sampled inputs.
pub fn sample_targets(
    spec: &TaskSpec,
    xs: &NdArray<f64>,
    rng: &mut RngStream,
) -> Result<(NdArray<f64>, Vec<TaskTheta>)> {
    Ok(match spec.kind {
        TaskKind::Linear => {
            let (ys, ws) = sample_linear(xs, rng);
            (ys, ws.into_iter().map(|w| TaskTheta::Linear { w }).collect())
        }
        TaskKind::SparseLinear => {
            let (ys, ws) = sample_sparse_linear(xs, spec.sparsity, rng);
            (ys, ws.into_iter().map(|w| TaskTheta::Linear { w }).collect())
        }
        TaskKind::Mlp2 => {
            let (ys, thetas) = sample_mlp2(xs, spec.mlp_width, rng);
            (
                ys,
                thetas
                    .into_iter()
                    .map(|(w1, w2)| TaskTheta::Mlp { w1, w2 })
                    .collect(),
            )
        }
        TaskKind::DecisionTree => {
            let (ys, trees) = sample_decision_tree_targets(xs, spec.tree_depth, rng);
            (ys, trees.into_iter().map(TaskTheta::Tree).collect())
        }
        TaskKind::SparseParity => {
            let (ys, coords) = sample_sparse_parity(xs, spec.sparsity, rng);
            (
                ys,
                coords
                    .into_iter()
                    .map(|coords| TaskTheta::Parity { coords })
                    .collect(),
            )
        }
        TaskKind::VectorMqar => {
            return Err(CoreError::Task(
                "vector-mqar couples inputs and targets; use sample_batch".into(),
            ))
        }
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

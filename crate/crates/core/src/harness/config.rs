//! Experiment configuration: TOML schema, task-specific defaults, and
//! resolution.
//!
//! Precedence when resolving: explicit file value > task-specific override >
//! base default. Task overrides: sparse-parity trains at lr 4e-4 for 200k
//! steps; vector-mqar uses embed 128, 2 layers, lr 2e-4. Curriculum applies
//! only to the four original function classes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineKind, BaselineSpec};
use crate::blocks::BlockConfig;
use crate::error::{CoreError, Result};
use crate::models::arch::{ArchitectureSpec, VariantId};
use crate::numerics::adam::AdamConfig;
use crate::numerics::array::Precision;
use crate::tasks::{CurriculumSchedule, TaskKind, TaskSpec};

// ---------------------------------------------------------------------------
// raw (file) schema: everything optional except model.variant and task.kind
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    task: RawTask,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    eval: RawEval,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    variant: Option<String>,
    n_layers: Option<usize>,
    embed_dim: Option<usize>,
    n_heads: Option<usize>,
    max_seq_len: Option<usize>,
    mamba_layer_multiplier: Option<usize>,
    ffn_hidden_dim: Option<usize>,
    swiglu_hidden_dim: Option<usize>,
    mamba_state_dim: Option<usize>,
    mamba_conv_kernel: Option<usize>,
    mamba_expand: Option<usize>,
    mamba_dt_rank: Option<usize>,
    rope_base: Option<f64>,
    norm_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    kind: Option<String>,
    input_dim: Option<usize>,
    n_points: Option<usize>,
    sparsity: Option<usize>,
    mlp_width: Option<usize>,
    tree_depth: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    steps: Option<u64>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    grad_clip: Option<f64>,
    weight_decay: Option<f64>,
    curriculum: Option<bool>,
    curriculum_start_dims: Option<usize>,
    curriculum_dims_increment: Option<usize>,
    curriculum_start_points: Option<usize>,
    curriculum_points_increment: Option<usize>,
    curriculum_interval_steps: Option<u64>,
    seed: Option<u64>,
    checkpoint_every: Option<u64>,
    log_interval: Option<u64>,
    precision: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    n_prompts: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    baseline: Option<String>,
    lasso_alpha: Option<f64>,
    nn_steps: Option<u64>,
    nn_lr: Option<f64>,
    nn_width: Option<usize>,
    baseline_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// resolved schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub variant: VariantId,
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub mamba_layer_multiplier: usize,
    pub block: BlockConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub curriculum: CurriculumSchedule,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_interval: u64,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub n_prompts: usize,
    pub seed: u64,
    pub threads: usize,
    pub baseline: BaselineSpec,
}

/// Fully resolved experiment description; every run writes this next to its
/// outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub task: TaskSpec,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn arch_spec(&self) -> ArchitectureSpec {
        ArchitectureSpec {
            variant: self.model.variant,
            n_layers: self.model.n_layers,
            embed_dim: self.model.embed_dim,
            n_heads: self.model.n_heads,
            task_input_dim: self.task.input_dim,
            output_dim: self.task.output_dim(),
            max_seq_len: self.model.max_seq_len,
            mamba_layer_multiplier: self.model.mamba_layer_multiplier,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Config(format!("serialize: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(format!("parse resolved config: {e}")))
    }

    /// Hex SHA-256 of the resolved TOML form.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.arch_spec().validate()?;
        self.model.block.validate()?;
        if self.train.batch_size == 0 {
            return Err(CoreError::Config("train.batch_size must be positive".into()));
        }
        if self.eval.n_prompts < 2 {
            return Err(CoreError::Config("eval.n_prompts must be at least 2".into()));
        }
        Ok(())
    }
}

/// Parse a user-written config file and fill defaults.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    // A resolved config (written by a previous run) parses as-is.
    if let Ok(resolved) = ExperimentConfig::from_toml(text) {
        resolved.validate()?;
        return Ok(resolved);
    }
    let raw: RawConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let kind: TaskKind = raw
        .task
        .kind
        .as_deref()
        .ok_or_else(|| CoreError::Config("task.kind is required".into()))?
        .parse()?;
    let variant: VariantId = raw
        .model
        .variant
        .as_deref()
        .ok_or_else(|| CoreError::Config("model.variant is required".into()))?
        .parse()?;

    let task_defaults = TaskSpec::defaults(kind);
    let task = TaskSpec {
        kind,
        input_dim: raw.task.input_dim.unwrap_or(task_defaults.input_dim),
        n_points: raw.task.n_points.unwrap_or(task_defaults.n_points),
        sparsity: raw.task.sparsity.unwrap_or(task_defaults.sparsity),
        mlp_width: raw.task.mlp_width.unwrap_or(task_defaults.mlp_width),
        tree_depth: raw.task.tree_depth.unwrap_or(task_defaults.tree_depth),
    };

    // Task-specific training overrides, then desk-scale base defaults.
    let (lr_default, steps_default) = match kind {
        TaskKind::SparseParity => (4e-4, 200_000),
        TaskKind::VectorMqar => (2e-4, 20_000),
        _ => (1e-4, 20_000),
    };
    let (embed_default, layers_default) = match kind {
        TaskKind::VectorMqar => (128, 2),
        _ => (64, 3),
    };

    let embed_dim = raw.model.embed_dim.unwrap_or(embed_default);
    let n_heads = raw.model.n_heads.unwrap_or(2);
    let mut block = BlockConfig::for_embed(embed_dim, n_heads);
    if let Some(v) = raw.model.ffn_hidden_dim {
        block.ffn_hidden_dim = v;
    }
    if let Some(v) = raw.model.swiglu_hidden_dim {
        block.swiglu_hidden_dim = v;
    }
    if let Some(v) = raw.model.mamba_state_dim {
        block.mamba_state_dim = v;
    }
    if let Some(v) = raw.model.mamba_conv_kernel {
        block.mamba_conv_kernel = v;
    }
    if let Some(v) = raw.model.mamba_expand {
        block.mamba_expand = v;
    }
    if let Some(v) = raw.model.mamba_dt_rank {
        block.mamba_dt_rank = v;
    }
    if let Some(v) = raw.model.rope_base {
        block.rope_base = v;
    }
    if let Some(v) = raw.model.norm_epsilon {
        block.norm_epsilon = v;
    }

    let model = ModelSection {
        variant,
        n_layers: raw.model.n_layers.unwrap_or(layers_default),
        embed_dim,
        n_heads,
        max_seq_len: raw.model.max_seq_len.unwrap_or(2 * task.n_points),
        mamba_layer_multiplier: raw.model.mamba_layer_multiplier.unwrap_or(1),
        block,
    };

    let defaults_schedule = CurriculumSchedule::default();
    let curriculum = CurriculumSchedule {
        enabled: raw.train.curriculum.unwrap_or(kind.supports_curriculum()),
        start_dims: raw
            .train
            .curriculum_start_dims
            .unwrap_or(defaults_schedule.start_dims.min(task.input_dim)),
        dims_increment: raw
            .train
            .curriculum_dims_increment
            .unwrap_or(defaults_schedule.dims_increment),
        start_points: raw
            .train
            .curriculum_start_points
            .unwrap_or(defaults_schedule.start_points.min(task.n_points)),
        points_increment: raw
            .train
            .curriculum_points_increment
            .unwrap_or(defaults_schedule.points_increment),
        interval_steps: raw
            .train
            .curriculum_interval_steps
            .unwrap_or(defaults_schedule.interval_steps),
    };

    let train = TrainSection {
        steps: raw.train.steps.unwrap_or(steps_default),
        batch_size: raw.train.batch_size.unwrap_or(64),
        adam: AdamConfig {
            learning_rate: raw.train.learning_rate.unwrap_or(lr_default),
            beta1: raw.train.beta1.unwrap_or(0.9),
            beta2: raw.train.beta2.unwrap_or(0.999),
            epsilon: raw.train.epsilon.unwrap_or(1e-8),
            grad_clip: raw.train.grad_clip,
            weight_decay: raw.train.weight_decay.unwrap_or(0.0),
        },
        curriculum,
        seed: raw.train.seed.unwrap_or(0),
        checkpoint_every: raw.train.checkpoint_every.unwrap_or(1000),
        log_interval: raw.train.log_interval.unwrap_or(100),
        precision: match raw.train.precision.as_deref() {
            None => Precision::F32,
            Some(s) => s.parse()?,
        },
    };

    let baseline_kind = match raw.eval.baseline.as_deref() {
        None => BaselineSpec::default_kind_for(kind),
        Some("zero") => BaselineKind::Zero,
        Some("least-squares") => BaselineKind::LeastSquares,
        Some("lasso") => BaselineKind::Lasso,
        Some("nn-oracle") => BaselineKind::NnOracle,
        Some("checkpointed-model") => BaselineKind::CheckpointedModel,
        Some(other) => {
            return Err(CoreError::Config(format!(
                "eval.baseline '{other}' unknown; expected zero | least-squares | lasso | nn-oracle | checkpointed-model"
            )))
        }
    };
    let mut baseline = BaselineSpec::new(baseline_kind);
    if let Some(v) = raw.eval.lasso_alpha {
        baseline.lasso_alpha = v;
    }
    if let Some(v) = raw.eval.nn_steps {
        baseline.nn_steps = v;
    }
    if let Some(v) = raw.eval.nn_lr {
        baseline.nn_lr = v;
    }
    if let Some(v) = raw.eval.nn_width {
        baseline.nn_width = v;
    }
    baseline.checkpoint_path = raw.eval.baseline_checkpoint;

    let seed = train.seed;
    let eval = EvalSection {
        n_prompts: raw.eval.n_prompts.unwrap_or(1280),
        seed: raw.eval.seed.unwrap_or(seed.wrapping_add(1)),
        threads: raw.eval.threads.unwrap_or(1),
        baseline,
    };

    let output_dir = raw
        .output
        .dir
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-variant-{}", task.kind, model.variant)));

    let config = ExperimentConfig {
        model,
        task,
        train,
        eval,
        output_dir,
    };
    config.validate()?;
    Ok(config)
}

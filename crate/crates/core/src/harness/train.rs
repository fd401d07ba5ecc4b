//! Config-driven training: curriculum -> sample -> embed -> forward -> loss
//! -> backward -> Adam, with periodic checkpoints and a loss log. Fully
//! deterministic for a fixed seed in single-threaded mode.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::checkpoint::save_checkpoint;
use crate::models::model::{loss_bindings, Model};
use crate::numerics::adam::{adam_step, AdamState};
use crate::numerics::array::{NdArray, Precision, Real};
use crate::numerics::exec::{GraphExec, Layered};
use crate::numerics::graph::NodeId;
use crate::numerics::rng::RngStream;
use crate::tasks::{curriculum_state, sample_batch};

use super::config::ExperimentConfig;

pub const RUN_RECORD_FORMAT_VERSION: u32 = 1;
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const RUN_RECORD_FILE: &str = "runrecord.toml";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

/// Stream ids carved out of the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_SAMPLER: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub config_hash: String,
    pub steps_completed: u64,
    pub final_loss: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub loss_log_path: PathBuf,
    pub wall_seconds: f64,
    /// Set when a non-finite loss aborted the run; the last good checkpoint
    /// is retained.
    pub aborted: Option<String>,
}

/// Run one training job, writing the resolved config, checkpoints, loss log,
/// and run record under `out_dir`.
pub fn run_training(config: &ExperimentConfig, out_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;
    std::fs::write(out_dir.join(RESOLVED_CONFIG_FILE), config.to_toml()?)
        .map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;
    match config.train.precision {
        Precision::F32 => train_loop::<f32>(config, out_dir),
        Precision::F64 => train_loop::<f64>(config, out_dir),
    }
}

fn train_loop<F: Real>(config: &ExperimentConfig, out_dir: &Path) -> Result<RunRecord> {
    let started = Instant::now();
    let arch = config.arch_spec();
    let block = config.model.block;
    let task = config.task;
    let train = &config.train;

    let mut init_rng = RngStream::new(train.seed, STREAM_INIT);
    let mut sampler = RngStream::new(train.seed, STREAM_SAMPLER);
    let mut model: Model<F> = Model::build(arch, block, &mut init_rng)?;

    let built = model.built_graph(train.batch_size, task.n_points)?;
    let mut exec: GraphExec<F> = GraphExec::new(Arc::clone(&built.graph));
    let param_ids: Vec<(String, NodeId)> = built.graph.trainable_leaves();
    debug_assert_eq!(
        param_ids.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        model.params.names().iter().map(|s| s.as_str()).collect::<Vec<_>>()
    );
    let shapes: Vec<&[usize]> = model.params.arrays().iter().map(|a| a.shape()).collect();
    let mut adam = AdamState::<F>::new(train.adam, &shapes);

    let mut record = RunRecord {
        format_version: RUN_RECORD_FORMAT_VERSION,
        config_hash: config.hash()?,
        steps_completed: 0,
        final_loss: None,
        checkpoints: Vec::new(),
        loss_log_path: out_dir.join(LOSS_LOG_FILE),
        wall_seconds: 0.0,
        aborted: None,
    };
    let mut loss_log: Vec<(u64, f64)> = Vec::new();

    let ckpt_dir = out_dir.join("checkpoints");
    let save = |model: &Model<F>,
                    sampler: &RngStream,
                    step: u64,
                    record: &mut RunRecord|
     -> Result<()> {
        let dir = ckpt_dir.join(format!("step_{step}"));
        let snapshot = Model::from_params(model.arch, model.block_cfg, model.params.clone(), step);
        save_checkpoint(&dir, &snapshot, Some(sampler.state()))?;
        record.checkpoints.push(dir);
        Ok(())
    };

    if train.steps == 0 {
        save(&model, &sampler, 0, &mut record)?;
        finish(out_dir, &mut record, &loss_log, started)?;
        return Ok(record);
    }

    for step in 0..train.steps {
        let (active_dims, active_points) = curriculum_state(step, &train.curriculum, &task);
        let batch = sample_batch(&task, train.batch_size, &mut sampler, active_dims, active_points)?;
        let bindings = loss_bindings::<F>(&batch)?;

        let outcome: Result<f64> = (|| {
            exec.forward(&Layered(&bindings, &model.params))?;
            let loss = exec.value(built.io.loss).scalar_value().as_f64();
            exec.backward(built.io.loss)?;
            Ok(loss)
        })();
        let loss = match outcome {
            Ok(loss) => loss,
            Err(err) => {
                record.aborted = Some(err.to_string());
                finish(out_dir, &mut record, &loss_log, started)?;
                return Err(err);
            }
        };

        let grads: Vec<NdArray<F>> = param_ids
            .iter()
            .map(|&(_, id)| exec.leaf_grad(id))
            .collect();
        if let Err(err) = adam_step(model.params.arrays_mut(), &grads, &mut adam) {
            record.aborted = Some(err.to_string());
            finish(out_dir, &mut record, &loss_log, started)?;
            return Err(err);
        }

        if step % train.log_interval == 0 {
            loss_log.push((step, loss));
        }
        record.steps_completed = step + 1;
        record.final_loss = Some(loss);
        if (step + 1) % train.checkpoint_every == 0 {
            model.trained_steps = step + 1;
            save(&model, &sampler, step + 1, &mut record)?;
        }
    }

    if train.steps % train.checkpoint_every != 0 {
        model.trained_steps = train.steps;
        save(&model, &sampler, train.steps, &mut record)?;
    }
    finish(out_dir, &mut record, &loss_log, started)?;
    Ok(record)
}

fn finish(
    out_dir: &Path,
    record: &mut RunRecord,
    loss_log: &[(u64, f64)],
    started: Instant,
) -> Result<()> {
    let mut text = String::from("step,loss\n");
    for (step, loss) in loss_log {
        text.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(out_dir.join(LOSS_LOG_FILE), text)
        .map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;
    record.wall_seconds = started.elapsed().as_secs_f64();
    let toml_text = toml::to_string_pretty(record)
        .map_err(|e| CoreError::Config(format!("run record: {e}")))?;
    std::fs::write(out_dir.join(RUN_RECORD_FILE), toml_text)
        .map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;
    Ok(())
}

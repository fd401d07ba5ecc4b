//! Config-driven evaluation: model, baseline, and zero profiles on a shared
//! prompt set, plus the regression-score report and a rendered figure.

use std::path::{Path, PathBuf};

use crate::baselines::{CheckpointedPredictor, ZeroPredictor};
use crate::error::{CoreError, Result};
use crate::eval::{
    error_matrix, eval_prompts, regression_score, save_profile_csv, RegressionScore, ScoreReport,
};
use crate::numerics::rng::RngStream;

use super::config::ExperimentConfig;
use super::plot::render_profiles_svg;

const STREAM_EVAL_PROMPTS: u64 = 2;

#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub model_profile: PathBuf,
    pub baseline_profile: PathBuf,
    pub zero_profile: PathBuf,
    pub report: PathBuf,
    pub figure: PathBuf,
    pub score: RegressionScore,
}

/// Evaluate a checkpoint under the config's task against its baseline and
/// the zero estimator; write profile CSVs, the score report, and an SVG.
pub fn run_eval(
    config: &ExperimentConfig,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<EvalArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;
    std::fs::write(
        out_dir.join(super::train::RESOLVED_CONFIG_FILE),
        config.to_toml()?,
    )
    .map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;

    let task = config.task;
    let threads = config.eval.threads;
    let model_pred = CheckpointedPredictor::load(checkpoint.to_path_buf())?;
    let arch = model_pred.model().arch();
    if arch.task_input_dim != task.input_dim || arch.output_dim != task.output_dim() {
        return Err(CoreError::Eval(format!(
            "checkpoint dims ({}, {}) incompatible with task '{}' dims ({}, {})",
            arch.task_input_dim,
            arch.output_dim,
            task.kind,
            task.input_dim,
            task.output_dim()
        )));
    }
    let step = model_pred.model().trained_steps();
    let baseline = config.eval.baseline.build()?;

    let mut rng = RngStream::new(config.eval.seed, STREAM_EVAL_PROMPTS);
    let prompts = eval_prompts(&task, config.eval.n_prompts, &mut rng)?;

    let model_profile = error_matrix(&model_pred, &prompts, &task, Some(step), threads)?.profile();
    let base_profile = error_matrix(baseline.as_ref(), &prompts, &task, None, threads)?.profile();
    let zero_profile = error_matrix(&ZeroPredictor, &prompts, &task, None, threads)?.profile();

    let score = regression_score(&model_profile, &base_profile, &zero_profile)?;

    let model_path = out_dir.join("profile_model.csv");
    let base_path = out_dir.join("profile_baseline.csv");
    let zero_path = out_dir.join("profile_zero.csv");
    save_profile_csv(&model_profile, &model_path)?;
    save_profile_csv(&base_profile, &base_path)?;
    save_profile_csv(&zero_profile, &zero_path)?;

    let report = ScoreReport {
        task: task.kind.to_string(),
        model_profile: model_path.display().to_string(),
        baseline_profile: base_path.display().to_string(),
        zero_profile: zero_path.display().to_string(),
        score: score.clone(),
    };
    let report_path = out_dir.join("score.toml");
    std::fs::write(&report_path, report.to_toml()?)
        .map_err(|e| CoreError::io(report_path.display().to_string(), e))?;

    let svg = render_profiles_svg(&[&model_profile, &base_profile, &zero_profile])?;
    let figure_path = out_dir.join("profiles.svg");
    std::fs::write(&figure_path, svg)
        .map_err(|e| CoreError::io(figure_path.display().to_string(), e))?;

    Ok(EvalArtifacts {
        model_profile: model_path,
        baseline_profile: base_path,
        zero_profile: zero_path,
        report: report_path,
        figure: figure_path,
        score,
    })
}

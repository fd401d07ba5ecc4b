//! Error profiles, confidence intervals, ICL regression scores, difference
//! profiles, and checkpoint sweeps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::baselines::Predictor;
use crate::error::{CoreError, Result};
use crate::models::checkpoint::read_manifest;
use crate::models::prompt::PromptBatch;
use crate::numerics::rng::RngStream;
use crate::tasks::{sample_batch, TaskSpec};

/// 99% two-sided normal quantile.
const Z_99: f64 = 2.576;

/// Per-prompt squared errors at every measured context length.
#[derive(Debug, Clone)]
pub struct ErrorMatrix {
    pub task: String,
    pub predictor: String,
    pub checkpoint_step: Option<u64>,
    /// Context lengths carrying error measurements (all of 0..N-1 except for
    /// recall tasks, which measure only query positions).
    pub context_indices: Vec<usize>,
    /// Row-major (n_prompts, context_indices.len()).
    pub errors: Vec<f64>,
    pub n_prompts: usize,
}

/// Mean squared error per context length with 99% confidence bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProfile {
    pub task: String,
    pub predictor: String,
    pub checkpoint_step: Option<u64>,
    pub context_indices: Vec<usize>,
    pub mean_sq_err: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_prompts: usize,
}

impl ErrorMatrix {
    /// Mean and normal-approximation CI (mean ± 2.576 std/sqrt(n)) per index.
    pub fn profile(&self) -> ErrorProfile {
        let m = self.context_indices.len();
        let n = self.n_prompts;
        let mut mean = vec![0.0; m];
        let mut ci_low = vec![0.0; m];
        let mut ci_high = vec![0.0; m];
        for j in 0..m {
            let mut sum = 0.0;
            for p in 0..n {
                sum += self.errors[p * m + j];
            }
            let mu = sum / n as f64;
            let mut var = 0.0;
            for p in 0..n {
                let dev = self.errors[p * m + j] - mu;
                var += dev * dev;
            }
            let std = if n > 1 { (var / (n - 1) as f64).sqrt() } else { 0.0 };
            let half = Z_99 * std / (n as f64).sqrt();
            mean[j] = mu;
            ci_low[j] = mu - half;
            ci_high[j] = mu + half;
        }
        ErrorProfile {
            task: self.task.clone(),
            predictor: self.predictor.clone(),
            checkpoint_step: self.checkpoint_step,
            context_indices: self.context_indices.clone(),
            mean_sq_err: mean,
            ci_low,
            ci_high,
            n_prompts: n,
        }
    }
}

/// A shared evaluation prompt set: full-size prompts (no curriculum).
pub fn eval_prompts(spec: &TaskSpec, n_prompts: usize, rng: &mut RngStream) -> Result<PromptBatch> {
    if n_prompts < 2 {
        return Err(CoreError::Eval("need at least 2 prompts".into()));
    }
    sample_batch(spec, n_prompts, rng, spec.input_dim, spec.n_points)
}

/// Evaluate a predictor at every context length of every prompt. Squared
/// error is the squared L2 norm over output coordinates. Prompts may be
/// sharded over `threads`; results are identical for any thread count.
pub fn error_matrix(
    predictor: &dyn Predictor,
    prompts: &PromptBatch,
    task: &TaskSpec,
    checkpoint_step: Option<u64>,
    threads: usize,
) -> Result<ErrorMatrix> {
    let n_prompts = prompts.batch_size();
    let n = prompts.n_points();
    let o = prompts.output_dim();
    let measured: Vec<usize> = (0..n).filter(|&i| prompts.loss_mask[i] > 0.0).collect();
    let m = measured.len();

    // Chunked so big-attention graphs stay within memory.
    let seq = 2 * n;
    let chunk = (2_000_000 / (seq * seq).max(1)).clamp(1, 128);
    let ranges: Vec<(usize, usize)> = (0..n_prompts)
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(n_prompts)))
        .collect();

    let mut errors = vec![0.0f64; n_prompts * m];
    let results: Mutex<Vec<(usize, Vec<f64>)>> = Mutex::new(Vec::with_capacity(ranges.len()));
    let next: AtomicUsize = AtomicUsize::new(0);
    let workers = threads.max(1).min(ranges.len().max(1));

    let compute_range = |start: usize, end: usize| -> Result<Vec<f64>> {
        let shard = prompts.slice_prompts(start, end);
        let preds = predictor.predict_batch(&shard, start)?;
        let mut out = vec![0.0f64; (end - start) * m];
        for (bi, row) in out.chunks_mut(m).enumerate() {
            for (j, &i) in measured.iter().enumerate() {
                let mut sq = 0.0;
                for oi in 0..o {
                    let idx = (bi * n + i) * o + oi;
                    let diff = preds.data()[idx] - shard.ys.data()[idx];
                    sq += diff * diff;
                }
                row[j] = sq;
            }
        }
        Ok(out)
    };

    if workers <= 1 {
        for &(start, end) in &ranges {
            let out = compute_range(start, end)?;
            errors[start * m..end * m].copy_from_slice(&out);
        }
    } else {
        let errs: Mutex<Vec<CoreError>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= ranges.len() {
                        break;
                    }
                    let (start, end) = ranges[idx];
                    match compute_range(start, end) {
                        Ok(out) => results.lock().unwrap().push((start, out)),
                        Err(e) => errs.lock().unwrap().push(e),
                    }
                });
            }
        });
        if let Some(e) = errs.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
        for (start, out) in results.into_inner().unwrap() {
            errors[start * m..start * m + out.len()].copy_from_slice(&out);
        }
    }

    Ok(ErrorMatrix {
        task: task.kind.to_string(),
        predictor: predictor.id(),
        checkpoint_step,
        context_indices: measured,
        errors,
        n_prompts,
    })
}

/// Sample `n_prompts` fresh prompts and profile a predictor on them.
pub fn error_profile(
    predictor: &dyn Predictor,
    spec: &TaskSpec,
    n_prompts: usize,
    rng: &mut RngStream,
    threads: usize,
) -> Result<ErrorProfile> {
    let prompts = eval_prompts(spec, n_prompts, rng)?;
    Ok(error_matrix(predictor, &prompts, spec, None, threads)?.profile())
}

/// The ICL regression score with its components.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionScore {
    /// sum_i (model_i - zero_i) / sum_i (base_i - zero_i); NaN when invalid.
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// False when |denominator| falls below 1e-9 * sum_i zero_i (degenerate
    /// baseline).
    pub valid: bool,
}

/// Proportion of the baseline's error saving achieved by the model, summed
/// over context lengths: 1 matches the baseline, 0 matches the zero
/// estimator, above 1 beats the baseline.
pub fn regression_score(
    model: &ErrorProfile,
    base: &ErrorProfile,
    zero: &ErrorProfile,
) -> Result<RegressionScore> {
    for p in [base, zero] {
        if p.context_indices != model.context_indices {
            return Err(CoreError::Eval(
                "profiles measure different context lengths".into(),
            ));
        }
        if p.task != model.task {
            return Err(CoreError::Eval(format!(
                "profiles mix tasks '{}' and '{}'",
                p.task, model.task
            )));
        }
        if p.n_prompts != model.n_prompts {
            return Err(CoreError::Eval(
                "profiles use different prompt counts".into(),
            ));
        }
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut zero_total = 0.0;
    for j in 0..model.context_indices.len() {
        numerator += model.mean_sq_err[j] - zero.mean_sq_err[j];
        denominator += base.mean_sq_err[j] - zero.mean_sq_err[j];
        zero_total += zero.mean_sq_err[j];
    }
    let floor = 1e-9 * zero_total;
    let valid = denominator.abs() >= floor;
    Ok(RegressionScore {
        value: if valid { numerator / denominator } else { f64::NAN },
        numerator,
        denominator,
        valid,
    })
}

/// Per-context-length error difference A - B with a 99% CI.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceProfile {
    pub task: String,
    pub predictor_a: String,
    pub predictor_b: String,
    pub context_indices: Vec<usize>,
    pub mean_diff: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_prompts: usize,
}

/// Paired difference: both matrices must come from the same prompt set; the
/// CI is computed from per-prompt differences.
pub fn difference_profile_paired(a: &ErrorMatrix, b: &ErrorMatrix) -> Result<DifferenceProfile> {
    if a.task != b.task {
        return Err(CoreError::Eval(format!("task mismatch: {} vs {}", a.task, b.task)));
    }
    if a.context_indices != b.context_indices || a.n_prompts != b.n_prompts {
        return Err(CoreError::Eval("matrices are not paired".into()));
    }
    let diff = ErrorMatrix {
        task: a.task.clone(),
        predictor: format!("{} - {}", a.predictor, b.predictor),
        checkpoint_step: None,
        context_indices: a.context_indices.clone(),
        errors: a
            .errors
            .iter()
            .zip(&b.errors)
            .map(|(x, y)| x - y)
            .collect(),
        n_prompts: a.n_prompts,
    };
    let profile = diff.profile();
    Ok(DifferenceProfile {
        task: profile.task,
        predictor_a: a.predictor.clone(),
        predictor_b: b.predictor.clone(),
        context_indices: profile.context_indices,
        mean_diff: profile.mean_sq_err,
        ci_low: profile.ci_low,
        ci_high: profile.ci_high,
        n_prompts: profile.n_prompts,
    })
}

/// Unpaired difference of two profiles; the CI combines independent
/// variances recovered from each profile's interval width.
pub fn difference_profile(a: &ErrorProfile, b: &ErrorProfile) -> Result<DifferenceProfile> {
    if a.task != b.task {
        return Err(CoreError::Eval(format!("task mismatch: {} vs {}", a.task, b.task)));
    }
    if a.context_indices != b.context_indices {
        return Err(CoreError::Eval("profiles measure different context lengths".into()));
    }
    let m = a.context_indices.len();
    let mut mean_diff = vec![0.0; m];
    let mut ci_low = vec![0.0; m];
    let mut ci_high = vec![0.0; m];
    for j in 0..m {
        let d = a.mean_sq_err[j] - b.mean_sq_err[j];
        let ha = (a.ci_high[j] - a.ci_low[j]) / 2.0;
        let hb = (b.ci_high[j] - b.ci_low[j]) / 2.0;
        let half = (ha * ha + hb * hb).sqrt();
        mean_diff[j] = d;
        ci_low[j] = d - half;
        ci_high[j] = d + half;
    }
    Ok(DifferenceProfile {
        task: a.task.clone(),
        predictor_a: a.predictor.clone(),
        predictor_b: b.predictor.clone(),
        context_indices: a.context_indices.clone(),
        mean_diff,
        ci_low,
        ci_high,
        n_prompts: a.n_prompts.min(b.n_prompts),
    })
}

/// Profile every checkpoint of one run on an identical prompt set so the
/// profiles are comparable across training steps. All checkpoints must share
/// the architecture.
pub fn checkpoint_sweep(
    checkpoints: &[PathBuf],
    spec: &TaskSpec,
    n_prompts: usize,
    rng: &mut RngStream,
    threads: usize,
) -> Result<Vec<ErrorProfile>> {
    if checkpoints.is_empty() {
        return Err(CoreError::Eval("no checkpoints to sweep".into()));
    }
    let first = read_manifest(&checkpoints[0])?;
    for dir in &checkpoints[1..] {
        let manifest = read_manifest(dir)?;
        if manifest.arch != first.arch {
            return Err(CoreError::Eval(format!(
                "checkpoint {} has a different architecture",
                dir.display()
            )));
        }
    }
    let prompts = eval_prompts(spec, n_prompts, rng)?;
    let mut profiles = Vec::with_capacity(checkpoints.len());
    for dir in checkpoints {
        let predictor = crate::baselines::CheckpointedPredictor::load(dir.clone())?;
        let step = predictor.model().trained_steps();
        let matrix = error_matrix(&predictor, &prompts, spec, Some(step), threads)?;
        profiles.push(matrix.profile());
    }
    Ok(profiles)
}

/// Profile a checkpoint trained on one task under another task's sampler.
pub fn cross_task_eval(
    checkpoint: &Path,
    spec: &TaskSpec,
    n_prompts: usize,
    rng: &mut RngStream,
    threads: usize,
) -> Result<ErrorProfile> {
    let predictor = crate::baselines::CheckpointedPredictor::load(checkpoint.to_path_buf())?;
    let arch = predictor.model().arch();
    if arch.task_input_dim != spec.input_dim || arch.output_dim != spec.output_dim() {
        return Err(CoreError::Eval(format!(
            "checkpoint dims ({}, {}) incompatible with task '{}' dims ({}, {})",
            arch.task_input_dim,
            arch.output_dim,
            spec.kind,
            spec.input_dim,
            spec.output_dim()
        )));
    }
    let step = predictor.model().trained_steps();
    let prompts = eval_prompts(spec, n_prompts, rng)?;
    Ok(error_matrix(&predictor, &prompts, spec, Some(step), threads)?.profile())
}

// ---------------------------------------------------------------------------
// CSV schema: task, predictor, checkpoint_step, context_index, mean_sq_err,
// ci_low, ci_high, n_prompts
// ---------------------------------------------------------------------------

pub const PROFILE_CSV_HEADER: [&str; 8] = [
    "task",
    "predictor",
    "checkpoint_step",
    "context_index",
    "mean_sq_err",
    "ci_low",
    "ci_high",
    "n_prompts",
];

pub fn write_profile_csv(profile: &ErrorProfile, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| CoreError::Eval(format!("csv write: {e}"));
    w.write_record(PROFILE_CSV_HEADER).map_err(io_err)?;
    let step = profile
        .checkpoint_step
        .map(|s| s.to_string())
        .unwrap_or_default();
    for j in 0..profile.context_indices.len() {
        w.write_record([
            profile.task.as_str(),
            profile.predictor.as_str(),
            step.as_str(),
            &profile.context_indices[j].to_string(),
            &profile.mean_sq_err[j].to_string(),
            &profile.ci_low[j].to_string(),
            &profile.ci_high[j].to_string(),
            &profile.n_prompts.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CoreError::Eval(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn save_profile_csv(profile: &ErrorProfile, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_profile_csv(profile, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_profile_csv(path: &Path) -> Result<ErrorProfile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CoreError::Eval(format!("csv header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != PROFILE_CSV_HEADER {
        return Err(CoreError::Eval(format!(
            "unexpected profile header {headers:?} in {}",
            path.display()
        )));
    }
    let mut profile = ErrorProfile {
        task: String::new(),
        predictor: String::new(),
        checkpoint_step: None,
        context_indices: vec![],
        mean_sq_err: vec![],
        ci_low: vec![],
        ci_high: vec![],
        n_prompts: 0,
    };
    for record in rdr.records() {
        let r = record.map_err(|e| CoreError::Eval(format!("csv row: {e}")))?;
        let field = |i: usize| -> Result<&str> {
            r.get(i)
                .ok_or_else(|| CoreError::Eval(format!("short csv row in {}", path.display())))
        };
        profile.task = field(0)?.to_string();
        profile.predictor = field(1)?.to_string();
        profile.checkpoint_step = match field(2)? {
            "" => None,
            s => Some(s.parse().map_err(|e| CoreError::Eval(format!("bad step: {e}")))?),
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| CoreError::Eval(format!("bad number '{s}': {e}")))
        };
        profile
            .context_indices
            .push(field(3)?.parse().map_err(|e| CoreError::Eval(format!("bad index: {e}")))?);
        profile.mean_sq_err.push(parse(field(4)?)?);
        profile.ci_low.push(parse(field(5)?)?);
        profile.ci_high.push(parse(field(6)?)?);
        profile.n_prompts = field(7)?
            .parse()
            .map_err(|e| CoreError::Eval(format!("bad n_prompts: {e}")))?;
    }
    if profile.context_indices.is_empty() {
        return Err(CoreError::Eval(format!("empty profile in {}", path.display())));
    }
    Ok(profile)
}

/// Structured score report written next to profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: String,
    pub model_profile: String,
    pub baseline_profile: String,
    pub zero_profile: String,
    pub score: RegressionScore,
}

impl ScoreReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Eval(format!("report: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{LeastSquaresPredictor, ZeroPredictor};
    use crate::numerics::array::NdArray;
    use crate::tasks::TaskKind;

    fn profile_of(task: &str, values: &[f64]) -> ErrorProfile {
        ErrorProfile {
            task: task.to_string(),
            predictor: "test".to_string(),
            checkpoint_step: None,
            context_indices: (0..values.len()).collect(),
            mean_sq_err: values.to_vec(),
            ci_low: values.to_vec(),
            ci_high: values.to_vec(),
            n_prompts: 100,
        }
    }

    #[test]
    fn score_identities_hold_exactly() {
        let zero = profile_of("linear", &[4.0, 4.0]);
        let base = profile_of("linear", &[2.0, 1.0]);
        let s1 = regression_score(&base, &base, &zero).unwrap();
        assert_eq!(s1.value, 1.0);
        assert!(s1.valid);
        let s0 = regression_score(&zero, &base, &zero).unwrap();
        assert_eq!(s0.value, 0.0);
        assert!(s0.valid);
    }

    #[test]
    fn score_hand_example() {
        let zero = profile_of("linear", &[4.0, 4.0]);
        let base = profile_of("linear", &[2.0, 1.0]);
        let model = profile_of("linear", &[3.0, 2.0]);
        let s = regression_score(&model, &base, &zero).unwrap();
        assert!((s.value - 0.6).abs() < 1e-12);
        assert!((s.numerator - (-3.0)).abs() < 1e-12);
        assert!((s.denominator - (-5.0)).abs() < 1e-12);
    }

    #[test]
    fn score_shifts_numerator_and_denominator_alike() {
        let zero = profile_of("linear", &[4.0, 4.0]);
        let base = profile_of("linear", &[2.0, 1.0]);
        let model = profile_of("linear", &[3.0, 2.0]);
        let before = regression_score(&model, &base, &zero).unwrap();
        // Add c at index 0 to both model and base (zero unchanged): numerator
        // and denominator shift by the same c.
        let c = 1.75;
        let mut model2 = model.clone();
        let mut base2 = base.clone();
        model2.mean_sq_err[0] += c;
        base2.mean_sq_err[0] += c;
        let after = regression_score(&model2, &base2, &zero).unwrap();
        assert!((after.numerator - (before.numerator + c)).abs() < 1e-12);
        assert!((after.denominator - (before.denominator + c)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_baseline_is_flagged_invalid() {
        let zero = profile_of("linear", &[4.0, 4.0]);
        let s = regression_score(&zero, &zero, &zero).unwrap();
        assert!(!s.valid);
        assert!(s.value.is_nan());
    }

    #[test]
    fn zero_predictor_profile_tracks_target_variance() {
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(100, 0);
        let profile = error_profile(&ZeroPredictor, &spec, 2000, &mut rng, 1).unwrap();
        assert_eq!(profile.context_indices.len(), spec.n_points);
        for (j, &mu) in profile.mean_sq_err.iter().enumerate() {
            assert!(
                (mu - 20.0).abs() < 2.0,
                "index {j}: zero-predictor error {mu} should be near d = 20"
            );
            assert!(profile.ci_low[j] <= mu && mu <= profile.ci_high[j]);
        }
    }

    #[test]
    fn perfect_predictor_has_zero_profile() {
        struct Oracle;
        impl Predictor for Oracle {
            fn id(&self) -> String {
                "oracle".to_string()
            }
            fn predict_batch(&self, batch: &PromptBatch, _o: usize) -> Result<NdArray<f64>> {
                Ok(batch.ys.clone())
            }
        }
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(101, 0);
        let prompts = eval_prompts(&spec, 16, &mut rng).unwrap();
        let matrix = error_matrix(&Oracle, &prompts, &spec, None, 1).unwrap();
        assert!(matrix.errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn least_squares_profile_vanishes_past_full_rank() {
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(102, 0);
        let profile = error_profile(&LeastSquaresPredictor, &spec, 64, &mut rng, 2).unwrap();
        for (j, &i) in profile.context_indices.iter().enumerate() {
            if i >= 20 {
                assert!(
                    profile.mean_sq_err[j] < 1e-8,
                    "length {i}: {}",
                    profile.mean_sq_err[j]
                );
            }
        }
    }

    #[test]
    fn sharded_evaluation_matches_single_threaded() {
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(103, 0);
        let prompts = eval_prompts(&spec, 37, &mut rng).unwrap();
        let a = error_matrix(&LeastSquaresPredictor, &prompts, &spec, None, 1).unwrap();
        let b = error_matrix(&LeastSquaresPredictor, &prompts, &spec, None, 4).unwrap();
        assert_eq!(a.errors, b.errors);
    }

    #[test]
    fn paired_self_difference_is_exactly_zero_with_zero_width() {
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(104, 0);
        let prompts = eval_prompts(&spec, 8, &mut rng).unwrap();
        let a = error_matrix(&LeastSquaresPredictor, &prompts, &spec, None, 1).unwrap();
        let d = difference_profile_paired(&a, &a).unwrap();
        assert!(d.mean_diff.iter().all(|&v| v == 0.0));
        assert!(d.ci_low.iter().all(|&v| v == 0.0));
        assert!(d.ci_high.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_is_antisymmetric() {
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(105, 0);
        let prompts = eval_prompts(&spec, 8, &mut rng).unwrap();
        let a = error_matrix(&ZeroPredictor, &prompts, &spec, None, 1).unwrap();
        let b = error_matrix(&LeastSquaresPredictor, &prompts, &spec, None, 1).unwrap();
        let ab = difference_profile_paired(&a, &b).unwrap();
        let ba = difference_profile_paired(&b, &a).unwrap();
        for j in 0..ab.mean_diff.len() {
            assert_eq!(ab.mean_diff[j], -ba.mean_diff[j]);
        }
    }

    #[test]
    fn zero_vs_oracle_difference_is_target_variance() {
        struct Oracle;
        impl Predictor for Oracle {
            fn id(&self) -> String {
                "oracle".to_string()
            }
            fn predict_batch(&self, batch: &PromptBatch, _o: usize) -> Result<NdArray<f64>> {
                Ok(batch.ys.clone())
            }
        }
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(106, 0);
        let prompts = eval_prompts(&spec, 3000, &mut rng).unwrap();
        let a = error_matrix(&ZeroPredictor, &prompts, &spec, None, 2).unwrap();
        let b = error_matrix(&Oracle, &prompts, &spec, None, 2).unwrap();
        let d = difference_profile_paired(&a, &b).unwrap();
        for &v in &d.mean_diff {
            assert!((v - 20.0).abs() < 2.0, "difference {v} should be near 20");
        }
    }

    #[test]
    fn profiles_are_bit_identical_for_identical_streams() {
        let spec = TaskSpec::defaults(TaskKind::SparseLinear);
        let mut r1 = RngStream::new(107, 0);
        let mut r2 = RngStream::new(107, 0);
        let p1 = error_profile(&ZeroPredictor, &spec, 32, &mut r1, 1).unwrap();
        let p2 = error_profile(&ZeroPredictor, &spec, 32, &mut r2, 2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn mqar_profiles_measure_only_query_positions() {
        let spec = TaskSpec::defaults(TaskKind::VectorMqar);
        let mut rng = RngStream::new(109, 0);
        let profile = error_profile(&ZeroPredictor, &spec, 8, &mut rng, 1).unwrap();
        let expected: Vec<usize> = (64..128).collect();
        assert_eq!(profile.context_indices, expected);
        // Targets sit on the sphere of radius sqrt(d), so the zero estimator's
        // squared error is exactly d at every measured position.
        for &mu in &profile.mean_sq_err {
            assert!((mu - 20.0).abs() < 1e-9, "{mu}");
        }
    }

    #[test]
    fn profile_csv_round_trips() {
        let spec = TaskSpec::defaults(TaskKind::Linear);
        let mut rng = RngStream::new(108, 0);
        let profile = error_profile(&ZeroPredictor, &spec, 8, &mut rng, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.csv");
        save_profile_csv(&profile, &path).unwrap();
        let loaded = read_profile_csv(&path).unwrap();
        assert_eq!(profile, loaded);
    }
}

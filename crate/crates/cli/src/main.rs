//! `icl` — train, evaluate, score, and inspect in-context regression models.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use icl_core::eval::{
    checkpoint_sweep, difference_profile, read_profile_csv, regression_score, save_profile_csv,
    ScoreReport,
};
use icl_core::harness::{
    parse_config, render_difference_svg, render_profiles_svg, run_eval, run_training,
};
use icl_core::models::arch::VariantId;
use icl_core::numerics::rng::RngStream;
use icl_core::tasks::{sample_batch, TaskKind, TaskSpec};

#[derive(Parser)]
#[command(name = "icl", version, about = "In-context regression experiments over simple function classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the training precision (32 or 64).
        #[arg(long)]
        precision: Option<String>,
    },
    /// Evaluate a checkpoint: profiles, score report, figure.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Shard evaluation prompts over N threads.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Recompute the ICL regression score from three profile CSVs.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        zero: PathBuf,
        /// Also write the report as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Difference profile between two profile CSVs.
    Compare {
        #[arg(long)]
        profile_a: PathBuf,
        #[arg(long)]
        profile_b: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional SVG path.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Profile several checkpoints of one run on a shared prompt set.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directories, repeatable.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Dump sampled task batches as CSV.
    Sample {
        /// Task name (linear, sparse-linear, mlp2, decision-tree,
        /// sparse-parity, vector-mqar).
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 4)]
        n_prompts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        input_dim: Option<usize>,
        #[arg(long)]
        n_points: Option<usize>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient verification suite.
    Gradcheck {
        /// Include the twelve end-to-end variants as well as the blocks.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Print the twelve architecture variants.
    ListArchs,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            precision,
        } => {
            let mut cfg = parse_config(&config).context("loading config")?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(p) = precision {
                cfg.train.precision = p.parse()?;
            }
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let record = run_training(&cfg, &out_dir).context("training")?;
            println!(
                "trained {} steps in {:.1}s; final loss {:.6}; {} checkpoints under {}",
                record.steps_completed,
                record.wall_seconds,
                record.final_loss.unwrap_or(f64::NAN),
                record.checkpoints.len(),
                out_dir.display()
            );
        }
        Command::Eval {
            config,
            checkpoint,
            out,
            seed,
            threads,
        } => {
            let mut cfg = parse_config(&config).context("loading config")?;
            if let Some(seed) = seed {
                cfg.eval.seed = seed;
            }
            if let Some(t) = threads {
                cfg.eval.threads = t;
            }
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.join("eval"));
            let artifacts = run_eval(&cfg, &checkpoint, &out_dir).context("evaluation")?;
            print_score(&artifacts.score);
            println!("profiles and report written under {}", out_dir.display());
        }
        Command::Score {
            model,
            baseline,
            zero,
            out,
        } => {
            let model_p = read_profile_csv(&model)?;
            let base_p = read_profile_csv(&baseline)?;
            let zero_p = read_profile_csv(&zero)?;
            let score = regression_score(&model_p, &base_p, &zero_p)?;
            print_score(&score);
            if let Some(path) = out {
                let report = ScoreReport {
                    task: model_p.task.clone(),
                    model_profile: model.display().to_string(),
                    baseline_profile: baseline.display().to_string(),
                    zero_profile: zero.display().to_string(),
                    score,
                };
                std::fs::write(&path, report.to_toml()?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Compare {
            profile_a,
            profile_b,
            out,
            svg,
        } => {
            let a = read_profile_csv(&profile_a)?;
            let b = read_profile_csv(&profile_b)?;
            let diff = difference_profile(&a, &b)?;
            let out_path = out.unwrap_or_else(|| PathBuf::from("difference.csv"));
            let mut text = String::from(
                "task,predictor_a,predictor_b,context_index,mean_diff,ci_low,ci_high,n_prompts\n",
            );
            for j in 0..diff.context_indices.len() {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    diff.task,
                    diff.predictor_a,
                    diff.predictor_b,
                    diff.context_indices[j],
                    diff.mean_diff[j],
                    diff.ci_low[j],
                    diff.ci_high[j],
                    diff.n_prompts
                ));
            }
            std::fs::write(&out_path, text)
                .with_context(|| format!("writing {}", out_path.display()))?;
            if let Some(svg_path) = svg {
                std::fs::write(&svg_path, render_difference_svg(&diff))
                    .with_context(|| format!("writing {}", svg_path.display()))?;
            }
            println!("difference profile written to {}", out_path.display());
        }
        Command::Sweep {
            config,
            checkpoints,
            out,
            seed,
            threads,
        } => {
            let mut cfg = parse_config(&config).context("loading config")?;
            if let Some(seed) = seed {
                cfg.eval.seed = seed;
            }
            if let Some(t) = threads {
                cfg.eval.threads = t;
            }
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.join("sweep"));
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let mut rng = RngStream::new(cfg.eval.seed, 2);
            let profiles = checkpoint_sweep(
                &checkpoints,
                &cfg.task,
                cfg.eval.n_prompts,
                &mut rng,
                cfg.eval.threads,
            )?;
            for profile in &profiles {
                let step = profile.checkpoint_step.unwrap_or(0);
                save_profile_csv(profile, &out_dir.join(format!("profile_step_{step}.csv")))?;
            }
            let refs: Vec<&icl_core::eval::ErrorProfile> = profiles.iter().collect();
            std::fs::write(out_dir.join("sweep.svg"), render_profiles_svg(&refs)?)
                .with_context(|| "writing sweep.svg")?;
            println!("{} profiles written under {}", profiles.len(), out_dir.display());
        }
        Command::Sample {
            task,
            n_prompts,
            seed,
            input_dim,
            n_points,
            out,
        } => {
            let kind: TaskKind = task.parse()?;
            let mut spec = TaskSpec::defaults(kind);
            if let Some(d) = input_dim {
                spec.input_dim = d;
            }
            if let Some(n) = n_points {
                spec.n_points = n;
            }
            let mut rng = RngStream::new(seed, 0);
            let batch = sample_batch(&spec, n_prompts, &mut rng, spec.input_dim, spec.n_points)?;
            let (d, o) = (spec.input_dim, spec.output_dim());
            let mut text = String::from("prompt_id,point_index");
            for c in 0..d {
                text.push_str(&format!(",x_{c}"));
            }
            for c in 0..o {
                text.push_str(&format!(",y_{c}"));
            }
            text.push('\n');
            for p in 0..n_prompts {
                for i in 0..spec.n_points {
                    text.push_str(&format!("{p},{i}"));
                    for c in 0..d {
                        text.push_str(&format!(",{}", batch.xs.at(&[p, i, c])));
                    }
                    for c in 0..o {
                        text.push_str(&format!(",{}", batch.ys.at(&[p, i, c])));
                    }
                    text.push('\n');
                }
            }
            match out {
                Some(path) => std::fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Gradcheck { all, seed } => {
            let reports = if all {
                icl_core::harness::gradsuite::full_suite(seed)?
            } else {
                icl_core::harness::gradsuite::block_reports(seed)?
            };
            let mut failed = 0;
            for (name, report) in &reports {
                println!(
                    "{name}: max rel error {:.3e} over {} checks ... {}",
                    report.max_rel_error,
                    report.checks,
                    if report.pass { "pass" } else { "FAIL" }
                );
                if !report.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
        }
        Command::ListArchs => {
            for v in VariantId::ALL {
                let c = v.components();
                println!(
                    "({}) {}: pos-emb={:?} ffn={:?} norm={:?} attention={:?}",
                    v.as_str(),
                    v.label(),
                    c.pos_emb,
                    c.ffn,
                    c.norm,
                    c.attention
                );
            }
        }
    }
    Ok(())
}

fn print_score(score: &icl_core::eval::RegressionScore) {
    println!("S = {:.3}", score.value);
    println!(
        "numerator = {:.6}, denominator = {:.6}, valid = {}",
        score.numerator, score.denominator, score.valid
    );
}

//! Config-driven orchestration of training, evaluation, scoring, and export.

pub mod config;
pub mod evalrun;
pub mod gradsuite;
pub mod plot;
pub mod train;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use evalrun::{run_eval, EvalArtifacts};
pub use plot::{render_difference_svg, render_profiles_svg};
pub use train::{run_training, RunRecord};

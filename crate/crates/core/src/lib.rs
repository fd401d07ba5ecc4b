//! Library for training and evaluating desk-scale hybrid sequence
//! architectures (GPT-2 / Llama / Mamba component swaps) on in-context
//! regression over simple function classes: task sampling, curriculum
//! training, error profiles, and the ICL regression score.

pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod blocks;
pub mod baselines;
pub mod numerics;
pub mod tasks;

pub use error::{CoreError, Result};

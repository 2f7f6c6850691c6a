//! Training loop, checkpoints, evaluation, timing and the variant ablation.

mod ablation;
mod config;
mod data;
mod eval;
mod state;
mod trainer;

pub use ablation::{run_ablation, run_ablation_with, AblationReport, AblationRow};
pub use config::TrainConfig;
pub use data::{load_split, synthetic_samples, Sample};
pub use eval::{
    evaluate, evaluate_checkpoint, identity_report, infer_full, parameter_digest, reflect_pad, timing_report,
    TimingReport,
};
pub use state::{load_network, FIRST_MOMENT_PREFIX, SECOND_MOMENT_PREFIX};
pub use trainer::{train, LogLine, TrainOutcome, Trainer};

use crate::tensor::Tensor;

/// Inputs of the batch that produced a non-finite loss.
#[derive(Clone, Debug)]
pub struct BatchSnapshot {
    pub rainy: Tensor,
    pub clean: Tensor,
    pub names: Vec<String>,
}

//! Training, evaluation, exports and model accounting: everything the
//! command-line tool drives.

mod accounting;
mod config;
mod eval;
mod export;
mod ood;
mod optim;
mod tensors;
mod train;

pub use accounting::{count_parameters, count_parameters_for, count_store, ParameterTable};
pub use config::{AnnotatorPolicy, LrSchedule, TrainConfig};
pub use eval::{case_scores, evaluate, EvalMode, EvalReport};
pub use export::{export_latent_stats, export_uncertainty, read_raw_map, sample_uncertainty, write_heatmap};
pub use ood::{ood_battery, OodEntry, OodKind, OodParams, OodReport};
pub use optim::Sgd;
pub use tensors::{image_tensor, one_hot_tensor};
pub use train::{split_cases, train, EpochStats, TrainOutcome};

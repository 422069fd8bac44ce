//! SGD training, evaluation, metrics, checkpoints and the ablation matrix.

mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod optim;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use config::TrainConfig;
pub use experiment::{
    directional_checks, run_matrix, standard_variants, variant_config, DirectionalCheck, RunResult, Variant,
    TFC_TSN_VIDEO, TFC_V3D_VIDEO, TSN_VIDEO, V3D_CLIP, V3D_VIDEO,
};
pub use metrics::{argmax, rank_of, to_csv, write_metrics, Accumulator, MetricsRow, CSV_HEADER};
pub use optim::{sgd_step, SgdParams, SgdState};
pub use run::{
    data_rng, eval_plans, evaluate, evaluate_checkpoint, train, train_epoch_plans, train_on, Dataset, EvalOptions,
    PlannedClip, TrainOutcome,
};

//! Training, evaluation and experiment orchestration.

pub mod config;
pub mod data;
pub mod eval;
pub mod run;
pub mod train;

pub use config::{ExperimentConfig, Scale};
pub use data::{derive_seed, load_views, partition_train_ids, prepare_sample, LoadOptions, LoadedView, Source, TrainPartition};
pub use eval::{evaluate_views, predict_views, read_jsonl, score_predictions, write_jsonl, PredictionRecord};
pub use run::{
    evaluate_checkpoint, prepare_batch, run_experiment, run_with_data, BatchAudit, EpochRecord, ExperimentData, ExperimentOutcome, BATCH_AUDIT_FILE,
    BEST_CHECKPOINT, HISTORY_FILE, TEST_PREDICTIONS_FILE, TEST_REPORT_FILE, TRAIN_LOG_FILE,
};
pub use train::{make_batches, shuffled_batches, train_step, Adam, AdamConfig, BatchPlan, StepLog};

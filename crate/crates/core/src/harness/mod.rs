//! The experimental protocol: configuration, learning-rate search, training
//! with early stopping, evaluation and output files.

mod config;
mod output;
mod train;

pub use config::{ExperimentConfig, ModelSize, Task, CONFIG_KEYS};
pub use output::{
    curve_file_name, emit_outputs, fmt_g6, format_table, read_curve_csv, read_results_csv,
    write_curve_csv, write_results_csv, LearningCurveRecord, ResultRow, RESULTS_FILE, TABLE_FILE,
};
pub use train::{
    evaluate, generate_data, model_shape, prepare_data, resolve_model_size, result_row, run_experiment,
    run_experiment_on, run_lr_search, run_training, CandidateSummary, ExperimentOutcome, GeneratedData,
    LrSearchOutcome, PreparedData, TrainOutcome,
};

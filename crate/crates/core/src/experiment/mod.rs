//! The few-shot benchmarking procedure: data, sampling, training, evaluation and reports.

pub mod config;
pub mod dataset;
pub mod export;
pub mod report;
pub mod runner;
pub mod sampling;

pub use config::{DatasetConfig, EmbeddingSource, ExperimentConfig, VerbalizerConfig, VerbalizerKind};
pub use dataset::{load_dataset, read_dataset, DataFormat, Dataset, Schema};
pub use export::{accuracy, ensemble_records, read_logits, write_logits, LogitRecord, Prediction};
pub use report::{mean_std, MemberReport, RunReport, SeedReport, VariantReport};
pub use runner::{
    class_logits, evaluate, export_logits, fine_tune, load_data, load_model, run_benchmark, trained_verbalizer,
    Benchmark, Evaluation, FineTuned, ModelState,
};
pub use sampling::{sample_fewshot, sample_uniform, subsample, FewShotSplit};

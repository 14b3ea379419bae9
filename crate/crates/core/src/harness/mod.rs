//! Desk-scale benchmark: synthetic source shapes, evaluation streams,
//! metrics, and the end-to-end pipeline.

mod dataset;
mod metrics;
mod pipeline;
mod scenario;
mod shapes;

pub use dataset::Dataset;
pub use metrics::{accuracy, confusion_matrix, macro_recall, macro_recall_supported, mean, median};
pub use pipeline::{
    adapt_to_classifier_frame, generate_dataset, make_denoiser, resample_to, run_pipeline, train_classifier, Benchmark, ClassifierConfig, DatasetConfig, DenoiserChoice,
    InstanceRecord, PipelineConfig, Report, RunConfig, ShiftReport,
};
pub use scenario::{imbalance_counts, make_stream, ScenarioSpec, StreamOrder};
pub use shapes::{canonical_uv, gen_source_dataset, sample_instance, ShapeKind, JITTER_STD};

//! Synthetic labeled domains, selection metrics, downstream fine-tuning
//! evaluation and the ablation sweeps.

pub mod ablation;
pub mod downstream;
pub mod experiment;
pub mod metrics;
pub mod neyman_pearson;
pub mod report;
pub mod synth;

pub use ablation::{ablate_model_size, ablate_prefix_length, ablate_threshold};
pub use downstream::{downstream_eval, heldout_perplexity, Downstream};
pub use experiment::{
    build_datasets, evaluate, run_experiment, score_pool, train_base, tune, Datasets, DownstreamScope,
    ExperimentConfig,
};
pub use metrics::{auc, classification_metrics, roc_curve, tpr_at, ClassificationMetrics};
pub use report::{AblationTable, EvalReport, MethodRow, ModelSizeRow, PrefixLengthRow, ThresholdRow};
pub use synth::{gen_domain, mix_pool, DomainKind, DomainSpec};

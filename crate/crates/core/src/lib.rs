//! Minority oversampling by multilayer fuzzy c-means prototypes with a
//! discrepancy correction between layers, together with baseline samplers,
//! classification metrics and a repeated hold-out evaluation harness.

pub mod dataset;
pub mod envelope;
pub mod error;
pub mod fcm;
pub mod harness;
pub mod metrics;
pub mod mmd;
pub mod rng;
pub mod sampler;

pub use dataset::{class_stats, load, load_csv, load_keel, write_csv, ClassStats, DataFormat, Dataset, LabelColumn, Scaler};
pub use envelope::{plan_layers, Correction, CorrectionTarget, LayerDiagnostics, LayerPlan};
pub use error::{Error, Result};
pub use fcm::{FcmConfig, FcmResult, MembershipMatrix};
pub use harness::{
    compare_methods, holdout_evaluate, train_predict, Classifier, ClassifierKind, Comparison, EvaluationReport,
    HoldoutProtocol, ReportFile,
};
pub use metrics::{ConfusionMatrix, Metric, MetricSet, RankTable};
pub use mmd::{Kernel, KernelChoice, MmdEstimate};
pub use sampler::{balance, balance_scaled, BalanceConfig, BalancedDataset, Method, Provenance};

//! Discourse relation annotation and analysis for two-party dialogue.
//!
//! The pipeline runs transcript ingestion ([`corpus`]), EDU segmentation
//! ([`segmenter`]), pair generation ([`pairs`]), annotation storage ([`store`]),
//! and three analysis stacks: multi-label agreement ([`agreement`]), context
//! modeling ([`context`]), and embedding-based classification ([`classifier`]).
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.

pub mod agreement;
pub mod classifier;
pub mod context;
pub mod corpus;
pub mod jsonl;
pub mod labels;
pub mod linalg;
pub mod pairs;
pub mod scalar;
pub mod seed;
pub mod segmenter;
pub mod stats;
pub mod store;
pub mod synth;

pub use labels::{LabelMatrix, LabelSet, RelationLabel, N_LABELS};
pub use pairs::{AnnotationTask, PairType};
pub use scalar::Scalar;

pub type AgreementReport = agreement::AgreementReport<f64>;
pub type MetricTriple = agreement::MetricTriple<f64>;
pub type EmbeddingTable = classifier::EmbeddingTable<f64>;
pub type LinearModel = classifier::LinearModel<f64>;
pub type EvalReport = classifier::EvalReport<f64>;
pub type FitOptions = context::FitOptions<f64>;
pub type FitResult = context::FitResult<f64>;
pub type LrtResult = context::LrtResult<f64>;
pub type LabelsPerPair = context::LabelsPerPair<f64>;
pub type DistributionReport = context::DistributionReport<f64>;
pub type TTestResult = stats::TTestResult<f64>;

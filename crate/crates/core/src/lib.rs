//! Curriculum scheduling for instruction-tuning data.
//!
//! A dataset is sorted under several difficulty metrics (length, lexical
//! diversity, probe loss and a learned competence score). During training a
//! scheduler repeatedly picks, among the next slice of every sorted schedule,
//! the one the current model finds least perplexing, trains on it and
//! re-sorts the remainder of competence-aware schedules.
//!
//! The numeric kernels ([`scheduler::scope`], [`metrics::mtld`],
//! [`scheduler::batch_ppl`], [`scorer::Mlp`]) are generic over [`Scalar`];
//! the aliases below fix the precision used by the end-to-end pipeline.

pub mod corpus;
pub mod metrics;
pub mod num;
pub mod probe;
pub mod runner;
pub mod scheduler;
pub mod scorer;
pub mod synth;

pub use num::Scalar;

pub use corpus::{Corpus, Dataset, EncodedSample, InstructionSample, Role, Turn, Vocab};
pub use metrics::{DifficultyVector, Metric, Schedule};
pub use probe::{NGramProbe, Probe, ProbeError, ProbeReport};
pub use runner::{CurriculumTrace, RunConfig, TraceStep};
pub use scheduler::{SelectionPolicy, SubCurriculum};

/// Scope parameters in the pipeline precision.
pub type ScopeConfig = scheduler::ScopeConfig<f64>;
/// Two-layer perceptron in the pipeline precision.
pub type Mlp = scorer::Mlp<f64>;
/// Scoring model (feature map + perceptron) in the pipeline precision.
pub type ScoringModel = scorer::ScoringModel<f64>;
/// Discriminator in the pipeline precision.
pub type Discriminator = scorer::Mlp<f64>;
/// Labeled training feature in the pipeline precision.
pub type LabeledFeature = scorer::LabeledFeature<f64>;
/// Scorer hyperparameters in the pipeline precision.
pub type ScorerConfig = scorer::ScorerConfig<f64>;

/// Single-precision scorer, for memory-constrained feature sets.
pub type ScoringModelF32 = scorer::ScoringModel<f32>;

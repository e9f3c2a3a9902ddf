//! Competence-aware scoring model R and its adversarial discriminator D.
//!
//! Training data comes from staged probe updates: after the probe is trained
//! on one portion of the data, that portion is labeled easy (0) and the next,
//! still unseen, portion hard (1). Each example is the concatenation of the
//! sample's features under the initial and the current probe state. R learns
//! to predict the label; D learns the same from R's hidden feature while R
//! is pushed to make D wrong.

mod checkpoint;
mod mlp;
mod pairs;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::probe::{Probe, ProbeError};
use crate::Scalar;

pub use checkpoint::{Checkpoint, Shapes, CHECKPOINT_FORMAT};
pub use mlp::{bce_with_logit, sigmoid, FeatureMap, Mlp, MlpCache, ScoringModel};
pub use pairs::{build_pair_rounds, build_training_pairs, split_portions};
pub use train::{
    accuracy, d_objective, r_objective, smooth_label, train_rounds, train_step_d, train_step_r,
    upsample, LossRecord, Model, RLosses, TrainedScorer,
};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("feature length {got} does not match model input {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("{samples} samples leave a portion empty when split {parts} ways")]
    EmptyPortion { samples: usize, parts: usize },
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// One training example for R and D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LabeledFeature<F: Scalar> {
    /// `concat(z1, z2)`.
    pub z: Vec<F>,
    /// 0 = already trained on (easy), 1 = not yet seen (hard).
    pub label: u8,
    /// 1-based round that produced the example.
    pub portion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScorerConfig<F: Scalar> {
    pub n_portions: usize,
    pub lr: F,
    pub batch: usize,
    pub inner_iters: usize,
    pub label_smoothing: F,
    pub upsample: bool,
    /// Weight of the term rewarding R for fooling D.
    pub adversarial_weight: F,
    pub hidden: usize,
    pub seed: u64,
}

impl<F: Scalar> Default for ScorerConfig<F> {
    fn default() -> Self {
        Self {
            n_portions: 5,
            lr: F::of(1e-5),
            batch: 4,
            inner_iters: 2,
            label_smoothing: F::of(0.1),
            upsample: true,
            adversarial_weight: F::of(0.1),
            hidden: 256,
            seed: 0,
        }
    }
}

impl<F: Scalar> ScorerConfig<F> {
    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: &str| Err(ScorerError::Config(m.into()));
        if self.n_portions < 2 {
            return bad("n_portions must be at least 2");
        }
        if !(self.lr > F::zero() && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.inner_iters == 0 || self.hidden == 0 {
            return bad("batch, inner_iters and hidden must be positive");
        }
        if !(self.label_smoothing >= F::zero() && self.label_smoothing < F::of(0.5)) {
            return bad("label smoothing must lie in [0, 0.5)");
        }
        if !(self.adversarial_weight >= F::zero() && self.adversarial_weight.is_finite()) {
            return bad("adversarial weight must be non-negative");
        }
        Ok(())
    }
}

/// Builds labeled pairs with `probe` (which is trained along the way) and
/// trains R and D on them round by round.
pub fn train_scorer<F: Scalar>(
    corpus: &Corpus,
    probe: &mut dyn Probe,
    config: &ScorerConfig<F>,
) -> Result<TrainedScorer<F>, ScorerError> {
    config.validate()?;
    let rounds = build_pair_rounds(corpus, probe, config)?;
    train_rounds(&rounds, 2 * probe.feature_dim(), config)
}

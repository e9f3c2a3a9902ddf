//! Competence probes: the model whose perplexity, loss and features drive the
//! scheduler.
//!
//! [`NGramProbe`] is the built-in reference model. [`ExternalProbe`] forwards
//! every call over the JSON-lines wire protocol to another process, and
//! [`wire::serve`] exposes any probe over that protocol.

mod external;
mod features;
mod ngram;
pub mod wire;

use thiserror::Error;

use crate::corpus::EncodedSample;

pub use external::{Endpoint, ExternalProbe};
pub use features::{sequence_features, FEATURE_DIM};
pub use ngram::NGramProbe;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe handshake failed: {0}")]
    Handshake(String),
    #[error("probe protocol violation on response {seq}: {message} (line: {line})")]
    Protocol {
        seq: usize,
        line: String,
        message: String,
    },
    #[error("probe reported an error: {0}")]
    Remote(String),
    #[error("probe did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("probe transport closed")]
    Closed,
    #[error("probe i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },
}

/// Features of one sample: `z1` under the frozen initial state, `z2` under the
/// current state. Both have length [`Probe::feature_dim`].
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl Features {
    /// `concat(z1, z2)`.
    pub fn concat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.z1.len() + self.z2.len());
        z.extend_from_slice(&self.z1);
        z.extend_from_slice(&self.z2);
        z
    }
}

/// A language model the curriculum is scheduled for.
///
/// Calls are strictly ordered; a probe handle has a single owner.
pub trait Probe {
    fn feature_dim(&self) -> usize;

    /// Natural-log probability of every token given its prefix.
    /// `mask_from` marks the first output position; implementations may use it
    /// as a hint but must return one value per token.
    fn logprobs(&mut self, tokens: &[u32], mask_from: usize) -> Result<Vec<f64>, ProbeError>;

    /// One training step on the given token streams.
    fn update(&mut self, batch: &[&[u32]]) -> Result<(), ProbeError>;

    fn features(&mut self, tokens: &[u32], mask_from: usize) -> Result<Features, ProbeError>;

    /// Re-freezes the state used for `z1` to the current state.
    fn snapshot(&mut self) -> Result<(), ProbeError>;

    fn shutdown(&mut self) -> Result<(), ProbeError> {
        Ok(())
    }
}

impl<P: Probe + ?Sized> Probe for Box<P> {
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn logprobs(&mut self, tokens: &[u32], mask_from: usize) -> Result<Vec<f64>, ProbeError> {
        (**self).logprobs(tokens, mask_from)
    }
    fn update(&mut self, batch: &[&[u32]]) -> Result<(), ProbeError> {
        (**self).update(batch)
    }
    fn features(&mut self, tokens: &[u32], mask_from: usize) -> Result<Features, ProbeError> {
        (**self).features(tokens, mask_from)
    }
    fn snapshot(&mut self) -> Result<(), ProbeError> {
        (**self).snapshot()
    }
    fn shutdown(&mut self) -> Result<(), ProbeError> {
        (**self).shutdown()
    }
}

/// Everything a probe says about one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub token_logprobs: Vec<f64>,
    /// `-sum` of the logprobs at output positions, in nats.
    pub sample_loss: f64,
    pub features_initial: Vec<f64>,
    pub features_current: Vec<f64>,
    pub feature_dim: usize,
}

impl ProbeReport {
    /// Per-sample perplexity over the whole stream, `exp(-mean logprob)`.
    pub fn perplexity(&self) -> Option<f64> {
        crate::scheduler::sample_ppl(&self.token_logprobs)
    }
}

/// Sum of `-logprob` over the output positions of `sample`.
pub fn output_loss(logprobs: &[f64], sample: &EncodedSample) -> f64 {
    -logprobs
        .iter()
        .zip(&sample.target)
        .filter(|(_, &t)| t)
        .map(|(&lp, _)| lp)
        .sum::<f64>()
}

pub fn report(probe: &mut dyn Probe, sample: &EncodedSample) -> Result<ProbeReport, ProbeError> {
    let mask_from = sample.target_start();
    let token_logprobs = probe.logprobs(&sample.rendered, mask_from)?;
    let features = probe.features(&sample.rendered, mask_from)?;
    let dim = probe.feature_dim();
    for z in [&features.z1, &features.z2] {
        if z.len() != dim {
            return Err(ProbeError::FeatureDim {
                expected: dim,
                got: z.len(),
            });
        }
    }
    Ok(ProbeReport {
        sample_loss: output_loss(&token_logprobs, sample),
        token_logprobs,
        features_initial: features.z1,
        features_current: features.z2,
        feature_dim: dim,
    })
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Assigns the same probability to every token; features are constant.
    #[derive(Debug, Clone)]
    pub struct FixedProbe {
        pub logprob: f64,
        pub dim: usize,
        pub updates: usize,
    }

    impl FixedProbe {
        pub fn new(prob: f64) -> Self {
            Self {
                logprob: prob.ln(),
                dim: 2,
                updates: 0,
            }
        }
    }

    impl Probe for FixedProbe {
        fn feature_dim(&self) -> usize {
            self.dim
        }
        fn logprobs(&mut self, tokens: &[u32], _: usize) -> Result<Vec<f64>, ProbeError> {
            Ok(vec![self.logprob; tokens.len()])
        }
        fn update(&mut self, _: &[&[u32]]) -> Result<(), ProbeError> {
            self.updates += 1;
            Ok(())
        }
        fn features(&mut self, tokens: &[u32], _: usize) -> Result<Features, ProbeError> {
            let v = vec![tokens.len() as f64; self.dim];
            Ok(Features {
                z1: v.clone(),
                z2: v,
            })
        }
        fn snapshot(&mut self) -> Result<(), ProbeError> {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::FixedProbe;
    use super::*;
    use crate::corpus::{Corpus, Dataset, InstructionSample};

    #[test]
    fn report_loss_sums_output_positions() {
        let c = Corpus::new(Dataset::new(vec![InstructionSample::single(
            0, "say", "one two three", "general",
        )]));
        let mut probe = FixedProbe::new((-1.0f64).exp());
        let r = report(&mut probe, c.encoded(0)).unwrap();
        assert!((r.sample_loss - 3.0).abs() < 1e-12);
        assert_eq!(r.token_logprobs.len(), c.encoded(0).rendered.len());
        assert!((r.perplexity().unwrap() - 1f64.exp()).abs() < 1e-12);
    }
}

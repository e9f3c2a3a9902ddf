use super::SchedulerError;
use crate::corpus::Corpus;
use crate::probe::{Probe, ProbeError};
use crate::Scalar;

/// `exp(-mean logprob)`, the geometric-mean inverse probability of a sample,
/// or `None` for an empty sample.
pub fn sample_ppl<F: Scalar>(logprobs: &[F]) -> Option<F> {
    if logprobs.is_empty() {
        return None;
    }
    let sum = logprobs.iter().fold(F::zero(), |acc, &lp| acc + lp);
    Some((-sum / F::of_usize(logprobs.len())).exp())
}

/// Arithmetic mean of per-sample perplexities. Empty samples are skipped;
/// if every sample is empty the batch has no perplexity.
pub fn batch_ppl_of<F: Scalar, S: AsRef<[F]>>(samples: &[S]) -> Result<F, SchedulerError> {
    let mut total = F::zero();
    let mut counted = 0usize;
    for s in samples {
        if let Some(p) = sample_ppl(s.as_ref()) {
            total += p;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(SchedulerError::EmptyBatch);
    }
    Ok(total / F::of_usize(counted))
}

/// Perplexity of a batch of corpus samples under the probe's current state.
pub fn batch_ppl(
    ids: &[usize],
    corpus: &Corpus,
    probe: &mut dyn Probe,
) -> Result<f64, SchedulerError> {
    let logprobs = ids
        .iter()
        .map(|&id| {
            let e = corpus.encoded(id);
            probe.logprobs(&e.rendered, e.target_start())
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    batch_ppl_of(&logprobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_quarter_gives_four() {
        let lp = vec![0.25f64.ln(); 9];
        assert!((sample_ppl(&lp).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn batch_average_of_two_and_eight() {
        let a = vec![0.5f64.ln(); 3];
        let b = vec![0.125f64.ln(); 5];
        assert!((batch_ppl_of(&[a, b]).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_samples_are_skipped() {
        let a: Vec<f64> = vec![];
        let b = vec![0.5f64.ln(); 2];
        assert!((batch_ppl_of(&[a.clone(), b]).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(batch_ppl_of(&[a]), Err(SchedulerError::EmptyBatch)));
        assert!(matches!(batch_ppl_of::<f64, Vec<f64>>(&[]), Err(SchedulerError::EmptyBatch)));
    }

    #[test]
    fn certain_tokens_give_one() {
        assert_eq!(sample_ppl(&[0.0f32; 4]).unwrap(), 1.0);
    }
}

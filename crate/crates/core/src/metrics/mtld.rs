use std::collections::HashSet;

use super::MetricError;
use crate::Scalar;

/// Default type-token ratio threshold for MTLD factors.
pub const DEFAULT_TTR_THRESHOLD: f64 = 0.72;

/// Distinct tokens divided by total tokens.
pub fn ttr<F: Scalar>(tokens: &[u32]) -> Result<F, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let types = tokens.iter().collect::<HashSet<_>>().len();
    Ok(F::of_usize(types) / F::of_usize(tokens.len()))
}

/// Full and partial factor count of one directional MTLD pass.
fn factor_count<F: Scalar, I: Iterator<Item = u32>>(tokens: I, threshold: F) -> F {
    let mut factors = F::zero();
    let mut window: HashSet<u32> = HashSet::new();
    let mut count = 0usize;
    let mut running = F::one();
    for tok in tokens {
        window.insert(tok);
        count += 1;
        running = F::of_usize(window.len()) / F::of_usize(count);
        if running <= threshold {
            factors += F::one();
            window.clear();
            count = 0;
            running = F::one();
        }
    }
    if count > 0 {
        factors += (F::one() - running) / (F::one() - threshold);
    }
    factors
}

/// One directional pass: tokens per factor, or the token count when no
/// factor (not even a fractional one) completes.
fn mtld_pass<F: Scalar, I: Iterator<Item = u32>>(tokens: I, len: usize, threshold: F) -> F {
    let factors = factor_count(tokens, threshold);
    let n = F::of_usize(len);
    if factors == F::zero() {
        n
    } else {
        n / factors
    }
}

/// Bidirectional Measure of Textual Lexical Diversity: the mean of a forward
/// and a reverse pass, each `tokens / factors`, where a factor closes whenever
/// the running type-token ratio falls to `threshold` and the trailing
/// remainder counts as `(1 - ttr) / (1 - threshold)` of a factor.
pub fn mtld<F: Scalar>(tokens: &[u32], threshold: F) -> Result<F, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    if !(threshold > F::zero() && threshold < F::one()) {
        return Err(MetricError::Threshold(threshold.to_f64_lossy()));
    }
    let n = tokens.len();
    let forward = mtld_pass(tokens.iter().copied(), n, threshold);
    let backward = mtld_pass(tokens.iter().rev().copied(), n, threshold);
    Ok((forward + backward) / F::of(2.0))
}

/// Forward pass only; exposed for cross-checking.
pub fn mtld_forward<F: Scalar>(tokens: &[u32], threshold: F) -> Result<F, MetricError> {
    if tokens.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    Ok(mtld_pass(tokens.iter().copied(), tokens.len(), threshold))
}

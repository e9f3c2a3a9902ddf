use crate::corpus::UNK_ID;
use crate::metrics::mtld;

/// Length of the statistics vector produced by [`sequence_features`].
pub const FEATURE_DIM: usize = 8;

/// Statistics of a token stream under one model state:
///
/// `[mean logprob, std logprob, min logprob, unknown fraction, ln(1 + len),
///   MTLD / 100, mean output logprob, context coverage]`
///
/// `seen[m]` tells whether the model had observed position `m`'s context.
/// An empty stream yields all zeros.
pub fn sequence_features(
    tokens: &[u32],
    logprobs: &[f64],
    seen: &[bool],
    mask_from: usize,
    vocab_size: usize,
) -> Vec<f64> {
    let n = tokens.len();
    if n == 0 {
        return vec![0.0; FEATURE_DIM];
    }
    let nf = n as f64;
    let mean = logprobs.iter().sum::<f64>() / nf;
    let var = logprobs.iter().map(|lp| (lp - mean).powi(2)).sum::<f64>() / nf;
    let min = logprobs.iter().copied().fold(f64::INFINITY, f64::min);
    let unknown = tokens
        .iter()
        .filter(|&&t| t == UNK_ID || t as usize >= vocab_size)
        .count() as f64
        / nf;
    let diversity = mtld::<f64>(tokens, 0.72).unwrap_or(0.0) / 100.0;
    let output = &logprobs[mask_from.min(n)..];
    let output_mean = if output.is_empty() {
        0.0
    } else {
        output.iter().sum::<f64>() / output.len() as f64
    };
    let coverage = seen.iter().filter(|&&s| s).count() as f64 / nf;
    vec![
        mean,
        var.sqrt(),
        min,
        unknown,
        nf.ln_1p(),
        diversity,
        output_mean,
        coverage,
    ]
}

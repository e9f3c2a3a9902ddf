use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledFeature, ScorerConfig, ScorerError};
use crate::corpus::Corpus;
use crate::probe::Probe;
use crate::Scalar;

/// Seeded shuffle of `0..n` split into `parts` contiguous portions; the
/// last portion takes the remainder.
pub fn split_portions(n: usize, parts: usize, seed: u64) -> Result<Vec<Vec<usize>>, ScorerError> {
    if parts < 2 {
        return Err(ScorerError::Config(format!(
            "n_portions must be at least 2, got {parts}"
        )));
    }
    let size = n / parts;
    if size == 0 {
        return Err(ScorerError::EmptyPortion { samples: n, parts });
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..parts)
        .map(|k| {
            let end = if k + 1 == parts { n } else { (k + 1) * size };
            ids[k * size..end].to_vec()
        })
        .collect())
}

/// Builds the labeled pairs, one vector per round.
///
/// Round `i` (of `n_portions - 1`) trains the probe on portion `i`, then
/// labels portion `i` as mastered (0) and portion `i + 1` as unseen (1).
/// `z1` comes from the probe's frozen initial state and `z2` from its state
/// after the round's update.
pub fn build_pair_rounds<F: Scalar>(
    corpus: &Corpus,
    probe: &mut dyn Probe,
    config: &ScorerConfig<F>,
) -> Result<Vec<Vec<LabeledFeature<F>>>, ScorerError> {
    let n = corpus.len();
    if n < 2 * config.n_portions {
        return Err(ScorerError::Config(format!(
            "{n} samples cannot fill {} portions of at least two",
            config.n_portions
        )));
    }
    let portions = split_portions(n, config.n_portions, config.seed)?;
    let mut rounds = Vec::with_capacity(portions.len() - 1);
    for i in 0..portions.len() - 1 {
        let batch: Vec<&[u32]> = portions[i]
            .iter()
            .map(|&id| corpus.encoded(id).rendered.as_slice())
            .collect();
        probe.update(&batch)?;
        let mut pairs = Vec::with_capacity(portions[i].len() + portions[i + 1].len());
        for (label, part) in [(0u8, &portions[i]), (1u8, &portions[i + 1])] {
            for &id in part {
                let e = corpus.encoded(id);
                let f = probe.features(&e.rendered, e.target_start())?;
                pairs.push(LabeledFeature {
                    z: f.concat().into_iter().map(F::of).collect(),
                    label,
                    portion: i + 1,
                });
            }
        }
        rounds.push(pairs);
    }
    Ok(rounds)
}

/// All pairs of [`build_pair_rounds`] in round order.
pub fn build_training_pairs<F: Scalar>(
    corpus: &Corpus,
    probe: &mut dyn Probe,
    config: &ScorerConfig<F>,
) -> Result<Vec<LabeledFeature<F>>, ScorerError> {
    Ok(build_pair_rounds(corpus, probe, config)?
        .into_iter()
        .flatten()
        .collect())
}

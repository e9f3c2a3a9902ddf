use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{bce_with_logit, sigmoid, Mlp, ScoringModel};
use super::{LabeledFeature, ScorerConfig, ScorerError};
use crate::Scalar;

/// Losses of one R step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RLosses<F> {
    /// Mean BCE of R against the (smoothed) labels.
    pub bce: F,
    /// Mean BCE of D against the flipped labels.
    pub adversarial: F,
    /// `bce + adversarial_weight * adversarial`.
    pub total: F,
}

/// Target after label smoothing: `label (1 - eps) + (1 - label) eps`.
pub fn smooth_label<F: Scalar>(label: u8, eps: F) -> F {
    if label == 1 {
        F::one() - eps
    } else {
        eps
    }
}

fn finite<F: Scalar>(v: F, what: &'static str) -> Result<F, ScorerError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ScorerError::NonFinite(what))
    }
}

/// Objective of the scoring model and its gradient:
///
/// `mean BCE(R(z), smooth(y)) + weight * mean BCE(D(map(z)), 1 - y)`
///
/// The discriminator is held fixed; the adversarial term reaches R through
/// the feature map that produces what D sees.
pub fn r_objective<F: Scalar>(
    r: &ScoringModel<F>,
    d: &Mlp<F>,
    batch: &[LabeledFeature<F>],
    label_smoothing: F,
    adversarial_weight: F,
) -> Result<(RLosses<F>, ScoringModel<F>), ScorerError> {
    if batch.is_empty() {
        return Err(ScorerError::EmptyBatch);
    }
    let n = F::of_usize(batch.len());
    let mut grad = r.zeros_like();
    let mut bce = F::zero();
    let mut adv = F::zero();
    let dim = r.map.dim();
    let mut dh = vec![F::zero(); dim];
    for item in batch {
        let h = r.embed(&item.z)?;
        dh.iter_mut().for_each(|g| *g = F::zero());

        let rc = r.mlp.forward_cached(&h)?;
        let y = smooth_label(item.label, label_smoothing);
        bce += bce_with_logit(rc.logit, y);
        r.mlp
            .backward(&h, &rc, (sigmoid(rc.logit) - y) / n, &mut grad.mlp, Some(&mut dh));

        if adversarial_weight != F::zero() {
            let dc = d.forward_cached(&h)?;
            let flipped = F::of(f64::from(1 - item.label));
            adv += bce_with_logit(dc.logit, flipped);
            let dlogit = adversarial_weight * (sigmoid(dc.logit) - flipped) / n;
            // D is held fixed here; only dL/dh flows back.
            d.input_grad(&dc, dlogit, &mut dh);
        }

        for k in 0..dim {
            grad.map.scale[k] += dh[k] * item.z[k];
            grad.map.shift[k] += dh[k];
        }
    }
    let bce = finite(bce / n, "R loss")?;
    let adversarial = finite(adv / n, "adversarial loss")?;
    Ok((
        RLosses {
            bce,
            adversarial,
            total: bce + adversarial_weight * adversarial,
        },
        grad,
    ))
}

/// Discriminator objective `mean BCE(D(h), y)` on the features it sees, and
/// its gradient.
pub fn d_objective<F: Scalar>(
    d: &Mlp<F>,
    batch: &[LabeledFeature<F>],
) -> Result<(F, Mlp<F>), ScorerError> {
    if batch.is_empty() {
        return Err(ScorerError::EmptyBatch);
    }
    let n = F::of_usize(batch.len());
    let mut grad = Mlp::zeros(d.input_dim, d.hidden);
    let mut loss = F::zero();
    for item in batch {
        let c = d.forward_cached(&item.z)?;
        let y = F::of(f64::from(item.label));
        loss += bce_with_logit(c.logit, y);
        d.backward(&item.z, &c, (sigmoid(c.logit) - y) / n, &mut grad, None);
    }
    Ok((finite(loss / n, "D loss")?, grad))
}

/// One SGD step on R. Returns the losses before the step.
pub fn train_step_r<F: Scalar>(
    r: &mut ScoringModel<F>,
    d: &Mlp<F>,
    batch: &[LabeledFeature<F>],
    config: &ScorerConfig<F>,
) -> Result<RLosses<F>, ScorerError> {
    let (losses, grad) = r_objective(
        r,
        d,
        batch,
        config.label_smoothing,
        config.adversarial_weight,
    )?;
    r.sgd(&grad, config.lr);
    if !r.is_finite() {
        return Err(ScorerError::NonFinite("R parameters"));
    }
    Ok(losses)
}

/// One SGD step on D over features as D sees them. Returns the loss before
/// the step.
pub fn train_step_d<F: Scalar>(
    d: &mut Mlp<F>,
    batch: &[LabeledFeature<F>],
    config: &ScorerConfig<F>,
) -> Result<F, ScorerError> {
    let (loss, grad) = d_objective(d, batch)?;
    d.sgd(&grad, config.lr);
    if !d.is_finite() {
        return Err(ScorerError::NonFinite("D parameters"));
    }
    Ok(loss)
}

/// Resamples the minority label with replacement until both labels have the
/// same count. The originals come first, in order.
pub fn upsample<F: Scalar, R: Rng + ?Sized>(
    pairs: &[LabeledFeature<F>],
    rng: &mut R,
) -> Vec<LabeledFeature<F>> {
    let (zeros, ones): (Vec<_>, Vec<_>) = pairs.iter().partition(|p| p.label == 0);
    let mut out = pairs.to_vec();
    let deficit = zeros.len().abs_diff(ones.len());
    let minority = if zeros.len() < ones.len() { zeros } else { ones };
    if minority.is_empty() {
        return out;
    }
    for _ in 0..deficit {
        out.push(minority[rng.random_range(0..minority.len())].clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    R,
    D,
}

/// Mean loss over one epoch of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub round: usize,
    pub iteration: usize,
    pub model: Model,
    pub loss: f64,
}

/// Result of [`train_rounds`].
#[derive(Debug, Clone)]
pub struct TrainedScorer<F: Scalar> {
    pub scorer: ScoringModel<F>,
    pub discriminator: Mlp<F>,
    pub history: Vec<LossRecord>,
}

/// Fraction of `pairs` whose `score > 0.5` agrees with `label == 1`.
pub fn accuracy<F: Scalar>(
    score: impl Fn(&[F]) -> Result<F, ScorerError>,
    pairs: &[LabeledFeature<F>],
) -> Result<f64, ScorerError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let half = F::of(0.5);
    let mut hits = 0usize;
    for p in pairs {
        if (score(&p.z)? > half) == (p.label == 1) {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Trains R and D over already labeled rounds. Per round: optional
/// upsampling, then `inner_iters` times one D epoch followed by one R epoch
/// over shuffled minibatches.
pub fn train_rounds<F: Scalar>(
    rounds: &[Vec<LabeledFeature<F>>],
    input_dim: usize,
    config: &ScorerConfig<F>,
) -> Result<TrainedScorer<F>, ScorerError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scorer = ScoringModel::new(Mlp::kaiming(input_dim, config.hidden, &mut rng));
    let mut discriminator = Mlp::kaiming(input_dim, config.hidden, &mut rng);
    let mut history = Vec::with_capacity(rounds.len() * config.inner_iters * 2);

    for (round, pairs) in rounds.iter().enumerate() {
        if pairs.is_empty() {
            return Err(ScorerError::EmptyBatch);
        }
        let data = if config.upsample {
            upsample(pairs, &mut rng)
        } else {
            pairs.clone()
        };
        let mut idx: Vec<usize> = (0..data.len()).collect();
        for iteration in 0..config.inner_iters {
            idx.shuffle(&mut rng);
            let mut total = 0.0;
            let mut steps = 0usize;
            for chunk in idx.chunks(config.batch) {
                let seen = chunk
                    .iter()
                    .map(|&i| {
                        Ok(LabeledFeature {
                            z: scorer.embed(&data[i].z)?,
                            ..data[i].clone()
                        })
                    })
                    .collect::<Result<Vec<_>, ScorerError>>()?;
                total += train_step_d(&mut discriminator, &seen, config)?.to_f64_lossy();
                steps += 1;
            }
            history.push(LossRecord {
                round,
                iteration,
                model: Model::D,
                loss: total / steps as f64,
            });

            idx.shuffle(&mut rng);
            let mut total = 0.0;
            let mut steps = 0usize;
            for chunk in idx.chunks(config.batch) {
                let batch: Vec<_> = chunk.iter().map(|&i| data[i].clone()).collect();
                total += train_step_r(&mut scorer, &discriminator, &batch, config)?
                    .total
                    .to_f64_lossy();
                steps += 1;
            }
            history.push(LossRecord {
                round,
                iteration,
                model: Model::R,
                loss: total / steps as f64,
            });
        }
    }
    Ok(TrainedScorer {
        scorer,
        discriminator,
        history,
    })
}

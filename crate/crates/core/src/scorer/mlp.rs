use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ScorerError;
use crate::Scalar;

pub fn sigmoid<F: Scalar>(a: F) -> F {
    if a >= F::zero() {
        F::one() / (F::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (F::one() + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against target `y`, computed
/// as `softplus(logit) - y * logit`.
pub fn bce_with_logit<F: Scalar>(logit: F, y: F) -> F {
    let softplus = logit.max(F::zero()) + (-logit.abs()).exp().ln_1p();
    softplus - y * logit
}

fn kaiming_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, n: usize) -> Vec<F> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| F::of(normal.sample(rng))).collect()
}

/// Two-layer perceptron `sigmoid(w2 · relu(W1 z + b1) + b2)`.
///
/// `w1` is row-major with shape `hidden × input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mlp<F: Scalar> {
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: F,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    pre: Vec<F>,
    pub logit: F,
}

impl<F: Scalar> Mlp<F> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w1: vec![F::zero(); hidden * input_dim],
            b1: vec![F::zero(); hidden],
            w2: vec![F::zero(); hidden],
            b2: F::zero(),
        }
    }

    /// He-normal weights scaled by each layer's fan-in, zero biases.
    pub fn kaiming<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input_dim,
            hidden,
            w1: kaiming_normal(rng, input_dim, hidden * input_dim),
            b1: vec![F::zero(); hidden],
            w2: kaiming_normal(rng, hidden, hidden),
            b2: F::zero(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn params(&self) -> impl Iterator<Item = &F> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(std::iter::once(&mut self.b2))
    }

    fn check(&self, z: &[F]) -> Result<(), ScorerError> {
        if z.len() != self.input_dim {
            return Err(ScorerError::Shape {
                expected: self.input_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, z: &[F]) -> Result<MlpCache<F>, ScorerError> {
        self.check(z)?;
        let mut pre = self.b1.clone();
        let mut logit = self.b2;
        for (h, row) in self.w1.chunks_exact(self.input_dim).enumerate() {
            let mut acc = pre[h];
            for (w, x) in row.iter().zip(z) {
                acc += *w * *x;
            }
            pre[h] = acc;
            if acc > F::zero() {
                logit += self.w2[h] * acc;
            }
        }
        Ok(MlpCache { pre, logit })
    }

    pub fn logit(&self, z: &[F]) -> Result<F, ScorerError> {
        Ok(self.forward_cached(z)?.logit)
    }

    /// Output in (0, 1).
    pub fn forward(&self, z: &[F]) -> Result<F, ScorerError> {
        self.logit(z).map(sigmoid)
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grad` and, if given,
    /// `dlogit * d(logit)/dz` into `dz`.
    pub fn backward(
        &self,
        z: &[F],
        cache: &MlpCache<F>,
        dlogit: F,
        grad: &mut Mlp<F>,
        mut dz: Option<&mut [F]>,
    ) {
        grad.b2 += dlogit;
        for h in 0..self.hidden {
            let pre = cache.pre[h];
            if pre <= F::zero() {
                continue;
            }
            grad.w2[h] += dlogit * pre;
            let dh = dlogit * self.w2[h];
            grad.b1[h] += dh;
            let row = h * self.input_dim;
            for (i, x) in z.iter().enumerate() {
                grad.w1[row + i] += dh * *x;
            }
            if let Some(dz) = dz.as_deref_mut() {
                for (i, g) in dz.iter_mut().enumerate() {
                    *g += dh * self.w1[row + i];
                }
            }
        }
    }

    /// Accumulates `dlogit * d(logit)/dz` into `dz` without touching
    /// parameter gradients.
    pub fn input_grad(&self, cache: &MlpCache<F>, dlogit: F, dz: &mut [F]) {
        for h in 0..self.hidden {
            if cache.pre[h] <= F::zero() {
                continue;
            }
            let dh = dlogit * self.w2[h];
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            for (g, w) in dz.iter_mut().zip(row) {
                *g += dh * *w;
            }
        }
    }

    /// `self -= lr * grad`.
    pub fn sgd(&mut self, grad: &Mlp<F>, lr: F) {
        for (p, g) in self.params_mut().zip(grad.params()) {
            *p -= lr * *g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

/// Trainable per-dimension affine map applied to `concat(z1, z2)` before
/// scoring; its output is the hidden feature the discriminator sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureMap<F: Scalar> {
    pub scale: Vec<F>,
    pub shift: Vec<F>,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![F::one(); dim],
            shift: vec![F::zero(); dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            scale: vec![F::zero(); dim],
            shift: vec![F::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, z: &[F]) -> Result<Vec<F>, ScorerError> {
        if z.len() != self.dim() {
            return Err(ScorerError::Shape {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(z
            .iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(x, (s, b))| *s * *x + *b)
            .collect())
    }

    pub fn params(&self) -> impl Iterator<Item = &F> {
        self.scale.iter().chain(&self.shift)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.scale.iter_mut().chain(&mut self.shift)
    }
}

/// The scoring model: feature map followed by a perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScoringModel<F: Scalar> {
    pub map: FeatureMap<F>,
    pub mlp: Mlp<F>,
}

impl<F: Scalar> ScoringModel<F> {
    pub fn new(mlp: Mlp<F>) -> Self {
        Self {
            map: FeatureMap::identity(mlp.input_dim),
            mlp,
        }
    }

    /// All-zero perceptron with an identity feature map; scores 0.5 everywhere.
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self::new(Mlp::zeros(2 * feature_dim, hidden))
    }

    /// Kaiming-initialised model for features of dimension `feature_dim`
    /// (input `2 * feature_dim`).
    pub fn kaiming(feature_dim: usize, hidden: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::new(Mlp::kaiming(2 * feature_dim, hidden, &mut rng))
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim
    }

    /// Hidden feature handed to the discriminator.
    pub fn embed(&self, z: &[F]) -> Result<Vec<F>, ScorerError> {
        self.map.apply(z)
    }

    pub fn logit(&self, z: &[F]) -> Result<F, ScorerError> {
        self.mlp.logit(&self.embed(z)?)
    }

    /// Difficulty score in (0, 1).
    pub fn score(&self, z: &[F]) -> Result<F, ScorerError> {
        self.logit(z).map(sigmoid)
    }

    pub fn param_count(&self) -> usize {
        2 * self.map.dim() + self.mlp.param_count()
    }

    pub fn params(&self) -> impl Iterator<Item = &F> {
        self.map.params().chain(self.mlp.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.map.params_mut().chain(self.mlp.params_mut())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            map: FeatureMap::zeros(self.map.dim()),
            mlp: Mlp::zeros(self.mlp.input_dim, self.mlp.hidden),
        }
    }

    pub fn sgd(&mut self, grad: &ScoringModel<F>, lr: F) {
        for (p, g) in self.params_mut().zip(grad.params()) {
            *p -= lr * *g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line forward pass written independently of `Mlp::forward`.
    fn reference_forward(m: &Mlp<f64>, z: &[f64]) -> f64 {
        let mut out = m.b2;
        for h in 0..m.hidden {
            let mut pre = m.b1[h];
            for i in 0..m.input_dim {
                pre += m.w1[h * m.input_dim + i] * z[i];
            }
            out += m.w2[h] * pre.max(0.0);
        }
        1.0 / (1.0 + (-out).exp())
    }

    #[test]
    fn zero_params_output_half() {
        let m = Mlp::<f64>::zeros(6, 256);
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.0, 5.0, 9.0]).unwrap(), 0.5);
        let f = Mlp::<f32>::zeros(2, 4);
        assert_eq!(f.forward(&[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn seeded_forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = Mlp::<f64>::kaiming(16, 256, &mut rng);
        for b in m.b1.iter_mut().step_by(3) {
            *b = 0.1;
        }
        m.b2 = -0.2;
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = m.forward(&z).unwrap();
        assert!((got - reference_forward(&m, &z)).abs() < 1e-9);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let m = Mlp::<f64>::zeros(4, 8);
        assert!(matches!(
            m.forward(&[1.0, 2.0]),
            Err(ScorerError::Shape { expected: 4, got: 2 })
        ));
        let s = ScoringModel::<f64>::zeros(2, 8);
        assert!(s.score(&[0.0; 3]).is_err());
    }

    #[test]
    fn output_stays_inside_unit_interval_for_large_logits() {
        let mut m = Mlp::<f64>::zeros(1, 1);
        m.b2 = 30.0;
        let hi = m.forward(&[0.0]).unwrap();
        m.b2 = -30.0;
        let lo = m.forward(&[0.0]).unwrap();
        assert!(hi < 1.0 && lo > 0.0);
    }

    #[test]
    fn bce_matches_direct_formula() {
        for &(a, y) in &[(0.3, 1.0), (-2.0, 0.0), (1.5, 0.1), (-0.7, 0.9)] {
            let p: f64 = 1.0 / (1.0 + f64::exp(-a));
            let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(a, y) - direct).abs() < 1e-12);
        }
        assert!(bce_with_logit(800.0f64, 1.0).is_finite());
        assert!(bce_with_logit(-800.0f64, 0.0).is_finite());
    }

    #[test]
    fn kaiming_scale_tracks_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::<f64>::kaiming(64, 256, &mut rng);
        let var = m.w1.iter().map(|w| w * w).sum::<f64>() / m.w1.len() as f64;
        assert!((var - 2.0 / 64.0).abs() < 0.1 * 2.0 / 64.0);
        assert!(m.b1.iter().all(|&b| b == 0.0));
    }
}

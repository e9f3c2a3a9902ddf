//! Independent reference implementations used to check the library.
//! Nothing here calls into the kernels it is compared against.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use campus_core::scorer::{LabeledFeature, Mlp, ScoringModel};

/// Forward MTLD pass, recomputing the window's TTR from scratch at every
/// token.
pub fn mtld_forward(tokens: &[u32], threshold: f64) -> f64 {
    let mut factors = 0.0;
    let mut start = 0;
    let mut last_ttr = 1.0;
    for end in 1..=tokens.len() {
        let window = &tokens[start..end];
        let distinct = window.iter().collect::<HashSet<_>>().len();
        let ttr = distinct as f64 / window.len() as f64;
        last_ttr = ttr;
        if ttr <= threshold {
            factors += 1.0;
            start = end;
            last_ttr = 1.0;
        }
    }
    if start < tokens.len() {
        factors += (1.0 - last_ttr) / (1.0 - threshold);
    }
    if factors == 0.0 {
        tokens.len() as f64
    } else {
        tokens.len() as f64 / factors
    }
}

pub fn mtld(tokens: &[u32], threshold: f64) -> f64 {
    let rev: Vec<u32> = tokens.iter().rev().copied().collect();
    (mtld_forward(tokens, threshold) + mtld_forward(&rev, threshold)) / 2.0
}

/// Bigram counts kept by hand, with add-alpha smoothing and start padding.
pub struct Bigram {
    pub vocab: usize,
    pub alpha: f64,
    pairs: HashMap<(Option<u32>, u32), u64>,
    totals: HashMap<Option<u32>, u64>,
}

impl Bigram {
    pub fn new(vocab: usize, alpha: f64) -> Self {
        Self {
            vocab,
            alpha,
            pairs: HashMap::new(),
            totals: HashMap::new(),
        }
    }

    pub fn train(&mut self, seq: &[u32]) {
        let mut prev = None;
        for &w in seq {
            *self.pairs.entry((prev, w)).or_default() += 1;
            *self.totals.entry(prev).or_default() += 1;
            prev = Some(w);
        }
    }

    pub fn prob(&self, prev: Option<u32>, w: u32) -> f64 {
        let c = self.pairs.get(&(prev, w)).copied().unwrap_or(0) as f64;
        let t = self.totals.get(&prev).copied().unwrap_or(0) as f64;
        (c + self.alpha) / (t + self.alpha * self.vocab as f64)
    }

    /// `(prod 1/P)^(1/N)` as a direct product.
    pub fn ppl_direct(&self, seq: &[u32]) -> f64 {
        let mut inv = 1.0;
        let mut prev = None;
        for &w in seq {
            inv *= 1.0 / self.prob(prev, w);
            prev = Some(w);
        }
        inv.powf(1.0 / seq.len() as f64)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logit against target `y`, written as
/// `-y ln s(a) - (1 - y) ln(1 - s(a))`.
fn bce(logit: f64, y: f64) -> f64 {
    y * softplus(-logit) + (1.0 - y) * softplus(logit)
}

/// Hidden pre-activations and output logit of a two-layer perceptron.
pub fn perceptron(m: &Mlp<f64>, x: &[f64]) -> (Vec<f64>, f64) {
    let mut pre = vec![0.0; m.hidden];
    let mut logit = m.b2;
    for j in 0..m.hidden {
        let mut a = m.b1[j];
        for k in 0..m.input_dim {
            a += m.w1[j * m.input_dim + k] * x[k];
        }
        pre[j] = a;
        logit += m.w2[j] * relu(a);
    }
    (pre, logit)
}

pub fn mapped(r: &ScoringModel<f64>, z: &[f64]) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(k, &v)| r.map.scale[k] * v + r.map.shift[k])
        .collect()
}

/// Scoring-model objective: smoothed BCE of R plus the weighted
/// label-flipped BCE of D on R's mapped features.
pub fn r_loss(
    r: &ScoringModel<f64>,
    d: &Mlp<f64>,
    batch: &[LabeledFeature<f64>],
    eps: f64,
    weight: f64,
) -> f64 {
    let n = batch.len() as f64;
    let mut total = 0.0;
    for item in batch {
        let h = mapped(r, &item.z);
        let y = if item.label == 1 { 1.0 - eps } else { eps };
        total += bce(perceptron(&r.mlp, &h).1, y) / n;
        let flipped = 1.0 - f64::from(item.label);
        total += weight * bce(perceptron(d, &h).1, flipped) / n;
    }
    total
}

pub fn d_loss(d: &Mlp<f64>, batch: &[LabeledFeature<f64>]) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|item| bce(perceptron(d, &item.z).1, f64::from(item.label)) / n)
        .sum()
}

/// Smallest |pre-activation| over every hidden unit the objective touches.
pub fn kink_margin(r: &ScoringModel<f64>, d: &Mlp<f64>, batch: &[LabeledFeature<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for item in batch {
        let h = mapped(r, &item.z);
        for a in perceptron(&r.mlp, &h).0.into_iter().chain(perceptron(d, &h).0) {
            m = m.min(a.abs());
        }
    }
    m
}

pub fn mlp_params(m: &Mlp<f64>) -> Vec<f64> {
    let mut v = m.w1.clone();
    v.extend(&m.b1);
    v.extend(&m.w2);
    v.push(m.b2);
    v
}

pub fn set_mlp_param(m: &mut Mlp<f64>, i: usize, value: f64) {
    let (a, b, c) = (m.w1.len(), m.b1.len(), m.w2.len());
    if i < a {
        m.w1[i] = value;
    } else if i < a + b {
        m.b1[i - a] = value;
    } else if i < a + b + c {
        m.w2[i - a - b] = value;
    } else {
        m.b2 = value;
    }
}

pub fn scorer_params(r: &ScoringModel<f64>) -> Vec<f64> {
    let mut v = r.map.scale.clone();
    v.extend(&r.map.shift);
    v.extend(mlp_params(&r.mlp));
    v
}

pub fn set_scorer_param(r: &mut ScoringModel<f64>, i: usize, value: f64) {
    let k = r.map.scale.len();
    if i < k {
        r.map.scale[i] = value;
    } else if i < 2 * k {
        r.map.shift[i - k] = value;
    } else {
        set_mlp_param(&mut r.mlp, i - 2 * k, value);
    }
}

/// Central differences of `f` around `params`, perturbing one entry at a time.
pub fn numeric_gradient<M: Clone>(
    model: &M,
    params: &[f64],
    set: impl Fn(&mut M, usize, f64),
    f: impl Fn(&M) -> f64,
    h: f64,
) -> Vec<f64> {
    let mut probe = model.clone();
    (0..params.len())
        .map(|i| {
            set(&mut probe, i, params[i] + h);
            let up = f(&probe);
            set(&mut probe, i, params[i] - h);
            let down = f(&probe);
            set(&mut probe, i, params[i]);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst per-entry relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

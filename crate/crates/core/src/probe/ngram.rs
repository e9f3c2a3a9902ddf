use std::collections::HashMap;

use super::{sequence_features, Features, Probe, ProbeError, FEATURE_DIM};
use crate::corpus::UNK_ID;

/// Padding id for contexts that reach before the first token.
const BOS: u32 = u32::MAX;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Tables {
    contexts: HashMap<Box<[u32]>, ContextCounts>,
}

impl Tables {
    fn get(&self, ctx: &[u32]) -> Option<&ContextCounts> {
        self.contexts.get(ctx)
    }
}

/// Additively smoothed n-gram language model over a fixed vocabulary.
///
/// `P(w | ctx) = (c(ctx, w) + alpha) / (c(ctx) + alpha * V)`, where the
/// context is the previous `order - 1` tokens, padded at the start.
#[derive(Debug, Clone)]
pub struct NGramProbe {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    current: Tables,
    initial: Tables,
}

impl NGramProbe {
    /// # Panics
    /// If `order == 0`, `alpha <= 0` or `vocab_size == 0`.
    pub fn new(order: usize, alpha: f64, vocab_size: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        assert!(alpha > 0.0 && alpha.is_finite(), "smoothing must be positive");
        assert!(vocab_size >= 1, "vocabulary must not be empty");
        Self {
            order,
            alpha,
            vocab_size,
            current: Tables::default(),
            initial: Tables::default(),
        }
    }

    /// Bigram with add-one smoothing.
    pub fn bigram(vocab_size: usize) -> Self {
        Self::new(2, 1.0, vocab_size)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn clamp(&self, token: u32) -> u32 {
        if (token as usize) < self.vocab_size {
            token
        } else {
            UNK_ID
        }
    }

    fn padded(&self, tokens: &[u32]) -> Vec<u32> {
        let mut seq = vec![BOS; self.order - 1];
        seq.extend(tokens.iter().map(|&t| self.clamp(t)));
        seq
    }

    fn prob_in(&self, tables: &Tables, ctx: &[u32], token: u32) -> f64 {
        let v = self.vocab_size as f64;
        match tables.get(ctx) {
            Some(c) => {
                let hits = c.next.get(&token).copied().unwrap_or(0) as f64;
                (hits + self.alpha) / (c.total as f64 + self.alpha * v)
            }
            None => 1.0 / v,
        }
    }

    /// Smoothed `P(token | ctx)` under the current state. `ctx` must hold
    /// `order - 1` ids; use `u32::MAX` for start padding.
    pub fn prob(&self, ctx: &[u32], token: u32) -> f64 {
        self.prob_in(&self.current, ctx, self.clamp(token))
    }

    /// Full conditional distribution for `ctx` under the current state.
    pub fn distribution(&self, ctx: &[u32]) -> Vec<f64> {
        (0..self.vocab_size as u32)
            .map(|w| self.prob_in(&self.current, ctx, w))
            .collect()
    }

    /// Raw count `c(ctx, token)` under the current state.
    pub fn count(&self, ctx: &[u32], token: u32) -> u64 {
        self.current
            .get(ctx)
            .and_then(|c| c.next.get(&token).copied())
            .unwrap_or(0)
    }

    fn scan(&self, tables: &Tables, tokens: &[u32]) -> (Vec<f64>, Vec<bool>) {
        let seq = self.padded(tokens);
        let k = self.order - 1;
        let mut logprobs = Vec::with_capacity(tokens.len());
        let mut seen = Vec::with_capacity(tokens.len());
        for m in 0..tokens.len() {
            let ctx = &seq[m..m + k];
            let w = seq[m + k];
            logprobs.push(self.prob_in(tables, ctx, w).ln());
            seen.push(tables.get(ctx).is_some_and(|c| c.total > 0));
        }
        (logprobs, seen)
    }

    fn features_in(&self, tables: &Tables, tokens: &[u32], mask_from: usize) -> Vec<f64> {
        let (logprobs, seen) = self.scan(tables, tokens);
        let clamped: Vec<u32> = tokens.iter().map(|&t| self.clamp(t)).collect();
        sequence_features(&clamped, &logprobs, &seen, mask_from, self.vocab_size)
    }

    /// Logprobs under the frozen initial state.
    pub fn initial_logprobs(&self, tokens: &[u32]) -> Vec<f64> {
        self.scan(&self.initial, tokens).0
    }
}

impl Probe for NGramProbe {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn logprobs(&mut self, tokens: &[u32], _mask_from: usize) -> Result<Vec<f64>, ProbeError> {
        Ok(self.scan(&self.current, tokens).0)
    }

    fn update(&mut self, batch: &[&[u32]]) -> Result<(), ProbeError> {
        let k = self.order - 1;
        for tokens in batch {
            let seq = self.padded(tokens);
            for m in 0..tokens.len() {
                let ctx = &seq[m..m + k];
                let w = seq[m + k];
                let entry = match self.current.contexts.get_mut(ctx) {
                    Some(e) => e,
                    None => self
                        .current
                        .contexts
                        .entry(ctx.to_vec().into_boxed_slice())
                        .or_default(),
                };
                entry.total += 1;
                *entry.next.entry(w).or_insert(0) += 1;
            }
        }
        Ok(())
    }

    fn features(&mut self, tokens: &[u32], mask_from: usize) -> Result<Features, ProbeError> {
        Ok(Features {
            z1: self.features_in(&self.initial, tokens, mask_from),
            z2: self.features_in(&self.current, tokens, mask_from),
        })
    }

    fn snapshot(&mut self) -> Result<(), ProbeError> {
        self.initial = self.current.clone();
        Ok(())
    }
}

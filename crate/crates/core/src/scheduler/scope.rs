use serde::{Deserialize, Serialize};

use super::SchedulerError;
use crate::Scalar;

/// Learning-scope parameters: initial fraction `s1`, progression exponent
/// `p` and number of steps `total_steps` per schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScopeConfig<F: Scalar> {
    pub s1: F,
    pub p: F,
    pub total_steps: usize,
}

impl<F: Scalar> Default for ScopeConfig<F> {
    fn default() -> Self {
        Self {
            s1: F::of(0.01),
            p: F::of(2.0),
            total_steps: 100,
        }
    }
}

impl<F: Scalar> ScopeConfig<F> {
    pub fn new(s1: F, p: F, total_steps: usize) -> Result<Self, SchedulerError> {
        let cfg = Self { s1, p, total_steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_steps(total_steps: usize) -> Self {
        Self {
            total_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.s1 > F::zero() && self.s1 < F::one()) {
            return Err(SchedulerError::Config(format!(
                "s1 must lie in (0, 1), got {:?}",
                self.s1
            )));
        }
        if !(self.p >= F::one() && self.p.is_finite()) {
            return Err(SchedulerError::Config(format!("p must be >= 1, got {:?}", self.p)));
        }
        if self.total_steps == 0 {
            return Err(SchedulerError::Config("T must be at least 1".into()));
        }
        Ok(())
    }

    /// Fraction of a schedule available at step `t` (1-based):
    /// `s(1) = s1`, otherwise `min(1, (t (1 - s1^p) / T + s1^p)^(1/p))`.
    pub fn scope(&self, t: usize) -> Result<F, SchedulerError> {
        let total = self.total_steps;
        match t {
            _ if t == 0 || t > total => Err(SchedulerError::StepOutOfRange { t, total }),
            _ if t == total => Ok(F::one()),
            1 => Ok(self.s1),
            _ => {
                let base = self.s1.powf(self.p);
                let inner = F::of_usize(t) * (F::one() - base) / F::of_usize(total) + base;
                Ok(F::one().min(inner.powf(F::one() / self.p)))
            }
        }
    }

    /// `[s(t - 1), s(t))` for step `t`, with `s(0) = 0`.
    pub fn interval(&self, t: usize) -> Result<(F, F), SchedulerError> {
        let hi = self.scope(t)?;
        let lo = if t == 1 { F::zero() } else { self.scope(t - 1)? };
        Ok((lo, hi))
    }

    /// Order positions `start..end` covered by step `t` for a schedule of `n`
    /// samples: `floor(lo n) .. floor(hi n)`, with `hi = 1` closing at `n`.
    pub fn positions(&self, t: usize, n: usize) -> Result<(usize, usize), SchedulerError> {
        let (lo, hi) = self.interval(t)?;
        Ok((position(lo, n), position(hi, n)))
    }
}

fn position<F: Scalar>(fraction: F, n: usize) -> usize {
    if fraction >= F::one() {
        return n;
    }
    (fraction * F::of_usize(n))
        .floor()
        .to_usize()
        .unwrap_or(0)
        .min(n)
}

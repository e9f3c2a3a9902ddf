use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SchedulerError;

/// How the next sub-curriculum is chosen among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    /// Lowest perplexity.
    #[default]
    Min,
    /// Highest perplexity.
    Max,
    /// Uniformly random (seeded).
    Random,
    /// Round-robin over schedules in index order.
    Sequential,
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Min => "min",
            Self::Max => "max",
            Self::Random => "random",
            Self::Sequential => "sequential",
        })
    }
}

impl FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            "random" => Ok(Self::Random),
            "sequential" => Ok(Self::Sequential),
            other => Err(format!(
                "unknown selection policy `{other}` (min, max, random, sequential)"
            )),
        }
    }
}

/// Schedule index with the minimum perplexity; ties go to the lowest index.
pub fn select_next(candidates: &[(usize, f64)]) -> Result<usize, SchedulerError> {
    candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .map(|c| c.0)
        .ok_or(SchedulerError::NoCandidates)
}

fn select_max(candidates: &[(usize, f64)]) -> Result<usize, SchedulerError> {
    candidates
        .iter()
        .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
        .map(|c| c.0)
        .ok_or(SchedulerError::NoCandidates)
}

/// Stateful chooser implementing a [`SelectionPolicy`].
#[derive(Debug, Clone)]
pub struct Selector {
    policy: SelectionPolicy,
    rng: ChaCha8Rng,
    last: Option<usize>,
}

impl Selector {
    pub fn new(policy: SelectionPolicy, seed: u64) -> Self {
        Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: None,
        }
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    /// Picks a schedule index from `(schedule index, ppl)` candidates.
    pub fn choose(&mut self, candidates: &[(usize, f64)]) -> Result<usize, SchedulerError> {
        if candidates.is_empty() {
            return Err(SchedulerError::NoCandidates);
        }
        let pick = match self.policy {
            SelectionPolicy::Min => select_next(candidates)?,
            SelectionPolicy::Max => select_max(candidates)?,
            SelectionPolicy::Random => candidates[self.rng.random_range(0..candidates.len())].0,
            SelectionPolicy::Sequential => {
                let mut indices: Vec<usize> = candidates.iter().map(|c| c.0).collect();
                indices.sort_unstable();
                match self.last {
                    Some(last) => indices
                        .iter()
                        .copied()
                        .find(|&i| i > last)
                        .unwrap_or(indices[0]),
                    None => indices[0],
                }
            }
        };
        self.last = Some(pick);
        Ok(pick)
    }
}

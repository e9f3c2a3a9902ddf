//! Dynamic curriculum scheduling: learning scope, schedule segmentation,
//! candidate perplexity, selection and re-sorting of competence-aware
//! schedules.

mod ppl;
mod scope;
mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{cmp_value_then_id, Schedule};
use crate::probe::ProbeError;

pub use ppl::{batch_ppl, batch_ppl_of, sample_ppl};
pub use scope::ScopeConfig;
pub use select::{select_next, SelectionPolicy, Selector};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid scope config: {0}")]
    Config(String),
    #[error("step {t} outside 1..={total}")]
    StepOutOfRange { t: usize, total: usize },
    #[error("batch has no tokens to score")]
    EmptyBatch,
    #[error("no candidate schedules left")]
    NoCandidates,
    #[error("schedule d{0} is not competence-aware")]
    NotCompetenceAware(usize),
    #[error("consumed fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// One slice of a schedule: the training batch for step `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCurriculum {
    /// Metric index of the schedule (1-based).
    pub schedule: usize,
    pub step: usize,
    pub lo: f64,
    pub hi: f64,
    /// Order positions `start..end`.
    pub start: usize,
    pub end: usize,
    pub ids: Vec<usize>,
}

impl SubCurriculum {
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Slice of `schedule` for step `t`.
pub fn sub_curriculum(
    schedule: &Schedule,
    cfg: &ScopeConfig<f64>,
    t: usize,
) -> Result<SubCurriculum, SchedulerError> {
    let (lo, hi) = cfg.interval(t)?;
    let (start, end) = cfg.positions(t, schedule.len())?;
    Ok(SubCurriculum {
        schedule: schedule.index(),
        step: t,
        lo,
        hi,
        start,
        end,
        ids: schedule.order[start..end].to_vec(),
    })
}

/// All `T` slices of a schedule. Slices left empty by rounding are kept.
pub fn segment(
    schedule: &Schedule,
    cfg: &ScopeConfig<f64>,
) -> Result<Vec<SubCurriculum>, SchedulerError> {
    cfg.validate()?;
    (1..=cfg.total_steps)
        .map(|t| sub_curriculum(schedule, cfg, t))
        .collect()
}

/// Re-sorts the order positions from `cut` on by `values[id]` (ascending,
/// ties by id). With `window`, only positions `cut..cut + window` move.
pub fn resort_from(
    schedule: &mut Schedule,
    cut: usize,
    values: &[f64],
    window: Option<usize>,
) -> Result<(), SchedulerError> {
    if !schedule.competence_aware() {
        return Err(SchedulerError::NotCompetenceAware(schedule.index()));
    }
    let n = schedule.len();
    let start = cut.min(n);
    let end = window.map_or(n, |w| start.saturating_add(w).min(n));
    schedule.order[start..end]
        .sort_by(|&a, &b| cmp_value_then_id((values[a], a), (values[b], b)));
    Ok(())
}

/// Re-sorts everything after the consumed prefix `floor(fraction * N)`.
pub fn resort_tail(
    schedule: &mut Schedule,
    fraction: f64,
    values: &[f64],
) -> Result<(), SchedulerError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SchedulerError::Fraction(fraction));
    }
    let cut = (fraction * schedule.len() as f64).floor() as usize;
    resort_from(schedule, cut, values, None)
}

/// Per-schedule bookkeeping of the running curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    /// Next step of each schedule, 1-based; `> T` once exhausted.
    pub cursors: Vec<usize>,
    /// Last computed candidate perplexity of each schedule.
    pub ppl: Vec<Option<f64>>,
}

/// Several schedules advanced independently under one scope config.
#[derive(Debug, Clone)]
pub struct CurriculumScheduler {
    pub schedules: Vec<Schedule>,
    pub scope: ScopeConfig<f64>,
    pub state: SchedulerState,
}

impl CurriculumScheduler {
    pub fn new(schedules: Vec<Schedule>, scope: ScopeConfig<f64>) -> Result<Self, SchedulerError> {
        scope.validate()?;
        let k = schedules.len();
        let mut s = Self {
            schedules,
            scope,
            state: SchedulerState {
                cursors: vec![1; k],
                ppl: vec![None; k],
            },
        };
        for slot in 0..k {
            s.settle(slot)?;
        }
        Ok(s)
    }

    /// Moves the cursor of `slot` past empty slices.
    fn settle(&mut self, slot: usize) -> Result<(), SchedulerError> {
        let n = self.schedules[slot].len();
        while self.state.cursors[slot] <= self.scope.total_steps {
            let (start, end) = self.scope.positions(self.state.cursors[slot], n)?;
            if end > start {
                break;
            }
            self.state.cursors[slot] += 1;
        }
        if self.is_exhausted(slot) {
            self.state.ppl[slot] = None;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.schedules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedules.is_empty()
    }

    pub fn is_exhausted(&self, slot: usize) -> bool {
        self.state.cursors[slot] > self.scope.total_steps
    }

    /// Slots whose schedules still have slices left.
    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&s| !self.is_exhausted(s)).collect()
    }

    pub fn slot_of(&self, schedule_index: usize) -> Option<usize> {
        self.schedules.iter().position(|s| s.index() == schedule_index)
    }

    /// Current non-empty slice of `slot`, or `None` once exhausted.
    pub fn candidate(&self, slot: usize) -> Result<Option<SubCurriculum>, SchedulerError> {
        if self.is_exhausted(slot) {
            return Ok(None);
        }
        sub_curriculum(&self.schedules[slot], &self.scope, self.state.cursors[slot]).map(Some)
    }

    /// Moves `slot` to its next non-empty slice.
    pub fn advance(&mut self, slot: usize) -> Result<(), SchedulerError> {
        self.state.cursors[slot] += 1;
        self.state.ppl[slot] = None;
        self.settle(slot)
    }

    /// `(schedule index, ppl)` of every active slot with a cached perplexity.
    pub fn candidates(&self) -> Vec<(usize, f64)> {
        self.active()
            .into_iter()
            .filter_map(|slot| self.state.ppl[slot].map(|p| (self.schedules[slot].index(), p)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;

    fn schedule(metric: Metric, n: usize) -> Schedule {
        Schedule {
            metric,
            order: (0..n).collect(),
        }
    }

    fn flatten(slices: &[SubCurriculum]) -> Vec<usize> {
        slices.iter().flat_map(|s| s.ids.iter().copied()).collect()
    }

    #[test]
    fn single_step_covers_everything() {
        let s = schedule(Metric::Length, 7);
        let slices = segment(&s, &ScopeConfig::with_steps(1)).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!((slices[0].lo, slices[0].hi), (0.0, 1.0));
        assert_eq!(slices[0].ids, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn hundred_steps_partition_thousand() {
        let s = schedule(Metric::Mtld, 1000);
        let slices = segment(&s, &ScopeConfig::with_steps(100)).unwrap();
        assert_eq!(slices.iter().map(|s| s.ids.len()).sum::<usize>(), 1000);
        assert_eq!(flatten(&slices), (0..1000).collect::<Vec<_>>());
        assert!(slices.windows(2).all(|w| w[0].end == w[1].start));
    }

    #[test]
    fn tiny_dataset_keeps_empty_slices() {
        let s = schedule(Metric::Length, 3);
        let slices = segment(&s, &ScopeConfig::with_steps(10)).unwrap();
        assert_eq!(slices.len(), 10);
        assert!(slices.iter().any(SubCurriculum::is_empty));
        assert_eq!(flatten(&slices), vec![0, 1, 2]);
    }

    #[test]
    fn resort_rejects_heuristic_schedules() {
        let mut s = schedule(Metric::Length, 4);
        assert!(matches!(
            resort_tail(&mut s, 0.0, &[0.0; 4]),
            Err(SchedulerError::NotCompetenceAware(1))
        ));
    }

    #[test]
    fn resort_full_and_empty_tail() {
        let mut s = schedule(Metric::Loss, 5);
        let reversed = [5.0, 4.0, 3.0, 2.0, 1.0];
        resort_tail(&mut s, 1.0, &reversed).unwrap();
        assert_eq!(s.order, vec![0, 1, 2, 3, 4]);
        resort_tail(&mut s, 0.0, &reversed).unwrap();
        assert_eq!(s.order, vec![4, 3, 2, 1, 0]);
        assert!(resort_tail(&mut s, 1.5, &reversed).is_err());
    }

    #[test]
    fn resort_window_limits_movement() {
        let mut s = schedule(Metric::Score, 6);
        let values = [6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        resort_from(&mut s, 1, &values, Some(3)).unwrap();
        assert_eq!(s.order, vec![0, 3, 2, 1, 4, 5]);
    }

    #[test]
    fn scheduler_skips_empty_slices_and_exhausts() {
        let mut sched =
            CurriculumScheduler::new(vec![schedule(Metric::Length, 3)], ScopeConfig::with_steps(10))
                .unwrap();
        let mut seen = Vec::new();
        let mut steps = Vec::new();
        while let Some(c) = sched.candidate(0).unwrap() {
            assert!(!c.is_empty());
            steps.push(c.step);
            seen.extend(c.ids);
            sched.advance(0).unwrap();
        }
        assert_eq!(seen, vec![0, 1, 2]);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert!(sched.active().is_empty());
    }
}

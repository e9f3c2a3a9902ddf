//! End-to-end curriculum loop, its trace and the reports derived from it.

mod report;
mod trace;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::metrics::{
    build_schedules, compute_metric, DifficultyVector, Metric, MetricError, DEFAULT_TTR_THRESHOLD,
};
use crate::probe::{Probe, ProbeError};
use crate::scheduler::{
    batch_ppl, resort_from, CurriculumScheduler, ScopeConfig, SchedulerError, SelectionPolicy,
    Selector,
};
use crate::scorer::ScoringModel;

pub use report::{composition_report, convergence_report, CompositionReport, CONVERGENCE_HEADER};
pub use trace::{CurriculumTrace, JsonlSink, TraceMeta, TraceSink, TraceStep};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("probe failed after {completed} steps: {source}")]
    Probe {
        completed: usize,
        #[source]
        source: ProbeError,
    },
    #[error("trace output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    fn probe(completed: usize) -> impl FnOnce(ProbeError) -> RunError {
        move |source| RunError::Probe { completed, source }
    }

    /// The underlying probe error, wherever it surfaced.
    pub fn probe_error(&self) -> Option<&ProbeError> {
        match self {
            RunError::Probe { source, .. } => Some(source),
            RunError::Metric(MetricError::Probe(e)) => Some(e),
            RunError::Metric(MetricError::Sample { source, .. }) => match source.as_ref() {
                MetricError::Probe(e) => Some(e),
                _ => None,
            },
            RunError::Scheduler(SchedulerError::Probe(e)) => Some(e),
            _ => None,
        }
    }
}

/// When the loop stops. It always stops once every schedule is exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    #[default]
    AllExhausted,
    /// Stop after `patience` consecutive trained steps whose relative loss
    /// improvement is below `rel_tol`.
    Plateau { rel_tol: f64, patience: usize },
    MaxSteps(usize),
}

/// Which candidate perplexities are recomputed after a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PplRefresh {
    /// Only the schedule that was just advanced.
    #[default]
    Selected,
    /// Every active schedule.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scope: ScopeConfig<f64>,
    pub metrics: Vec<Metric>,
    pub policy: SelectionPolicy,
    pub dedup: bool,
    pub convergence: Convergence,
    pub refresh: PplRefresh,
    /// Limit fresh re-scoring after a competence-aware step to this many positions.
    pub resort_window: Option<usize>,
    pub mtld_threshold: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scope: ScopeConfig::default(),
            metrics: Metric::ALL.to_vec(),
            policy: SelectionPolicy::Min,
            dedup: false,
            convergence: Convergence::AllExhausted,
            refresh: PplRefresh::Selected,
            resort_window: None,
            mtld_threshold: DEFAULT_TTR_THRESHOLD,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.scope.validate()?;
        if self.metrics.is_empty() {
            return Err(RunError::Config("metric set is empty".into()));
        }
        let mut seen = HashSet::new();
        if !self.metrics.iter().all(|m| seen.insert(*m)) {
            return Err(RunError::Config("metric set has duplicates".into()));
        }
        match self.convergence {
            Convergence::Plateau { patience: 0, .. } => {
                return Err(RunError::Config("plateau patience must be at least 1".into()))
            }
            Convergence::Plateau { rel_tol, .. } if !(rel_tol >= 0.0) => {
                return Err(RunError::Config("plateau tolerance must be non-negative".into()))
            }
            _ => {}
        }
        if !(self.mtld_threshold > 0.0 && self.mtld_threshold < 1.0) {
            return Err(RunError::Config("MTLD threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean per-token negative log-likelihood of `ids` under the probe.
pub fn mean_token_loss(
    ids: &[usize],
    corpus: &Corpus,
    probe: &mut dyn Probe,
) -> Result<Option<f64>, ProbeError> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for &id in ids {
        let e = corpus.encoded(id);
        let lps = probe.logprobs(&e.rendered, e.target_start())?;
        total -= lps.iter().sum::<f64>();
        tokens += lps.len();
    }
    Ok((tokens > 0).then(|| total / tokens as f64))
}

/// Token-weighted cross-entropy of the whole corpus under the probe.
pub fn corpus_cross_entropy(corpus: &Corpus, probe: &mut dyn Probe) -> Result<f64, ProbeError> {
    let ids: Vec<usize> = (0..corpus.len()).collect();
    Ok(mean_token_loss(&ids, corpus, probe)?.unwrap_or(0.0))
}

/// Baseline: trains on the whole corpus once, in a seeded random order, in
/// batches of `batch` samples.
pub fn train_shuffled(
    corpus: &Corpus,
    probe: &mut dyn Probe,
    batch: usize,
    seed: u64,
) -> Result<(), ProbeError> {
    let mut ids: Vec<usize> = (0..corpus.len()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for chunk in ids.chunks(batch.max(1)) {
        let refs: Vec<&[u32]> = chunk
            .iter()
            .map(|&id| corpus.encoded(id).rendered.as_slice())
            .collect();
        probe.update(&refs)?;
    }
    Ok(())
}

struct Loop<'a> {
    corpus: &'a Corpus,
    probe: &'a mut dyn Probe,
    scorer: Option<&'a ScoringModel<f64>>,
    config: &'a RunConfig,
    table: Vec<DifficultyVector>,
    scheduler: CurriculumScheduler,
    completed: usize,
}

impl Loop<'_> {
    fn refresh_ppl(&mut self, slot: usize) -> Result<(), RunError> {
        let completed = self.completed;
        if let Some(c) = self.scheduler.candidate(slot)? {
            let ppl = batch_ppl(&c.ids, self.corpus, self.probe).map_err(|e| match e {
                SchedulerError::Probe(p) => RunError::probe(completed)(p),
                other => other.into(),
            })?;
            self.scheduler.state.ppl[slot] = Some(ppl);
        }
        Ok(())
    }

    /// Recomputes the competence-aware metric over the unconsumed part of
    /// `slot`'s order and re-sorts it.
    fn resort(&mut self, slot: usize, cut: usize) -> Result<(), RunError> {
        let metric = self.scheduler.schedules[slot].metric;
        let n = self.scheduler.schedules[slot].len();
        let end = self
            .config
            .resort_window
            .map_or(n, |w| cut.saturating_add(w).min(n));
        let tail: Vec<usize> = self.scheduler.schedules[slot].order[cut.min(n)..end].to_vec();
        for id in tail {
            let v = compute_metric(
                metric,
                self.corpus.encoded(id),
                Some(&mut *self.probe),
                self.scorer,
                self.config.mtld_threshold,
            )
            .map_err(|e| match e {
                MetricError::Probe(p) => RunError::probe(self.completed)(p),
                other => RunError::Metric(MetricError::Sample {
                    id,
                    metric,
                    source: Box::new(other),
                }),
            })?;
            self.table[id].set(metric, v);
        }
        let values: Vec<f64> = self
            .table
            .iter()
            .map(|r| r.value(metric).unwrap_or(f64::INFINITY))
            .collect();
        resort_from(
            &mut self.scheduler.schedules[slot],
            cut,
            &values,
            self.config.resort_window,
        )?;
        Ok(())
    }
}

/// Runs the curriculum: sort by every metric, then repeatedly train on the
/// candidate slice chosen by the policy, re-sorting competence-aware
/// schedules after they are used. Each step is passed to `sink` as soon as
/// it is decided.
pub fn run(
    corpus: &Corpus,
    probe: &mut dyn Probe,
    scorer: Option<&ScoringModel<f64>>,
    config: &RunConfig,
    mut sink: Option<&mut dyn TraceSink>,
) -> Result<CurriculumTrace, RunError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(RunError::Config("dataset is empty".into()));
    }
    if config.metrics.contains(&Metric::Score) != scorer.is_some() {
        return Err(RunError::Config(
            "a scorer must be supplied exactly when d4 is in the metric set".into(),
        ));
    }
    let mut metrics = config.metrics.clone();
    metrics.sort();

    let (schedules, table) = build_schedules(
        corpus,
        &metrics,
        Some(&mut *probe),
        scorer,
        config.mtld_threshold,
    )
    .map_err(|e| match e {
        MetricError::Probe(p) => RunError::probe(0)(p),
        other => other.into(),
    })?;
    let scheduler = CurriculumScheduler::new(schedules, config.scope)?;
    let mut lp = Loop {
        corpus,
        probe,
        scorer,
        config,
        table,
        scheduler,
        completed: 0,
    };
    for slot in 0..lp.scheduler.len() {
        lp.refresh_ppl(slot)?;
    }

    let mut selector = Selector::new(config.policy, config.seed);
    let mut trained: HashSet<usize> = HashSet::new();
    let mut steps = Vec::new();
    let mut last_loss: Option<f64> = None;
    let mut flat = 0usize;

    loop {
        if let Convergence::MaxSteps(max) = config.convergence {
            if steps.len() >= max {
                break;
            }
        }
        let candidates = lp.scheduler.candidates();
        if candidates.is_empty() {
            break;
        }
        let chosen = selector.choose(&candidates)?;
        let slot = lp.scheduler.slot_of(chosen).expect("candidate comes from a slot");
        let sub = lp
            .scheduler
            .candidate(slot)?
            .expect("active slot has a candidate");

        let ids: Vec<usize> = if config.dedup {
            sub.ids.iter().copied().filter(|id| !trained.contains(id)).collect()
        } else {
            sub.ids.clone()
        };
        let mut loss = None;
        if !ids.is_empty() {
            let batch: Vec<&[u32]> = ids
                .iter()
                .map(|&id| corpus.encoded(id).rendered.as_slice())
                .collect();
            lp.probe
                .update(&batch)
                .map_err(RunError::probe(lp.completed))?;
            trained.extend(ids.iter().copied());
            loss = mean_token_loss(&ids, corpus, lp.probe).map_err(RunError::probe(lp.completed))?;
            lp.table.iter_mut().for_each(DifficultyVector::mark_stale);
            if lp.scheduler.schedules[slot].competence_aware() {
                lp.resort(slot, sub.end)?;
            }
        }

        let step = TraceStep {
            step: steps.len() + 1,
            schedule: chosen,
            t: sub.step,
            lo: sub.lo,
            hi: sub.hi,
            ids,
            ppl: candidates
                .iter()
                .map(|&(i, p)| (i.to_string(), p))
                .collect::<BTreeMap<_, _>>(),
            loss,
        };
        if let Some(s) = sink.as_deref_mut() {
            s.record(&step)?;
        }
        steps.push(step);
        lp.completed = steps.len();

        lp.scheduler.advance(slot)?;
        match config.refresh {
            PplRefresh::Selected => lp.refresh_ppl(slot)?,
            PplRefresh::All => {
                for s in lp.scheduler.active() {
                    lp.refresh_ppl(s)?;
                }
            }
        }

        if let (Convergence::Plateau { rel_tol, patience }, Some(cur)) = (config.convergence, loss) {
            if let Some(prev) = last_loss {
                let improvement = (prev - cur) / prev.abs().max(f64::MIN_POSITIVE);
                flat = if improvement < rel_tol { flat + 1 } else { 0 };
                if flat >= patience {
                    break;
                }
            }
            last_loss = Some(cur);
        }
    }

    Ok(CurriculumTrace {
        meta: TraceMeta {
            config: config.clone(),
            dataset_digest: corpus.digest(),
            samples: corpus.len(),
            vocab_size: corpus.vocab_size(),
        },
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{Features, NGramProbe};
    use crate::synth;

    fn corpus(n: usize) -> Corpus {
        Corpus::new(synth::dataset(n, 3))
    }

    fn config(metrics: &[Metric], t: usize) -> RunConfig {
        RunConfig {
            scope: ScopeConfig::with_steps(t),
            metrics: metrics.to_vec(),
            ..RunConfig::default()
        }
    }

    fn run_bigram(c: &Corpus, cfg: &RunConfig, scorer: Option<&ScoringModel<f64>>) -> CurriculumTrace {
        let mut probe = NGramProbe::bigram(c.vocab_size());
        run(c, &mut probe, scorer, cfg, None).unwrap()
    }

    #[test]
    fn single_metric_is_plain_curriculum() {
        let c = corpus(60);
        let trace = run_bigram(&c, &config(&[Metric::Length], 10), None);
        assert!(trace.steps.iter().all(|s| s.schedule == 1));
        assert!(trace.len() <= 10);
        let mut seen: Vec<usize> = trace.occurrences().collect();
        seen.sort();
        assert_eq!(seen, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn schedules_are_consumed_in_order_and_cover_the_data() {
        let c = corpus(90);
        let scorer = ScoringModel::kaiming(crate::probe::FEATURE_DIM, 16, 1);
        let trace = run_bigram(&c, &config(&Metric::ALL, 12), Some(&scorer));
        assert!(trace.len() <= 4 * 12);
        for m in 1..=4 {
            let steps: Vec<&TraceStep> = trace.steps_of(m).collect();
            assert!(steps.windows(2).all(|w| w[0].t < w[1].t && w[0].hi < w[1].hi));
            let mut ids: Vec<usize> = steps.iter().flat_map(|s| s.ids.iter().copied()).collect();
            ids.sort();
            assert_eq!(ids, (0..90).collect::<Vec<_>>(), "schedule {m}");
        }
    }

    #[test]
    fn dedup_trains_each_sample_once() {
        let c = corpus(60);
        let mut cfg = config(&[Metric::Length, Metric::Mtld, Metric::Loss], 8);
        cfg.dedup = true;
        let trace = run_bigram(&c, &cfg, None);
        let mut ids: Vec<usize> = trace.occurrences().collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(n, 60);
        assert!(trace.steps.iter().any(|s| s.skipped()));
        assert!(trace.steps.iter().filter(|s| s.skipped()).all(|s| s.loss.is_none()));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let c = corpus(45);
        let mut cfg = config(&[Metric::Length, Metric::Mtld, Metric::Loss], 6);
        cfg.policy = SelectionPolicy::Random;
        cfg.seed = 11;
        assert_eq!(run_bigram(&c, &cfg, None), run_bigram(&c, &cfg, None));
    }

    #[test]
    fn scorer_must_match_metric_set() {
        let c = corpus(9);
        let mut p = NGramProbe::bigram(c.vocab_size());
        let err = run(&c, &mut p, None, &config(&Metric::ALL, 3), None).unwrap_err();
        assert!(matches!(err, RunError::Config(_)));
        let scorer = ScoringModel::zeros(crate::probe::FEATURE_DIM, 4);
        let err = run(&c, &mut p, Some(&scorer), &config(&[Metric::Length], 3), None).unwrap_err();
        assert!(matches!(err, RunError::Config(_)));
    }

    #[test]
    fn max_steps_caps_the_trace() {
        let c = corpus(60);
        let mut cfg = config(&[Metric::Length, Metric::Mtld], 10);
        cfg.convergence = Convergence::MaxSteps(3);
        assert_eq!(run_bigram(&c, &cfg, None).len(), 3);
    }

    #[test]
    fn plateau_stops_a_flat_run() {
        let c = corpus(60);
        let mut cfg = config(&[Metric::Length], 20);
        cfg.convergence = Convergence::Plateau {
            rel_tol: f64::INFINITY,
            patience: 2,
        };
        assert_eq!(run_bigram(&c, &cfg, None).len(), 3);
    }

    #[test]
    fn refresh_all_keeps_every_candidate_current() {
        let c = corpus(60);
        let mut cfg = config(&[Metric::Length, Metric::Mtld], 5);
        cfg.refresh = PplRefresh::All;
        let trace = run_bigram(&c, &cfg, None);
        let mut probe = NGramProbe::bigram(c.vocab_size());
        let lit = run(&c, &mut probe, None, &config(&[Metric::Length, Metric::Mtld], 5), None)
            .unwrap();
        assert_eq!(trace.occurrences().count(), lit.occurrences().count());
    }

    struct Failing {
        inner: NGramProbe,
        updates_left: usize,
    }

    impl Probe for Failing {
        fn feature_dim(&self) -> usize {
            self.inner.feature_dim()
        }
        fn logprobs(&mut self, tokens: &[u32], mask_from: usize) -> Result<Vec<f64>, ProbeError> {
            self.inner.logprobs(tokens, mask_from)
        }
        fn update(&mut self, batch: &[&[u32]]) -> Result<(), ProbeError> {
            if self.updates_left == 0 {
                return Err(ProbeError::Closed);
            }
            self.updates_left -= 1;
            self.inner.update(batch)
        }
        fn features(&mut self, tokens: &[u32], mask_from: usize) -> Result<Features, ProbeError> {
            self.inner.features(tokens, mask_from)
        }
        fn snapshot(&mut self) -> Result<(), ProbeError> {
            self.inner.snapshot()
        }
    }

    #[test]
    fn probe_failure_keeps_recorded_steps() {
        let c = corpus(60);
        let mut probe = Failing {
            inner: NGramProbe::bigram(c.vocab_size()),
            updates_left: 3,
        };
        let mut sink = JsonlSink::new(Vec::new());
        let err = run(&c, &mut probe, None, &config(&[Metric::Length], 10), Some(&mut sink))
            .unwrap_err();
        assert!(matches!(err, RunError::Probe { completed: 3, .. }));
        let text = String::from_utf8(sink.into_inner()).unwrap();
        assert_eq!(CurriculumTrace::parse_jsonl(&text).unwrap().len(), 3);
    }

    #[test]
    fn baseline_training_lowers_cross_entropy() {
        let c = corpus(60);
        let mut probe = NGramProbe::bigram(c.vocab_size());
        let before = corpus_cross_entropy(&c, &mut probe).unwrap();
        train_shuffled(&c, &mut probe, 8, 0).unwrap();
        assert!(corpus_cross_entropy(&c, &mut probe).unwrap() < before);
    }
}

//! Per-sample difficulty metrics and the statically sorted schedules.

mod mtld;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EncodedSample};
use crate::probe::{self, Probe, ProbeError};
use crate::scorer::{ScorerError, ScoringModel};

pub use mtld::{mtld, mtld_forward, ttr, DEFAULT_TTR_THRESHOLD};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("sample has no output tokens")]
    EmptyOutput,
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("metric {metric} needs a {needs}")]
    Missing { metric: Metric, needs: &'static str },
    #[error("sample {id}, metric {metric}: {source}")]
    Sample {
        id: usize,
        metric: Metric,
        #[source]
        source: Box<MetricError>,
    },
}

/// The four difficulty perspectives. The numeric value is the schedule index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    /// Token length of instruction plus output.
    #[serde(rename = "d1")]
    Length = 1,
    /// Lexical diversity.
    #[serde(rename = "d2")]
    Mtld = 2,
    /// Probe loss on the output.
    #[serde(rename = "d3")]
    Loss = 3,
    /// Learned competence score.
    #[serde(rename = "d4")]
    Score = 4,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Length, Metric::Mtld, Metric::Loss, Metric::Score];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i.checked_sub(1)?).copied()
    }

    /// Whether the metric depends on the model state and must be re-sorted.
    pub fn competence_aware(self) -> bool {
        matches!(self, Metric::Loss | Metric::Score)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.index())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d1" | "1" | "length" => Ok(Metric::Length),
            "d2" | "2" | "mtld" => Ok(Metric::Mtld),
            "d3" | "3" | "loss" => Ok(Metric::Loss),
            "d4" | "4" | "score" => Ok(Metric::Score),
            other => Err(format!("unknown metric `{other}` (expected d1..d4)")),
        }
    }
}

/// Parses a comma separated metric list, deduplicated and sorted by index.
pub fn parse_metric_set(s: &str) -> Result<Vec<Metric>, String> {
    let mut out = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Metric>, _>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err("metric set is empty".into());
    }
    Ok(out)
}

/// Difficulty values of one sample. `stale` flags `d3`/`d4` values computed
/// under an older probe state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DifficultyVector {
    pub d1: usize,
    pub d2: f64,
    pub d3: Option<f64>,
    pub d4: Option<f64>,
    #[serde(skip)]
    pub stale: [bool; 2],
}

impl DifficultyVector {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Length => Some(self.d1 as f64),
            Metric::Mtld => Some(self.d2),
            Metric::Loss => self.d3,
            Metric::Score => self.d4,
        }
    }

    pub fn set(&mut self, metric: Metric, value: f64) {
        match metric {
            Metric::Loss => {
                self.d3 = Some(value);
                self.stale[0] = false;
            }
            Metric::Score => {
                self.d4 = Some(value);
                self.stale[1] = false;
            }
            Metric::Length => self.d1 = value as usize,
            Metric::Mtld => self.d2 = value,
        }
    }

    /// Marks the competence-aware entries as computed under an older state.
    pub fn mark_stale(&mut self) {
        self.stale = [self.d3.is_some(), self.d4.is_some()];
    }

    pub fn is_stale(&self, metric: Metric) -> bool {
        match metric {
            Metric::Loss => self.stale[0],
            Metric::Score => self.stale[1],
            _ => false,
        }
    }
}

/// Number of content tokens (instruction, input and output).
pub fn length_difficulty(sample: &EncodedSample) -> usize {
    sample.content.len()
}

/// Sum of `-log p` over the output tokens, conditioned on everything before them.
pub fn loss_difficulty(probe: &mut dyn Probe, sample: &EncodedSample) -> Result<f64, MetricError> {
    if sample.target_len() == 0 {
        return Err(MetricError::EmptyOutput);
    }
    let lps = probe.logprobs(&sample.rendered, sample.target_start())?;
    Ok(probe::output_loss(&lps, sample))
}

/// Competence score `R(concat(z1, z2))` in (0, 1).
pub fn score_difficulty(
    probe: &mut dyn Probe,
    scorer: &ScoringModel<f64>,
    sample: &EncodedSample,
) -> Result<f64, MetricError> {
    let features = probe.features(&sample.rendered, sample.target_start())?;
    Ok(scorer.score(&features.concat())?)
}

/// Computes one metric for one sample.
pub fn compute_metric(
    metric: Metric,
    sample: &EncodedSample,
    probe: Option<&mut dyn Probe>,
    scorer: Option<&ScoringModel<f64>>,
    threshold: f64,
) -> Result<f64, MetricError> {
    match metric {
        Metric::Length => Ok(length_difficulty(sample) as f64),
        Metric::Mtld => mtld(&sample.content, threshold),
        Metric::Loss => {
            let probe = probe.ok_or(MetricError::Missing {
                metric,
                needs: "probe",
            })?;
            loss_difficulty(probe, sample)
        }
        Metric::Score => {
            let probe = probe.ok_or(MetricError::Missing {
                metric,
                needs: "probe",
            })?;
            let scorer = scorer.ok_or(MetricError::Missing {
                metric,
                needs: "scorer",
            })?;
            score_difficulty(probe, scorer, sample)
        }
    }
}

fn tag(id: usize, metric: Metric) -> impl FnOnce(MetricError) -> MetricError {
    move |e| MetricError::Sample {
        id,
        metric,
        source: Box::new(e),
    }
}

/// Computes `d1`/`d2` for every sample (in parallel), plus `d3` when a probe
/// is given and `d4` when both a probe and a scorer are given.
pub fn compute_difficulties(
    corpus: &Corpus,
    mut probe: Option<&mut dyn Probe>,
    scorer: Option<&ScoringModel<f64>>,
    threshold: f64,
) -> Result<Vec<DifficultyVector>, MetricError> {
    let mut rows = corpus
        .encoded_all()
        .par_iter()
        .enumerate()
        .map(|(id, e)| {
            let d2 = mtld(&e.content, threshold).map_err(tag(id, Metric::Mtld))?;
            Ok(DifficultyVector {
                d1: length_difficulty(e),
                d2,
                ..DifficultyVector::default()
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    if let Some(p) = probe.as_deref_mut() {
        for (id, row) in rows.iter_mut().enumerate() {
            let e = corpus.encoded(id);
            row.d3 = Some(loss_difficulty(p, e).map_err(tag(id, Metric::Loss))?);
            if let Some(scorer) = scorer {
                row.d4 = Some(score_difficulty(p, scorer, e).map_err(tag(id, Metric::Score))?);
            }
        }
    }
    Ok(rows)
}

/// Orders `ids` ascending by `value(id)`, ties by ascending id.
pub fn sort_ids_by<V: Fn(usize) -> f64>(ids: &mut [usize], value: V) {
    ids.sort_by(|&a, &b| {
        value(a)
            .total_cmp(&value(b))
            .then_with(|| a.cmp(&b))
    });
}

/// An easy-to-hard ordering of every sample under one metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub metric: Metric,
    pub order: Vec<usize>,
}

impl Schedule {
    /// Sorts all ids by the metric's values in `table`.
    pub fn sorted(metric: Metric, table: &[DifficultyVector]) -> Result<Self, MetricError> {
        if let Some(id) = table.iter().position(|r| r.value(metric).is_none()) {
            return Err(MetricError::Sample {
                id,
                metric,
                source: Box::new(MetricError::Missing {
                    metric,
                    needs: if metric == Metric::Score { "scorer" } else { "probe" },
                }),
            });
        }
        let mut order: Vec<usize> = (0..table.len()).collect();
        sort_ids_by(&mut order, |id| table[id].value(metric).unwrap_or(f64::NAN));
        Ok(Self { metric, order })
    }

    pub fn competence_aware(&self) -> bool {
        self.metric.competence_aware()
    }

    pub fn index(&self) -> usize {
        self.metric.index()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Whether `order` is a permutation of `0..len`.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        self.order.iter().all(|&id| {
            id < seen.len() && !std::mem::replace(&mut seen[id], true)
        })
    }
}

/// Computes every metric in `metrics` and sorts one schedule per metric.
/// Competence-aware values use the probe's current state.
pub fn build_schedules(
    corpus: &Corpus,
    metrics: &[Metric],
    probe: Option<&mut dyn Probe>,
    scorer: Option<&ScoringModel<f64>>,
    threshold: f64,
) -> Result<(Vec<Schedule>, Vec<DifficultyVector>), MetricError> {
    let wants_loss = metrics.iter().any(|m| m.competence_aware());
    let wants_score = metrics.contains(&Metric::Score);
    if wants_loss && probe.is_none() {
        return Err(MetricError::Missing {
            metric: *metrics.iter().find(|m| m.competence_aware()).unwrap(),
            needs: "probe",
        });
    }
    if wants_score && scorer.is_none() {
        return Err(MetricError::Missing {
            metric: Metric::Score,
            needs: "scorer",
        });
    }
    let table = compute_difficulties(
        corpus,
        if wants_loss { probe } else { None },
        if wants_score { scorer } else { None },
        threshold,
    )?;
    let schedules = metrics
        .iter()
        .map(|&m| Schedule::sorted(m, &table))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((schedules, table))
}

/// Ascending comparison helper shared by re-sorting code.
pub(crate) fn cmp_value_then_id(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, InstructionSample, Role, Turn};
    use crate::probe::testing::FixedProbe;
    use crate::probe::NGramProbe;
    use crate::scorer::{Mlp, ScoringModel};

    fn hello() -> InstructionSample {
        InstructionSample::single(0, "Hello.", "Hello! How can I help you today?", "general")
    }

    #[test]
    fn length_of_greeting_counts_content_tokens() {
        // "Hello" "." + "Hello" "!" "How" "can" "I" "help" "you" "today" "?"
        let c = Corpus::new(Dataset::new(vec![hello()]));
        assert_eq!(length_difficulty(c.encoded(0)), 11);
    }

    #[test]
    fn length_of_multi_turn_is_additive() {
        let s = InstructionSample::multi_turn(
            0,
            vec![
                Turn { role: Role::User, text: "hi".into() },
                Turn { role: Role::Assistant, text: "yo".into() },
            ],
            "general",
        );
        let c = Corpus::new(Dataset::new(vec![s]));
        assert_eq!(length_difficulty(c.encoded(0)), 2);
    }

    #[test]
    fn doubling_output_doubles_its_contribution() {
        let base = InstructionSample::single(0, "Say it", "one two three", "general");
        let doubled = InstructionSample::single(0, "Say it", "one two three one two three", "general");
        let c = Corpus::new(Dataset::new(vec![base, doubled]));
        let instr = 2;
        assert_eq!(length_difficulty(c.encoded(1)) - instr, 2 * (length_difficulty(c.encoded(0)) - instr));
    }

    #[test]
    fn loss_under_certain_probe_is_zero() {
        let c = Corpus::new(Dataset::new(vec![hello()]));
        let mut p = FixedProbe::new(1.0);
        assert_eq!(loss_difficulty(&mut p, c.encoded(0)).unwrap(), 0.0);
    }

    #[test]
    fn loss_sums_three_unit_terms() {
        let c = Corpus::new(Dataset::new(vec![InstructionSample::single(0, "x", "a b c", "g")]));
        let mut p = FixedProbe::new((-1.0f64).exp());
        assert!((loss_difficulty(&mut p, c.encoded(0)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_counts_assistant_turns_only() {
        let s = InstructionSample::multi_turn(
            0,
            vec![
                Turn { role: Role::User, text: "a b c d".into() },
                Turn { role: Role::Assistant, text: "e".into() },
                Turn { role: Role::User, text: "f g".into() },
                Turn { role: Role::Assistant, text: "h i".into() },
            ],
            "general",
        );
        let c = Corpus::new(Dataset::new(vec![s]));
        let mut p = FixedProbe::new((-1.0f64).exp());
        assert!((loss_difficulty(&mut p, c.encoded(0)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_needs_output_tokens() {
        let c = Corpus::new(Dataset::new(vec![InstructionSample::single(0, "x", "   ", "g")]));
        let mut p = FixedProbe::new(0.5);
        assert!(matches!(loss_difficulty(&mut p, c.encoded(0)), Err(MetricError::EmptyOutput)));
    }

    #[test]
    fn zero_scorer_scores_half() {
        let c = Corpus::new(Dataset::new(vec![hello()]));
        let mut p = NGramProbe::bigram(c.vocab_size());
        let scorer = ScoringModel::zeros(8, 16);
        assert_eq!(score_difficulty(&mut p, &scorer, c.encoded(0)).unwrap(), 0.5);
    }

    #[test]
    fn scorer_dimension_mismatch_is_error() {
        let c = Corpus::new(Dataset::new(vec![hello()]));
        let mut p = NGramProbe::bigram(c.vocab_size());
        let scorer = ScoringModel::new(Mlp::zeros(6, 4));
        assert!(matches!(
            score_difficulty(&mut p, &scorer, c.encoded(0)),
            Err(MetricError::Scorer(_))
        ));
    }

    fn corpus_with_lengths(lengths: &[usize]) -> Corpus {
        Corpus::new(Dataset::new(
            lengths
                .iter()
                .map(|&n| {
                    let out = (0..n.saturating_sub(1)).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
                    InstructionSample::single(0, "q", &out, "g")
                })
                .collect(),
        ))
    }

    #[test]
    fn schedule_sorts_ascending() {
        let c = corpus_with_lengths(&[5, 2, 9]);
        let (s, _) = build_schedules(&c, &[Metric::Length], None, None, 0.72).unwrap();
        assert_eq!(s[0].order, vec![1, 0, 2]);
    }

    #[test]
    fn ties_break_by_id() {
        let c = corpus_with_lengths(&[4, 4, 3, 4]);
        let (s, table) = build_schedules(&c, &[Metric::Length, Metric::Mtld], None, None, 0.72).unwrap();
        assert_eq!(s[0].order, vec![2, 0, 1, 3]);
        // all-distinct outputs of equal length share the same MTLD
        assert_eq!(table[0].d2, table[1].d2);
        let p0 = s[1].order.iter().position(|&i| i == 0).unwrap();
        let p1 = s[1].order.iter().position(|&i| i == 1).unwrap();
        assert!(p0 < p1);
    }

    #[test]
    fn four_permutations_over_hundred_samples() {
        let lengths: Vec<usize> = (0..100).map(|i| 2 + (i * 37) % 23).collect();
        let c = corpus_with_lengths(&lengths);
        let mut p = NGramProbe::bigram(c.vocab_size());
        let scorer = ScoringModel::kaiming(8, 16, 1);
        let (s, table) = build_schedules(&c, &Metric::ALL, Some(&mut p), Some(&scorer), 0.72).unwrap();
        assert_eq!(s.len(), 4);
        for sched in &s {
            assert_eq!(sched.len(), 100);
            assert!(sched.is_permutation());
            let vals: Vec<f64> = sched.order.iter().map(|&i| table[i].value(sched.metric).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn competence_metrics_need_probe_and_scorer() {
        let c = corpus_with_lengths(&[3, 4]);
        assert!(matches!(
            build_schedules(&c, &[Metric::Loss], None, None, 0.72),
            Err(MetricError::Missing { .. })
        ));
        let mut p = NGramProbe::bigram(c.vocab_size());
        assert!(matches!(
            build_schedules(&c, &[Metric::Score], Some(&mut p), None, 0.72),
            Err(MetricError::Missing { needs: "scorer", .. })
        ));
    }

    #[test]
    fn metric_failure_names_sample() {
        let c = Corpus::new(Dataset::new(vec![
            InstructionSample::single(0, "a", "b", "g"),
            InstructionSample::single(0, "", "  ", "g"),
        ]));
        let err = build_schedules(&c, &[Metric::Mtld], None, None, 0.72).unwrap_err();
        assert!(matches!(err, MetricError::Sample { id: 1, metric: Metric::Mtld, .. }));
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn metric_parsing() {
        assert_eq!(parse_metric_set("d3,d1,d1").unwrap(), vec![Metric::Length, Metric::Loss]);
        assert!(parse_metric_set("d5").is_err());
        assert!(parse_metric_set("").is_err());
        assert_eq!(Metric::from_index(4), Some(Metric::Score));
        assert_eq!(Metric::from_index(0), None);
        assert_eq!(Metric::Mtld.to_string(), "d2");
    }

    #[test]
    fn stale_flags_only_for_competence_entries() {
        let mut d = DifficultyVector { d1: 3, d2: 1.0, d3: Some(2.0), d4: None, stale: [false; 2] };
        d.mark_stale();
        assert!(d.is_stale(Metric::Loss));
        assert!(!d.is_stale(Metric::Score));
        assert!(!d.is_stale(Metric::Length));
        d.set(Metric::Loss, 1.5);
        assert!(!d.is_stale(Metric::Loss));
    }
}

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::RunConfig;

/// One scheduler decision. Serialized as one JSONL line:
/// `{step, schedule, t, lo, hi, ids, ppl, loss}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Global step, 1-based.
    pub step: usize,
    /// Metric index of the chosen schedule.
    pub schedule: usize,
    /// Step within that schedule.
    pub t: usize,
    pub lo: f64,
    pub hi: f64,
    /// Samples trained on, in slice order. Empty when dedup skipped them all.
    pub ids: Vec<usize>,
    /// Candidate perplexity of every active schedule at selection time.
    pub ppl: BTreeMap<String, f64>,
    /// Mean per-token loss of the trained samples after the update.
    pub loss: Option<f64>,
}

impl TraceStep {
    pub fn skipped(&self) -> bool {
        self.ids.is_empty()
    }

    /// Perplexity of the chosen candidate.
    pub fn chosen_ppl(&self) -> Option<f64> {
        self.ppl.get(&self.schedule.to_string()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config: RunConfig,
    pub dataset_digest: String,
    pub samples: usize,
    pub vocab_size: usize,
}

/// Ordered record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTrace {
    pub meta: TraceMeta,
    pub steps: Vec<TraceStep>,
}

impl CurriculumTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Every trained sample occurrence, in training order.
    pub fn occurrences(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().flat_map(|s| s.ids.iter().copied())
    }

    pub fn steps_of(&self, schedule: usize) -> impl Iterator<Item = &TraceStep> + '_ {
        self.steps.iter().filter(move |s| s.schedule == schedule)
    }

    /// Loss after the last non-skipped step.
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.iter().rev().find_map(|s| s.loss)
    }

    /// Steps as JSONL, one object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("trace steps serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<TraceStep>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

/// Receives each step as soon as it is decided.
pub trait TraceSink {
    fn record(&mut self, step: &TraceStep) -> io::Result<()>;
}

/// Appends JSONL lines and flushes after each step.
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn record(&mut self, step: &TraceStep) -> io::Result<()> {
        serde_json::to_writer(&mut self.writer, step).map_err(io::Error::other)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

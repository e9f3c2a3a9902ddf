use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CurriculumTrace, RunError};
use crate::corpus::Dataset;

/// Source mix of the first and last `k` trained sample occurrences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub first: BTreeMap<String, f64>,
    pub last: BTreeMap<String, f64>,
    pub k: usize,
    /// `k` was larger than the number of trained occurrences and was reduced.
    pub clamped: bool,
}

fn fractions<'a>(ids: impl Iterator<Item = &'a usize>, dataset: &Dataset, k: usize) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for &id in ids {
        *counts.entry(dataset.samples[id].source.clone()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(src, c)| (src, c as f64 / k as f64))
        .collect()
}

pub fn composition_report(
    trace: &CurriculumTrace,
    dataset: &Dataset,
    k: usize,
) -> Result<CompositionReport, RunError> {
    if k == 0 {
        return Err(RunError::Config("composition window k must be at least 1".into()));
    }
    let order: Vec<usize> = trace.occurrences().collect();
    if order.is_empty() {
        return Err(RunError::Config("trace has no trained samples".into()));
    }
    let clamped = k > order.len();
    let k = k.min(order.len());
    Ok(CompositionReport {
        first: fractions(order[..k].iter(), dataset, k),
        last: fractions(order[order.len() - k..].iter(), dataset, k),
        k,
        clamped,
    })
}

pub const CONVERGENCE_HEADER: &str = "step,schedule,mean_loss,batch_ppl";

/// CSV with one row per step: the post-update loss and the chosen batch's
/// perplexity. Skipped steps leave `mean_loss` empty.
pub fn convergence_report(trace: &CurriculumTrace) -> Result<String, RunError> {
    if trace.is_empty() {
        return Err(RunError::Config("trace is empty".into()));
    }
    let mut out = String::from(CONVERGENCE_HEADER);
    out.push('\n');
    for s in &trace.steps {
        let loss = s.loss.map(|l| l.to_string()).unwrap_or_default();
        let ppl = s.chosen_ppl().map(|p| p.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", s.step, s.schedule, loss, ppl).expect("write to string");
    }
    Ok(out)
}

//! Corpus-level evaluation report: per-role communication profiles and
//! urgency-stratified operational tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalkit::{profile_corpus, AffectClassifier, CommunicationProfile, EvalError};
use crate::opsmetrics::{efficiency_score, response_times, stratify_by_urgency, DetectorSet, StratumSummary};
use crate::transcript::{CorpusWarning, SessionStatus, Transcript};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("empty corpus: no transcripts to evaluate")]
    EmptyCorpus,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeans {
    pub turns: f64,
    pub duration_s: f64,
    pub dispatcher_response_time_s: f64,
    pub escalations: f64,
    pub final_completeness: f64,
    /// Mean efficiency score per window label.
    pub window_scores: BTreeMap<String, f64>,
    pub closed_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub report_schema: u32,
    pub n_transcripts: usize,
    pub backend_ids: Vec<String>,
    pub classifier: String,
    pub caller: CommunicationProfile,
    pub dispatcher: CommunicationProfile,
    pub strata: Vec<StratumSummary>,
    pub corpus_means: CorpusMeans,
    pub warnings: Vec<CorpusWarning>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn evaluate_corpus(
    transcripts: &[Transcript],
    warnings: Vec<CorpusWarning>,
    classifier: &dyn AffectClassifier,
    detectors: &DetectorSet,
) -> Result<EvaluationReport, ReportError> {
    if transcripts.is_empty() {
        return Err(ReportError::EmptyCorpus);
    }
    let (caller, dispatcher) = profile_corpus(transcripts, classifier)?;
    let efficiency: Vec<_> = transcripts.iter().map(|t| efficiency_score(t, detectors)).collect();
    let mut window_scores: BTreeMap<String, f64> = BTreeMap::new();
    for e in &efficiency {
        for (label, score) in &e.phase_scores {
            *window_scores.entry(label.clone()).or_default() += *score as f64;
        }
    }
    window_scores.values_mut().for_each(|v| *v /= efficiency.len() as f64);
    let gaps: Vec<f64> = transcripts.iter().flat_map(response_times).collect();
    let n = transcripts.len() as f64;
    let corpus_means = CorpusMeans {
        turns: mean(transcripts.iter().map(|t| t.turns.len() as f64)),
        duration_s: mean(transcripts.iter().map(Transcript::duration_s)),
        dispatcher_response_time_s: mean(gaps.into_iter()),
        escalations: mean(transcripts.iter().map(|t| t.header.escalations.len() as f64)),
        final_completeness: mean(
            efficiency
                .iter()
                .map(|e| e.completeness_trace.last().map_or(0.0, |(_, p)| *p)),
        ),
        window_scores,
        closed_share: transcripts
            .iter()
            .filter(|t| t.header.status == SessionStatus::Closed)
            .count() as f64
            / n,
    };
    let mut backend_ids: Vec<String> = transcripts.iter().map(|t| t.header.backend_id.clone()).collect();
    backend_ids.sort();
    backend_ids.dedup();
    Ok(EvaluationReport {
        report_schema: REPORT_SCHEMA,
        n_transcripts: transcripts.len(),
        backend_ids,
        classifier: classifier.id().to_string(),
        caller,
        dispatcher,
        strata: stratify_by_urgency(transcripts, detectors),
        corpus_means,
        warnings,
    })
}

//! Operational dynamics: simulated timeline, critical-entity elicitation,
//! efficiency scoring and urgency stratification.

use std::collections::BTreeMap;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::EngineConfig;
use crate::taxonomy::{contains_phrase, normalize_text, Taxonomy, Urgency};
use crate::transcript::{Speaker, Transcript};

pub use crate::taxonomy::CriticalEntity;

const BUNDLED_DETECTORS: &str = include_str!("../data/detectors.json");
const COMPLAINT_PLACEHOLDER: &str = "{{complaint_triggers}}";

/// Upper edges of the first two efficiency windows, in simulated seconds.
pub const WINDOW_EDGES_S: [f64; 2] = [120.0, 300.0];
pub const WINDOW_LABELS: [&str; 3] = ["0-2 min", "2-5 min", "5+ min"];
/// Spacing of the common grid used to average completeness traces.
pub const TRACE_GRID_STEP_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector file: {0}")]
    Parse(String),
    #[error("detector for {entity}: bad pattern {pattern:?}: {message}")]
    Pattern {
        entity: String,
        pattern: String,
        message: String,
    },
    #[error("no detector for {0}")]
    Missing(String),
}

#[derive(Debug, Deserialize)]
struct DetectorSpec {
    triggers: Vec<String>,
    answers: Vec<String>,
}

#[derive(Debug, Clone)]
struct Detector {
    triggers: Vec<String>,
    answers: Vec<Regex>,
    complaint_triggers: bool,
}

/// Trigger phrases and answer patterns per critical entity.
#[derive(Debug, Clone)]
pub struct DetectorSet {
    detectors: BTreeMap<CriticalEntity, Detector>,
    complaint_triggers: Vec<String>,
}

impl DetectorSet {
    pub fn bundled(taxonomy: &Taxonomy) -> Self {
        Self::from_json(BUNDLED_DETECTORS, taxonomy).expect("bundled detectors are valid")
    }

    pub fn from_json(source: &str, taxonomy: &Taxonomy) -> Result<Self, DetectorError> {
        let specs: BTreeMap<String, DetectorSpec> =
            serde_json::from_str(source).map_err(|e| DetectorError::Parse(e.to_string()))?;
        let mut detectors = BTreeMap::new();
        for (name, spec) in specs {
            let entity =
                CriticalEntity::parse(&name).ok_or_else(|| DetectorError::Parse(format!("unknown entity {name:?}")))?;
            let mut answers = Vec::new();
            let mut complaint_triggers = false;
            for pattern in &spec.answers {
                if pattern == COMPLAINT_PLACEHOLDER {
                    complaint_triggers = true;
                    continue;
                }
                answers.push(RegexBuilder::new(pattern).case_insensitive(true).build().map_err(|e| {
                    DetectorError::Pattern {
                        entity: name.clone(),
                        pattern: pattern.clone(),
                        message: e.to_string(),
                    }
                })?);
            }
            detectors.insert(
                entity,
                Detector {
                    triggers: spec.triggers.iter().map(|t| normalize_text(t)).collect(),
                    answers,
                    complaint_triggers,
                },
            );
        }
        for e in CriticalEntity::ALL {
            if !detectors.contains_key(&e) {
                return Err(DetectorError::Missing(e.as_str().into()));
            }
        }
        let complaint_triggers = taxonomy
            .entries()
            .flat_map(|e| e.keyword_triggers.iter().map(|t| normalize_text(t)))
            .collect();
        Ok(Self {
            detectors,
            complaint_triggers,
        })
    }

    /// Entities whose trigger phrase appears in a dispatcher utterance.
    pub fn asked(&self, dispatcher_text: &str) -> Vec<CriticalEntity> {
        let norm = normalize_text(dispatcher_text);
        self.detectors
            .iter()
            .filter(|(_, d)| d.triggers.iter().any(|t| contains_phrase(&norm, t)))
            .map(|(e, _)| *e)
            .collect()
    }

    /// Whether a caller utterance carries an answer for the entity.
    pub fn answers(&self, entity: CriticalEntity, caller_text: &str) -> bool {
        let d = &self.detectors[&entity];
        if d.answers.iter().any(|r| r.is_match(caller_text)) {
            return true;
        }
        d.complaint_triggers && {
            let norm = normalize_text(caller_text);
            self.complaint_triggers.iter().any(|t| contains_phrase(&norm, t))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elicitation {
    pub turn_index: u64,
    pub sim_time_s: f64,
    /// A dispatcher turn asked for it before the answer; false when volunteered.
    pub prompted: bool,
}

/// Per-turn seconds; empty utterances take the configured minimum.
pub fn turn_increment(utterance: &str, config: &EngineConfig) -> f64 {
    let words = utterance.split_whitespace().count();
    if words == 0 {
        config.min_turn_seconds
    } else {
        words as f64 * config.per_word_sim_seconds
    }
}

/// Cumulative simulated time at the end of each turn.
pub fn simulated_timeline(transcript: &Transcript, config: &EngineConfig) -> Vec<f64> {
    let mut t = 0.0;
    transcript
        .turns
        .iter()
        .map(|turn| {
            t += turn_increment(&turn.utterance, config);
            t
        })
        .collect()
}

/// First caller turn answering each entity.
pub fn detect_entities(transcript: &Transcript, detectors: &DetectorSet) -> BTreeMap<CriticalEntity, Elicitation> {
    let mut found = BTreeMap::new();
    let mut asked: Vec<CriticalEntity> = Vec::new();
    for turn in &transcript.turns {
        match turn.speaker {
            Speaker::Dispatcher => asked.extend(detectors.asked(&turn.utterance)),
            Speaker::Caller => {
                for e in CriticalEntity::ALL {
                    if !found.contains_key(&e) && detectors.answers(e, &turn.utterance) {
                        found.insert(
                            e,
                            Elicitation {
                                turn_index: turn.index,
                                sim_time_s: turn.sim_time_s,
                                prompted: asked.contains(&e),
                            },
                        );
                    }
                }
            }
            Speaker::Auxiliary => {}
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyAssessment {
    pub phase_scores: BTreeMap<String, u8>,
    pub completeness_trace: Vec<(f64, f64)>,
    pub elicited: Vec<CriticalEntity>,
}

/// 1 + round(4p), p in [0, 1].
pub fn window_score(p: f64) -> u8 {
    1 + (4.0 * p.clamp(0.0, 1.0)).round() as u8
}

pub fn efficiency_score(transcript: &Transcript, detectors: &DetectorSet) -> EfficiencyAssessment {
    let required = &transcript.header.scenario.critical_entities_required;
    let found = detect_entities(transcript, detectors);
    let total = required.len().max(1) as f64;
    let proportion_at = |t: f64| {
        required
            .iter()
            .filter(|e| found.get(e).is_some_and(|el| el.sim_time_s <= t))
            .count() as f64
            / total
    };
    let end = transcript.duration_s();
    let window_ends = [WINDOW_EDGES_S[0], WINDOW_EDGES_S[1], end.max(WINDOW_EDGES_S[1])];
    let phase_scores = WINDOW_LABELS
        .iter()
        .zip(window_ends)
        .map(|(label, t)| (label.to_string(), window_score(proportion_at(t))))
        .collect();
    let completeness_trace = transcript
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::Caller)
        .map(|t| (t.sim_time_s, proportion_at(t.sim_time_s)))
        .collect();
    EfficiencyAssessment {
        phase_scores,
        completeness_trace,
        elicited: required.iter().copied().filter(|e| found.contains_key(e)).collect(),
    }
}

/// Sim-time gap between each caller turn and the dispatcher turn that follows it.
pub fn response_times(transcript: &Transcript) -> Vec<f64> {
    transcript
        .turns
        .windows(2)
        .filter(|w| w[0].speaker == Speaker::Caller && w[1].speaker == Speaker::Dispatcher)
        .map(|w| w[1].sim_time_s - w[0].sim_time_s)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub urgency: Urgency,
    pub n_transcripts: usize,
    pub mean_response_time_s: f64,
    pub median_duration_s: f64,
    /// (grid time, mean completeness) on a common grid.
    pub mean_trace: Vec<(f64, f64)>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn step_value(trace: &[(f64, f64)], t: f64) -> f64 {
    trace
        .iter()
        .take_while(|(ts, _)| *ts <= t)
        .last()
        .map_or(0.0, |(_, p)| *p)
}

/// Per-urgency aggregates. Strata with no transcripts are omitted.
pub fn stratify_by_urgency(transcripts: &[Transcript], detectors: &DetectorSet) -> Vec<StratumSummary> {
    let mut out = Vec::new();
    for urgency in Urgency::ALL {
        let members: Vec<&Transcript> = transcripts.iter().filter(|t| t.header.urgency == urgency).collect();
        if members.is_empty() {
            continue;
        }
        let gaps: Vec<f64> = members.iter().flat_map(|t| response_times(t)).collect();
        let mean_response_time_s = if gaps.is_empty() {
            0.0
        } else {
            gaps.iter().sum::<f64>() / gaps.len() as f64
        };
        let mut durations: Vec<f64> = members.iter().map(|t| t.duration_s()).collect();
        let max_duration = durations.iter().copied().fold(0.0, f64::max);
        let median_duration_s = median(&mut durations);
        let traces: Vec<Vec<(f64, f64)>> = members
            .iter()
            .map(|t| efficiency_score(t, detectors).completeness_trace)
            .collect();
        let steps = (max_duration / TRACE_GRID_STEP_S).ceil() as usize;
        let mean_trace = (0..=steps)
            .map(|k| {
                let t = k as f64 * TRACE_GRID_STEP_S;
                let mean = traces.iter().map(|tr| step_value(tr, t)).sum::<f64>() / traces.len() as f64;
                (t, mean)
            })
            .collect();
        out.push(StratumSummary {
            urgency,
            n_transcripts: members.len(),
            mean_response_time_s,
            median_duration_s,
            mean_trace,
        });
    }
    out
}

/// CSV of the stratum table (one row per urgency).
pub fn strata_csv(strata: &[StratumSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["urgency", "n_transcripts", "mean_response_time_s", "median_duration_s"])
        .expect("in-memory csv");
    for s in strata {
        w.write_record([
            s.urgency.as_str().to_string(),
            s.n_transcripts.to_string(),
            format!("{:.4}", s.mean_response_time_s),
            format!("{:.4}", s.median_duration_s),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// CSV of the mean completeness traces (long format).
pub fn traces_csv(strata: &[StratumSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["urgency", "sim_time_s", "mean_completeness"])
        .expect("in-memory csv");
    for s in strata {
        for (t, p) in &s.mean_trace {
            w.write_record([s.urgency.as_str().to_string(), format!("{t:.1}"), format!("{p:.6}")])
                .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

//! Turn records, transcripts and their JSONL forms.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::ClassificationResult;
use crate::scenario::Scenario;
use crate::taxonomy::{AuxiliaryResource, CallPhase, Urgency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Caller,
    Dispatcher,
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Auto,
    HumanDispatcher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Closed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: u64,
    pub speaker: Speaker,
    pub utterance: String,
    pub phase_at_turn: CallPhase,
    pub classification: ClassificationResult,
    pub sim_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryExchange {
    pub target: AuxiliaryResource,
    pub request: String,
    pub response: String,
    pub turn_index: u64,
}

/// Session metadata; the first line of a single-session export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub session_id: String,
    pub scenario: Scenario,
    pub urgency: Urgency,
    pub mode: Mode,
    pub status: SessionStatus,
    #[serde(default)]
    pub abort_reason: Option<String>,
    pub backend_id: String,
    pub classifier_id: String,
    pub escalations: Vec<AuxiliaryExchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(flatten)]
    pub header: TranscriptHeader,
    pub turns: Vec<TurnRecord>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty transcript export")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Transcript {
    pub fn duration_s(&self) -> f64 {
        self.turns.last().map_or(0.0, |t| t.sim_time_s)
    }

    pub fn utterances(&self, speaker: Speaker) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(move |t| t.speaker == speaker)
            .map(|t| t.utterance.as_str())
    }

    /// Phases in turn order with consecutive repeats collapsed.
    pub fn phase_sequence(&self) -> Vec<CallPhase> {
        let mut seq: Vec<CallPhase> = Vec::new();
        for t in &self.turns {
            if seq.last() != Some(&t.phase_at_turn) {
                seq.push(t.phase_at_turn);
            }
        }
        seq
    }

    /// Header line followed by one line per turn.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for t in &self.turns {
            out.push_str(&serde_json::to_string(t).expect("turn serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, TranscriptError> {
        let mut header: Option<TranscriptHeader> = None;
        let mut turns = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| TranscriptError::Parse {
                line: i + 1,
                message: e.to_string(),
            };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(err)?);
            } else {
                turns.push(serde_json::from_str(&line).map_err(err)?);
            }
        }
        Ok(Transcript {
            header: header.ok_or(TranscriptError::Empty)?,
            turns,
        })
    }
}

/// Corpus line parse failure; processing continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusWarning {
    pub line: usize,
    pub message: String,
}

/// One transcript per line, in case order.
pub fn write_corpus(transcripts: &[Transcript]) -> String {
    transcripts
        .iter()
        .map(|t| serde_json::to_string(t).expect("transcript serializes") + "\n")
        .collect()
}

pub fn read_corpus(reader: impl BufRead) -> Result<(Vec<Transcript>, Vec<CorpusWarning>), TranscriptError> {
    let mut transcripts = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(t) => transcripts.push(t),
            Err(e) => warnings.push(CorpusWarning {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((transcripts, warnings))
}

/// Checks a phase sequence against the allowed-transition relation.
pub fn verify_phase_sequence(phases: &[CallPhase]) -> bool {
    phases.first().is_none_or(|p| *p == CallPhase::InitialIntake)
        && phases.windows(2).all(|w| w[0] == w[1] || w[0].can_transition_to(w[1]))
}

/// No two consecutive turns by the same speaker.
pub fn verify_alternation(turns: &[TurnRecord]) -> bool {
    turns.windows(2).all(|w| w[0].speaker != w[1].speaker) && turns.first().is_none_or(|t| t.speaker == Speaker::Caller)
}

pub fn verify_timestamps(turns: &[TurnRecord]) -> bool {
    turns.first().is_none_or(|t| t.sim_time_s > 0.0) && turns.windows(2).all(|w| w[1].sim_time_s > w[0].sim_time_s)
}

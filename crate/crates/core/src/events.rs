//! Session event log records. Session state is a pure fold over these.

use serde::{Deserialize, Serialize};

use crate::llm::ChatResponse;
use crate::orchestrator::{EngineConfig, Session};
use crate::scenario::Scenario;
use crate::stats::RatingRecord;
use crate::taxonomy::{CallPhase, Urgency};
use crate::template::CallerPersona;
use crate::transcript::{AuxiliaryExchange, Mode, TurnRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum EventPayload {
    Created {
        session_id: String,
        scenario: Scenario,
        mode: Mode,
        urgency: Urgency,
        config: EngineConfig,
        persona: CallerPersona,
        narrative: String,
        backend_id: String,
        classifier_id: String,
    },
    Turn {
        record: TurnRecord,
        /// Planner intent behind the utterance ("human" for submitted text).
        intent: String,
    },
    Escalation {
        exchange: AuxiliaryExchange,
    },
    PhaseChange {
        from: CallPhase,
        to: CallPhase,
        turn_index: u64,
    },
    /// A gateway reply, logged before the engine consumes it.
    Response {
        agent: String,
        turn_index: u64,
        response: ChatResponse,
    },
    Rating {
        rating_id: String,
        record: RatingRecord,
    },
    Closed {
        turn_index: u64,
    },
    Aborted {
        reason: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::Created { .. } => "created",
            EventPayload::Turn { .. } => "turn",
            EventPayload::Escalation { .. } => "escalation",
            EventPayload::PhaseChange { .. } => "phase_change",
            EventPayload::Response { .. } => "response",
            EventPayload::Rating { .. } => "rating",
            EventPayload::Closed { .. } => "closed",
            EventPayload::Aborted { .. } => "aborted",
        }
    }
}

/// One line of a session event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
    /// Milliseconds since the Unix epoch. Not part of folded state.
    pub wall_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FoldError {
    #[error("event log is empty")]
    Empty,
    #[error("first event must be `created`, found `{0}`")]
    MissingCreated(&'static str),
    #[error("duplicate `created` event at seq {0}")]
    DuplicateCreated(u64),
    #[error("seq {found} follows {previous}; sequence numbers must increase")]
    OutOfOrder { previous: u64, found: u64 },
}

/// Receives events as the engine produces them.
pub trait EventSink {
    /// Persists a batch; the engine applies it to the session only on success.
    fn append(&mut self, events: &[EventPayload]) -> Result<(), String>;
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _: &[EventPayload]) -> Result<(), String> {
        Ok(())
    }
}

impl EventSink for Vec<EventPayload> {
    fn append(&mut self, events: &[EventPayload]) -> Result<(), String> {
        self.extend_from_slice(events);
        Ok(())
    }
}

/// Rebuilds session state from its log.
pub fn fold<'a>(events: impl IntoIterator<Item = &'a EventPayload>) -> Result<Session, FoldError> {
    let mut iter = events.into_iter();
    let first = iter.next().ok_or(FoldError::Empty)?;
    let mut session = Session::from_created(first).ok_or(FoldError::MissingCreated(first.kind()))?;
    for (i, ev) in iter.enumerate() {
        if matches!(ev, EventPayload::Created { .. }) {
            return Err(FoldError::DuplicateCreated(i as u64 + 1));
        }
        session.apply(ev);
    }
    Ok(session)
}

/// [`fold`] over numbered log lines, checking sequence order.
pub fn fold_log(events: &[SessionEvent]) -> Result<Session, FoldError> {
    for w in events.windows(2) {
        if w[1].seq <= w[0].seq {
            return Err(FoldError::OutOfOrder {
                previous: w[0].seq,
                found: w[1].seq,
            });
        }
    }
    fold(events.iter().map(|e| &e.payload))
}

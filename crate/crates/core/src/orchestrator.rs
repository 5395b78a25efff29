//! Six-phase call engine: caller, dispatcher and mocked auxiliary agents.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::{EventPayload, EventSink};
use crate::grounding::{
    retrieve_protocol, template_for_phase, ClassificationResult, Classifier, ClassifierInput, HistoryLine,
    PromptLibrary, ProtocolBundle,
};
use crate::llm::{
    ChatMessage, ChatRequest, ChatResponse, GatewayError, LlmGateway, Role, CALLER_TEMPERATURE, DISPATCHER_TEMPERATURE,
};
use crate::opsmetrics::{turn_increment, DetectorSet};
use crate::scenario::{narrative_template, CallerFacts, Catalogs, Scenario, ScenarioError, Setting};
use crate::taxonomy::{AuxiliaryResource, CallPhase, CallerIdentity, CriticalEntity, Taxonomy, Urgency};
use crate::template::{CallerPersona, Style, CALLBACK_LINE, WORSENING_MARKER};
use crate::transcript::{AuxiliaryExchange, Mode, SessionStatus, Speaker, Transcript, TranscriptHeader, TurnRecord};

/// Reason recorded when a session hits `max_turns`.
pub const TURN_CAP_REASON: &str = "turn_cap";

/// Fallback instructions used when the complaint was never identified.
pub const GENERIC_INSTRUCTIONS: [&str; 2] = [
    "Stay with the patient and do not give them anything to eat or drink.",
    "Unlock the door and turn on a light so the crew can find you.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub max_turns: u64,
    pub per_word_sim_seconds: f64,
    pub min_turn_seconds: f64,
    pub dispatcher_brevity_by_urgency: BTreeMap<Urgency, usize>,
    /// `None` derives the value from the complaint entry at session creation.
    pub advice_required: Option<bool>,
    pub history_window: usize,
    pub intake_max_caller_turns: u64,
    pub assessment_max_caller_turns: u64,
    pub updates_max_dispatcher_turns: u64,
    pub symptom_questions_by_urgency: BTreeMap<Urgency, usize>,
    pub red_flag_checks_by_urgency: BTreeMap<Urgency, usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let by_urgency = |a, b, c| {
            BTreeMap::from([
                (Urgency::LifeCritical, a),
                (Urgency::TraumaticIncident, b),
                (Urgency::IndividualComplaint, c),
            ])
        };
        Self {
            max_turns: 40,
            per_word_sim_seconds: 0.4,
            min_turn_seconds: 0.5,
            dispatcher_brevity_by_urgency: by_urgency(25, 35, 45),
            advice_required: None,
            history_window: crate::grounding::DEFAULT_HISTORY_WINDOW,
            intake_max_caller_turns: 4,
            assessment_max_caller_turns: 6,
            updates_max_dispatcher_turns: 8,
            symptom_questions_by_urgency: by_urgency(0, 1, 2),
            red_flag_checks_by_urgency: by_urgency(1, 1, 2),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.max_turns == 0 {
            return bad("max_turns must be positive");
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.per_word_sim_seconds) || !positive(self.min_turn_seconds) {
            return bad("simulated seconds must be positive");
        }
        for u in Urgency::ALL {
            match self.dispatcher_brevity_by_urgency.get(&u) {
                Some(n) if *n > 0 => {}
                _ => return bad("brevity map must give a positive cap for every urgency"),
            }
        }
        if self.history_window == 0 {
            return bad("history_window must be positive");
        }
        Ok(())
    }

    fn brevity(&self, u: Urgency) -> usize {
        self.dispatcher_brevity_by_urgency[&u]
    }

    fn quota(map: &BTreeMap<Urgency, usize>, u: Urgency) -> usize {
        map.get(&u).copied().unwrap_or(0)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(#[from] ScenarioError),
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("session is {0:?}, not active")]
    NotActive(SessionStatus),
    #[error("operation requires {expected:?} mode")]
    WrongMode { expected: Mode },
    #[error("out-of-turn: it is the {expected:?}'s turn")]
    OutOfTurn { expected: Speaker },
    #[error("turn cap of {0} reached; session aborted")]
    TurnCap(u64),
    #[error("target {0} is not an auxiliary resource of the current complaint")]
    IneligibleTarget(AuxiliaryResource),
    #[error("target {0} was already escalated")]
    DuplicateEscalation(AuxiliaryResource),
    #[error("escalation is not allowed in phase {0}")]
    WrongPhase(CallPhase),
    #[error("event sink rejected the batch: {0}")]
    Sink(String),
}

/// Planner bookkeeping folded from turn events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanState {
    pub phase_caller_turns: u64,
    pub phase_dispatcher_turns: u64,
    pub symptoms_asked: usize,
    pub red_flags_asked: usize,
    pub instructions_given: usize,
    pub asked_entities: BTreeSet<CriticalEntity>,
    pub worsening_reported: bool,
    pub last_dispatcher_intent: Option<String>,
    pub last_caller_intent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub scenario: Scenario,
    pub mode: Mode,
    pub urgency: Urgency,
    pub phase: CallPhase,
    pub turn_index: u64,
    pub current_cc: ClassificationResult,
    pub transcript: Vec<TurnRecord>,
    pub escalations: Vec<AuxiliaryExchange>,
    pub status: SessionStatus,
    pub abort_reason: Option<String>,
    pub config: EngineConfig,
    pub persona: CallerPersona,
    pub narrative: String,
    pub backend_id: String,
    pub classifier_id: String,
    pub plan: PlanState,
}

impl Session {
    /// Initial state from a `created` event.
    pub fn from_created(ev: &EventPayload) -> Option<Self> {
        match ev {
            EventPayload::Created {
                session_id,
                scenario,
                mode,
                urgency,
                config,
                persona,
                narrative,
                backend_id,
                classifier_id,
            } => Some(Self {
                id: session_id.clone(),
                scenario: scenario.clone(),
                mode: *mode,
                urgency: *urgency,
                phase: CallPhase::InitialIntake,
                turn_index: 0,
                current_cc: ClassificationResult::lack(0),
                transcript: Vec::new(),
                escalations: Vec::new(),
                status: SessionStatus::Active,
                abort_reason: None,
                config: config.clone(),
                persona: persona.clone(),
                narrative: narrative.clone(),
                backend_id: backend_id.clone(),
                classifier_id: classifier_id.clone(),
                plan: PlanState::default(),
            }),
            _ => None,
        }
    }

    /// Applies one event. The engine mutates sessions only through here.
    pub fn apply(&mut self, ev: &EventPayload) {
        match ev {
            EventPayload::Turn { record, intent } => {
                self.turn_index = record.index + 1;
                self.current_cc = record.classification.clone();
                match record.speaker {
                    Speaker::Caller => {
                        self.plan.phase_caller_turns += 1;
                        if record.utterance.to_lowercase().contains(WORSENING_MARKER) {
                            self.plan.worsening_reported = true;
                        }
                        self.plan.last_caller_intent = Some(intent.clone());
                    }
                    Speaker::Dispatcher => {
                        self.plan.phase_dispatcher_turns += 1;
                        if let Some(e) = intent.strip_prefix("ask:").and_then(CriticalEntity::parse) {
                            self.plan.asked_entities.insert(e);
                        }
                        match intent.as_str() {
                            "symptom" => self.plan.symptoms_asked += 1,
                            "red_flag" => self.plan.red_flags_asked += 1,
                            _ => {}
                        }
                        if record.phase_at_turn == CallPhase::PreArrivalInstructions
                            && matches!(intent.as_str(), "instruction" | "human")
                        {
                            self.plan.instructions_given += 1;
                        }
                        self.plan.last_dispatcher_intent = Some(intent.clone());
                    }
                    Speaker::Auxiliary => {}
                }
                self.transcript.push(record.clone());
            }
            EventPayload::Escalation { exchange } => self.escalations.push(exchange.clone()),
            EventPayload::PhaseChange { to, .. } => {
                self.phase = *to;
                self.plan.phase_caller_turns = 0;
                self.plan.phase_dispatcher_turns = 0;
            }
            EventPayload::Closed { .. } => self.status = SessionStatus::Closed,
            EventPayload::Aborted { reason } => {
                self.status = SessionStatus::Aborted;
                self.abort_reason = Some(reason.clone());
            }
            EventPayload::Created { .. } | EventPayload::Response { .. } | EventPayload::Rating { .. } => {}
        }
    }

    /// Who speaks next: the caller opens and speakers alternate.
    pub fn next_speaker(&self) -> Speaker {
        match self.transcript.last() {
            Some(t) if t.speaker == Speaker::Caller => Speaker::Dispatcher,
            _ => Speaker::Caller,
        }
    }

    pub fn advice_required(&self) -> bool {
        self.config.advice_required.unwrap_or(true)
    }

    fn sim_time(&self) -> f64 {
        self.transcript.last().map_or(0.0, |t| t.sim_time_s)
    }

    fn caller_history(&self) -> Vec<String> {
        self.transcript
            .iter()
            .filter(|t| t.speaker == Speaker::Caller)
            .map(|t| t.utterance.clone())
            .collect()
    }

    fn history_lines(&self) -> Vec<HistoryLine> {
        self.transcript
            .iter()
            .map(|t| {
                let role = match t.speaker {
                    Speaker::Caller => Role::Caller,
                    Speaker::Dispatcher => Role::Dispatcher,
                    Speaker::Auxiliary => Role::Auxiliary,
                };
                HistoryLine::new(role, t.utterance.clone())
            })
            .collect()
    }

    fn chat_history(&self) -> Vec<ChatMessage> {
        let start = self.transcript.len().saturating_sub(self.config.history_window);
        self.history_lines()[start..]
            .iter()
            .map(|h| ChatMessage::new(h.speaker, h.text.clone()))
            .collect()
    }

    fn escalated(&self, target: AuxiliaryResource) -> bool {
        self.escalations.iter().any(|e| e.target == target)
    }

    pub fn to_transcript(&self) -> Transcript {
        Transcript {
            header: TranscriptHeader {
                session_id: self.id.clone(),
                scenario: self.scenario.clone(),
                urgency: self.urgency,
                mode: self.mode,
                status: self.status,
                abort_reason: self.abort_reason.clone(),
                backend_id: self.backend_id.clone(),
                classifier_id: self.classifier_id.clone(),
                escalations: self.escalations.clone(),
            },
            turns: self.transcript.clone(),
        }
    }
}

/// Keeps the first `cap` words.
pub fn truncate_words(text: &str, cap: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= cap {
        text.trim().to_string()
    } else {
        words[..cap].join(" ")
    }
}

/// Truncates to the cap and guarantees the call-back line, which is exempt.
pub fn closure_utterance(text: &str, cap: usize) -> String {
    let rest = text.replace(CALLBACK_LINE, " ");
    let rest = truncate_words(&rest, cap);
    if rest.is_empty() {
        CALLBACK_LINE.to_string()
    } else {
        format!("{rest} {CALLBACK_LINE}")
    }
}

struct DispatcherPlan {
    intent: String,
    text: String,
    targets: Vec<AuxiliaryResource>,
}

impl DispatcherPlan {
    fn new(intent: impl Into<String>) -> Self {
        Self {
            intent: intent.into(),
            text: String::new(),
            targets: Vec::new(),
        }
    }
}

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(1);

pub struct Engine {
    taxonomy: Arc<Taxonomy>,
    gateway: Arc<dyn LlmGateway>,
    classifier: Arc<dyn Classifier>,
    detectors: Arc<DetectorSet>,
    prompts: Arc<PromptLibrary>,
    catalogs: Arc<Catalogs>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(
        taxonomy: Arc<Taxonomy>,
        gateway: Arc<dyn LlmGateway>,
        classifier: Arc<dyn Classifier>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let detectors = Arc::new(DetectorSet::bundled(&taxonomy));
        let prompts = Arc::new(PromptLibrary::bundled().with_window(config.history_window));
        Ok(Self {
            taxonomy,
            gateway,
            classifier,
            detectors,
            prompts,
            catalogs: Arc::new(Catalogs::bundled()),
            config,
        })
    }

    pub fn with_detectors(mut self, detectors: DetectorSet) -> Self {
        self.detectors = Arc::new(detectors);
        self
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn detectors(&self) -> &DetectorSet {
        &self.detectors
    }

    pub fn prompts(&self) -> &PromptLibrary {
        &self.prompts
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend_id(&self) -> String {
        self.gateway.backend_id()
    }

    fn commit(
        &self,
        session: &mut Session,
        sink: &mut dyn EventSink,
        events: Vec<EventPayload>,
    ) -> Result<(), EngineError> {
        sink.append(&events).map_err(EngineError::Sink)?;
        for ev in &events {
            session.apply(ev);
        }
        Ok(())
    }

    fn call(
        &self,
        sink: &mut dyn EventSink,
        request: &ChatRequest,
        agent: &str,
        turn_index: u64,
    ) -> Result<ChatResponse, EngineError> {
        let response = self.gateway.complete(request)?;
        sink.append(&[EventPayload::Response {
            agent: agent.to_string(),
            turn_index,
            response: response.clone(),
        }])
        .map_err(EngineError::Sink)?;
        Ok(response)
    }

    pub fn create_session(
        &self,
        scenario: Scenario,
        mode: Mode,
        sink: &mut dyn EventSink,
    ) -> Result<Session, EngineError> {
        let n = SESSION_COUNTER.fetch_add(1, Ordering::Relaxed);
        let id = format!("sess-{}-{n:06}", scenario.id.trim_start_matches("sc-"));
        self.create_session_with_id(id, scenario, mode, sink)
    }

    pub fn create_session_with_id(
        &self,
        id: impl Into<String>,
        scenario: Scenario,
        mode: Mode,
        sink: &mut dyn EventSink,
    ) -> Result<Session, EngineError> {
        scenario.check(&self.taxonomy)?;
        let entry = self
            .taxonomy
            .get(&scenario.profile.ground_truth_cc)
            .ok_or_else(|| ScenarioError::UnknownComplaint(scenario.profile.ground_truth_cc.clone()))?;
        let mut config = self.config.clone();
        if config.advice_required.is_none() {
            config.advice_required = Some(!entry.pre_arrival_instructions.is_empty());
        }
        let facts = CallerFacts::derive(&scenario, &self.catalogs);
        let persona = CallerPersona {
            reference: facts.reference,
            pronoun: facts.pronoun,
            person: facts.person.into(),
            address: facts.address,
            callback_number: facts.callback_number,
            age_years: scenario.profile.age_years,
            conscious: scenario.profile.conscious,
            breathing: scenario.profile.breathing,
            findings: scenario.profile.salient_findings.clone(),
            roadway: scenario.setting == Setting::Roadway,
            vague_opening: scenario.language_mismatch || scenario.caller_identity == CallerIdentity::MultipleCallers,
            limited_proficiency: scenario.language_mismatch,
            urgency: entry.urgency,
        };
        let created = EventPayload::Created {
            session_id: id.into(),
            narrative: narrative_template(&scenario, &self.catalogs),
            urgency: entry.urgency,
            scenario,
            mode,
            config,
            persona,
            backend_id: self.gateway.backend_id(),
            classifier_id: self.classifier.id().to_string(),
        };
        sink.append(std::slice::from_ref(&created)).map_err(EngineError::Sink)?;
        Ok(Session::from_created(&created).expect("created event"))
    }

    fn check_active(&self, session: &Session) -> Result<(), EngineError> {
        if session.status != SessionStatus::Active {
            return Err(EngineError::NotActive(session.status));
        }
        Ok(())
    }

    fn check_cap(&self, session: &mut Session, sink: &mut dyn EventSink) -> Result<(), EngineError> {
        if session.turn_index >= session.config.max_turns {
            self.commit(
                session,
                sink,
                vec![EventPayload::Aborted {
                    reason: TURN_CAP_REASON.into(),
                }],
            )?;
            return Err(EngineError::TurnCap(session.config.max_turns));
        }
        Ok(())
    }

    /// Produces the next turn. Auto mode: either speaker. Human mode: the
    /// caller's turn only (dispatcher turns come from submissions).
    pub fn step(&self, session: &mut Session, sink: &mut dyn EventSink) -> Result<TurnRecord, EngineError> {
        self.check_active(session)?;
        let speaker = session.next_speaker();
        if session.mode == Mode::HumanDispatcher && speaker == Speaker::Dispatcher {
            return Err(EngineError::OutOfTurn {
                expected: Speaker::Dispatcher,
            });
        }
        self.check_cap(session, sink)?;
        match speaker {
            Speaker::Caller => self.caller_turn(session, sink),
            _ => self.dispatcher_turn(session, sink),
        }
    }

    /// Records a human-authored dispatcher turn, then lets the caller agent reply.
    pub fn submit_human_utterance(
        &self,
        session: &mut Session,
        text: &str,
        sink: &mut dyn EventSink,
    ) -> Result<TurnRecord, EngineError> {
        self.check_active(session)?;
        if session.mode != Mode::HumanDispatcher {
            return Err(EngineError::WrongMode {
                expected: Mode::HumanDispatcher,
            });
        }
        if session.next_speaker() != Speaker::Dispatcher {
            return Err(EngineError::OutOfTurn {
                expected: Speaker::Caller,
            });
        }
        self.check_cap(session, sink)?;
        let index = session.turn_index;
        let record = TurnRecord {
            index,
            speaker: Speaker::Dispatcher,
            utterance: text.trim().to_string(),
            phase_at_turn: session.phase,
            classification: session.current_cc.clone(),
            sim_time_s: session.sim_time() + turn_increment(text, &session.config),
        };
        let mut events = vec![EventPayload::Turn {
            record: record.clone(),
            intent: "human".into(),
        }];
        events.extend(self.after_dispatcher_events(session, &record, &events));
        self.commit(session, sink, events)?;
        if session.status == SessionStatus::Active {
            // A failed caller reply leaves the dispatcher turn in place; a
            // later `step` produces it.
            let _ = self.step(session, sink);
        }
        Ok(record)
    }

    fn caller_intent(&self, session: &Session) -> String {
        let Some(last) = session.plan.last_dispatcher_intent.as_deref() else {
            return "opening".into();
        };
        if let Some(entity) = last.strip_prefix("ask:") {
            return format!("answer:{entity}");
        }
        match last {
            "symptom" => "symptom".into(),
            "red_flag" => "watch".into(),
            "dispatch" | "generic_dispatch" | "notify" => "dispatch_ack".into(),
            "update_ack" => "describe".into(),
            "instruction" => {
                if self.worsens(session) {
                    "update".into()
                } else {
                    "instruction".into()
                }
            }
            "human" => {
                let text = session
                    .transcript
                    .last()
                    .map(|t| t.utterance.as_str())
                    .unwrap_or_default();
                if let Some(e) = self.detectors.asked(text).first() {
                    format!("answer:{}", e.as_str())
                } else if session.phase == CallPhase::PreArrivalInstructions {
                    "instruction".into()
                } else if text.contains('?') {
                    "symptom".into()
                } else {
                    "hold".into()
                }
            }
            _ => "hold".into(),
        }
    }

    /// One deterministic worsening per eligible session, after the first instruction.
    fn worsens(&self, session: &Session) -> bool {
        session.phase == CallPhase::PreArrivalInstructions
            && !session.plan.worsening_reported
            && session.plan.instructions_given >= 1
            && (session.scenario.rng_seed >> 8).is_multiple_of(3)
    }

    fn caller_turn(&self, session: &mut Session, sink: &mut dyn EventSink) -> Result<TurnRecord, EngineError> {
        let index = session.turn_index;
        let intent = self.caller_intent(session);
        let mut request = ChatRequest::new(format!(
            "You are a person calling 911 about a medical emergency. Stay in character, answer what \
             the dispatcher asks in everyday words, and never name a diagnosis. The dispatcher has \
             just answered: \"911, what is the address of your emergency?\"\n\nBackground:\n{}",
            session.narrative
        ));
        request.messages = session.chat_history();
        if request.messages.is_empty() {
            request.messages.push(ChatMessage::new(
                Role::Dispatcher,
                "911, what is the address of your emergency?",
            ));
        }
        request.temperature = CALLER_TEMPERATURE;
        let request = request
            .with_tag("session", session.id.clone())
            .with_tag("agent", "caller")
            .with_tag("turn", index.to_string())
            .with_tag("intent", intent.clone())
            .with_tag("seed", session.scenario.rng_seed.to_string())
            .with_tag(
                "persona",
                serde_json::to_string(&session.persona).expect("persona serializes"),
            );
        let response = self.call(sink, &request, "caller", index)?;
        let utterance = response.content.trim().to_string();

        let mut history = session.caller_history();
        history.push(utterance.clone());
        let classification = self.classifier.classify(ClassifierInput {
            history: &history,
            taxonomy: &self.taxonomy,
            turn_index: index,
            ground_truth: Some(&session.scenario.profile.ground_truth_cc),
        });
        let record = TurnRecord {
            index,
            speaker: Speaker::Caller,
            sim_time_s: session.sim_time() + turn_increment(&utterance, &session.config),
            utterance,
            phase_at_turn: session.phase,
            classification,
        };
        let mut events = vec![EventPayload::Turn {
            record: record.clone(),
            intent,
        }];
        let mut probe = session.clone();
        probe.apply(&events[0]);
        if let Some(to) = self.next_phase(&probe) {
            events.push(EventPayload::PhaseChange {
                from: probe.phase,
                to,
                turn_index: index,
            });
        }
        self.commit(session, sink, events)?;
        Ok(record)
    }

    fn bundle(&self, session: &Session) -> ProtocolBundle {
        retrieve_protocol(&self.taxonomy, &session.current_cc, session.phase)
            .unwrap_or_else(|_| ProtocolBundle::generic(session.phase))
    }

    fn instruction_list(&self, session: &Session) -> Vec<String> {
        match self.taxonomy.get(&session.current_cc.label) {
            Some(e) if !e.pre_arrival_instructions.is_empty() => e.pre_arrival_instructions.clone(),
            _ => GENERIC_INSTRUCTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn elicited(&self, session: &Session) -> BTreeSet<CriticalEntity> {
        let mut found = BTreeSet::new();
        for t in session.transcript.iter().filter(|t| t.speaker == Speaker::Caller) {
            for e in CriticalEntity::ALL {
                if self.detectors.answers(e, &t.utterance) {
                    found.insert(e);
                }
            }
        }
        found
    }

    fn pending_targets(&self, session: &Session) -> Vec<AuxiliaryResource> {
        self.taxonomy
            .get(&session.current_cc.label)
            .map(|e| {
                e.auxiliary_resources
                    .iter()
                    .copied()
                    .filter(|t| !session.escalated(*t))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Next entity to ask about in a phase, skipping ones already asked or answered.
    fn next_entity(&self, session: &Session, order: &[CriticalEntity]) -> Option<CriticalEntity> {
        let elicited = self.elicited(session);
        order.iter().copied().find(|e| {
            session.scenario.critical_entities_required.contains(e)
                && !elicited.contains(e)
                && !session.plan.asked_entities.contains(e)
        })
    }

    fn assessment_plan(&self, session: &Session) -> Option<DispatcherPlan> {
        use CriticalEntity::*;
        if let Some(e) = self.next_entity(session, &[Consciousness, Breathing]) {
            return Some(DispatcherPlan::new(format!("ask:{}", e.as_str())));
        }
        let quota = EngineConfig::quota(&session.config.symptom_questions_by_urgency, session.urgency);
        let questions = self.bundle(session).questions;
        if session.plan.symptoms_asked < quota.min(questions.len()) {
            let mut p = DispatcherPlan::new("symptom");
            p.text = questions[session.plan.symptoms_asked].clone();
            return Some(p);
        }
        None
    }

    fn updates_plan(&self, session: &Session) -> Option<DispatcherPlan> {
        use CriticalEntity::*;
        if let Some(e) = self.next_entity(
            session,
            &[
                CallbackNumber,
                PatientAge,
                HazardsPresent,
                Consciousness,
                Breathing,
                Location,
                ChiefComplaintStated,
            ],
        ) {
            return Some(DispatcherPlan::new(format!("ask:{}", e.as_str())));
        }
        let quota = EngineConfig::quota(&session.config.red_flag_checks_by_urgency, session.urgency);
        let flags = self.bundle(session).red_flags;
        if session.plan.red_flags_asked < quota.min(flags.len()) {
            let mut p = DispatcherPlan::new("red_flag");
            p.text = flags[session.plan.red_flags_asked].clone();
            return Some(p);
        }
        None
    }

    fn plan(&self, session: &Session) -> DispatcherPlan {
        use CriticalEntity::*;
        match session.phase {
            CallPhase::InitialIntake => {
                let next = self.next_entity(session, &[Location, ChiefComplaintStated]);
                DispatcherPlan::new(match next {
                    Some(e) => format!("ask:{}", e.as_str()),
                    None => "hold".into(),
                })
            }
            CallPhase::SceneAssessment => self.assessment_plan(session).unwrap_or_else(|| {
                match self.next_entity(session, &[ChiefComplaintStated]) {
                    Some(e) => DispatcherPlan::new(format!("ask:{}", e.as_str())),
                    None => DispatcherPlan::new("hold"),
                }
            }),
            CallPhase::Dispatch => {
                let mut p = if session.current_cc.is_lack() {
                    DispatcherPlan::new("generic_dispatch")
                } else {
                    DispatcherPlan::new("dispatch")
                };
                p.targets = self.pending_targets(session);
                p
            }
            CallPhase::RealTimeUpdates => {
                if session.plan.last_caller_intent.as_deref() == Some("update") {
                    return DispatcherPlan::new("update_ack");
                }
                let targets = self.pending_targets(session);
                if !targets.is_empty() {
                    let mut p = DispatcherPlan::new("notify");
                    p.targets = targets;
                    return p;
                }
                self.updates_plan(session)
                    .unwrap_or_else(|| DispatcherPlan::new("hold"))
            }
            CallPhase::PreArrivalInstructions => {
                let list = self.instruction_list(session);
                let i = session.plan.instructions_given.min(list.len() - 1);
                let mut p = DispatcherPlan::new("instruction");
                p.text = list[i].clone();
                p
            }
            CallPhase::CallClosure => DispatcherPlan::new("closure"),
        }
    }

    fn dispatcher_turn(&self, session: &mut Session, sink: &mut dyn EventSink) -> Result<TurnRecord, EngineError> {
        let index = session.turn_index;
        let plan = self.plan(session);
        let bundle = self.bundle(session);
        let prompt = self
            .prompts
            .inject_prompt(&bundle, &session.history_lines(), template_for_phase(session.phase))
            .expect("every phase has a bundled template");
        let mut request = ChatRequest::new(prompt);
        request.messages = session.chat_history();
        request.temperature = DISPATCHER_TEMPERATURE;
        let spoken: Vec<&str> = plan.targets.iter().map(|t| t.spoken()).collect();
        let request = request
            .with_tag("session", session.id.clone())
            .with_tag("agent", "dispatcher")
            .with_tag("turn", index.to_string())
            .with_tag("intent", plan.intent.clone())
            .with_tag("text", plan.text.clone())
            .with_tag("style", Style::for_urgency(session.urgency).as_str())
            .with_tag(
                "addressee",
                if session.scenario.caller_identity == CallerIdentity::Patient {
                    "patient"
                } else {
                    "other"
                },
            )
            .with_tag("targets", join_spoken(&spoken))
            .with_tag("seed", session.scenario.rng_seed.to_string());
        let response = self.call(sink, &request, "dispatcher", index)?;
        let cap = session.config.brevity(session.urgency);
        let utterance = if plan.intent == "closure" {
            closure_utterance(&response.content, cap)
        } else {
            truncate_words(&response.content, cap)
        };

        let mut exchanges = Vec::new();
        for target in &plan.targets {
            exchanges.push(self.auxiliary_exchange(session, sink, *target, index)?);
        }

        let record = TurnRecord {
            index,
            speaker: Speaker::Dispatcher,
            sim_time_s: session.sim_time() + turn_increment(&utterance, &session.config),
            utterance,
            phase_at_turn: session.phase,
            classification: session.current_cc.clone(),
        };
        let mut events = vec![EventPayload::Turn {
            record: record.clone(),
            intent: plan.intent,
        }];
        events.extend(
            exchanges
                .into_iter()
                .map(|exchange| EventPayload::Escalation { exchange }),
        );
        events.extend(self.after_dispatcher_events(session, &record, &events));
        self.commit(session, sink, events)?;
        Ok(record)
    }

    /// Phase change and closure that follow a dispatcher turn.
    fn after_dispatcher_events(
        &self,
        session: &Session,
        record: &TurnRecord,
        pending: &[EventPayload],
    ) -> Vec<EventPayload> {
        let mut probe = session.clone();
        for ev in pending {
            probe.apply(ev);
        }
        let mut out = Vec::new();
        if record.phase_at_turn == CallPhase::CallClosure && record.utterance.contains(CALLBACK_LINE) {
            out.push(EventPayload::Closed {
                turn_index: record.index,
            });
        } else if let Some(to) = self.next_phase(&probe) {
            out.push(EventPayload::PhaseChange {
                from: probe.phase,
                to,
                turn_index: record.index,
            });
        }
        out
    }

    fn auxiliary_exchange(
        &self,
        session: &Session,
        sink: &mut dyn EventSink,
        target: AuxiliaryResource,
        turn_index: u64,
    ) -> Result<AuxiliaryExchange, EngineError> {
        let setting = self.catalogs.setting_label(session.scenario.setting).to_string();
        let complaint = self
            .taxonomy
            .get(&session.current_cc.label)
            .map_or("unknown problem", |e| e.name.as_str());
        let request_text = format!(
            "Requesting {} at the {setting}, {}: {complaint}.",
            target.spoken(),
            session.persona.address
        );
        let agent = format!("auxiliary:{}", target.as_str());
        let mut request = ChatRequest::new(format!(
            "You are the {} desk receiving a request from an emergency medical dispatcher. \
             Acknowledge it in one sentence naming the location.",
            target.spoken()
        ));
        request
            .messages
            .push(ChatMessage::new(Role::Dispatcher, request_text.clone()));
        let request = request
            .with_tag("session", session.id.clone())
            .with_tag("agent", agent.clone())
            .with_tag("turn", turn_index.to_string())
            .with_tag("target_spoken", target.spoken())
            .with_tag("setting", setting)
            .with_tag("address", session.persona.address.clone());
        let response = self.call(sink, &request, &agent, turn_index)?;
        Ok(AuxiliaryExchange {
            target,
            request: request_text,
            response: response.content,
            turn_index,
        })
    }

    /// Explicit escalation to one auxiliary agency.
    pub fn escalate(
        &self,
        session: &mut Session,
        target: AuxiliaryResource,
        sink: &mut dyn EventSink,
    ) -> Result<AuxiliaryExchange, EngineError> {
        self.check_active(session)?;
        if !matches!(session.phase, CallPhase::Dispatch | CallPhase::RealTimeUpdates) {
            return Err(EngineError::WrongPhase(session.phase));
        }
        let eligible = self
            .taxonomy
            .get(&session.current_cc.label)
            .is_some_and(|e| e.auxiliary_resources.contains(&target));
        if !eligible {
            return Err(EngineError::IneligibleTarget(target));
        }
        if session.escalated(target) {
            return Err(EngineError::DuplicateEscalation(target));
        }
        let turn_index = session.turn_index.saturating_sub(1);
        let exchange = self.auxiliary_exchange(session, sink, target, turn_index)?;
        self.commit(
            session,
            sink,
            vec![EventPayload::Escalation {
                exchange: exchange.clone(),
            }],
        )?;
        Ok(exchange)
    }

    /// Whether the planner still has questions for the current phase.
    fn agenda_open(&self, session: &Session) -> bool {
        if session.mode == Mode::HumanDispatcher {
            return false;
        }
        match session.phase {
            CallPhase::SceneAssessment => self.assessment_plan(session).is_some(),
            CallPhase::RealTimeUpdates => {
                !self.pending_targets(session).is_empty() || self.updates_plan(session).is_some()
            }
            _ => false,
        }
    }

    fn instructions_delivered(&self, session: &Session) -> bool {
        !session.advice_required() || session.plan.instructions_given >= self.instruction_list(session).len().max(1)
    }

    /// Guard evaluation: at most one allowed transition, or none.
    pub fn next_phase(&self, session: &Session) -> Option<CallPhase> {
        if session.status != SessionStatus::Active || session.plan.phase_dispatcher_turns == 0 {
            return None;
        }
        let caller_last = session.next_speaker() == Speaker::Dispatcher;
        let p = &session.plan;
        let next = match session.phase {
            CallPhase::InitialIntake if caller_last => {
                let got = self.elicited(session);
                let ready = got.contains(&CriticalEntity::Location)
                    && (got.contains(&CriticalEntity::ChiefComplaintStated)
                        || p.asked_entities.contains(&CriticalEntity::ChiefComplaintStated)
                        || !session.current_cc.is_lack());
                (ready || p.phase_caller_turns >= session.config.intake_max_caller_turns)
                    .then_some(CallPhase::SceneAssessment)
            }
            CallPhase::SceneAssessment if caller_last => {
                let ready = !session.current_cc.is_lack() && !self.agenda_open(session);
                (ready || p.phase_caller_turns >= session.config.assessment_max_caller_turns)
                    .then_some(CallPhase::Dispatch)
            }
            CallPhase::Dispatch => Some(CallPhase::RealTimeUpdates),
            CallPhase::RealTimeUpdates if caller_last => {
                let agenda_done = !self.agenda_open(session)
                    || p.phase_dispatcher_turns >= session.config.updates_max_dispatcher_turns;
                if !agenda_done {
                    None
                } else if self.instructions_delivered(session) {
                    Some(CallPhase::CallClosure)
                } else {
                    Some(CallPhase::PreArrivalInstructions)
                }
            }
            CallPhase::PreArrivalInstructions if caller_last => {
                let worsened = session
                    .transcript
                    .last()
                    .is_some_and(|t| t.utterance.to_lowercase().contains(WORSENING_MARKER));
                if worsened && session.plan.last_caller_intent.as_deref() != Some("hold") {
                    Some(CallPhase::RealTimeUpdates)
                } else if self.instructions_delivered(session) {
                    Some(CallPhase::CallClosure)
                } else {
                    None
                }
            }
            _ => None,
        };
        debug_assert!(next.is_none_or(|n| session.phase.can_transition_to(n)));
        next
    }

    /// Applies the guard result, if any, and returns the (possibly new) phase.
    pub fn advance_phase(&self, session: &mut Session, sink: &mut dyn EventSink) -> Result<CallPhase, EngineError> {
        self.check_active(session)?;
        if let Some(to) = self.next_phase(session) {
            let ev = EventPayload::PhaseChange {
                from: session.phase,
                to,
                turn_index: session.turn_index.saturating_sub(1),
            };
            self.commit(session, sink, vec![ev])?;
        }
        Ok(session.phase)
    }

    /// Steps until closed or aborted.
    pub fn run_to_completion(
        &self,
        session: &mut Session,
        sink: &mut dyn EventSink,
    ) -> Result<Transcript, EngineError> {
        if session.mode != Mode::Auto {
            return Err(EngineError::WrongMode { expected: Mode::Auto });
        }
        while session.status == SessionStatus::Active {
            match self.step(session, sink) {
                Ok(_) | Err(EngineError::TurnCap(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(session.to_transcript())
    }
}

fn join_spoken(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => format!("the {one}"),
        [init @ .., last] => format!(
            "{} and the {last}",
            init.iter().map(|s| format!("the {s}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Stable per-case seed derived from a corpus seed.
pub fn case_seed(corpus_seed: u64, case: usize) -> u64 {
    let digest = Sha256::digest(format!("{corpus_seed}:{case}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation() {
        assert_eq!(truncate_words("one two three", 2), "one two");
        assert_eq!(truncate_words(" one two ", 5), "one two");
        let c = closure_utterance(&format!("a b c d {CALLBACK_LINE}"), 2);
        assert_eq!(c, format!("a b {CALLBACK_LINE}"));
        assert_eq!(closure_utterance("", 3), CALLBACK_LINE);
    }

    #[test]
    fn spoken_lists() {
        assert_eq!(join_spoken(&["police"]), "the police");
        assert_eq!(join_spoken(&["fire", "police"]), "the fire and the police");
    }

    #[test]
    fn default_config_is_valid() {
        EngineConfig::default().validate().unwrap();
        let mut c = EngineConfig::default();
        c.dispatcher_brevity_by_urgency.remove(&Urgency::LifeCritical);
        assert!(c.validate().is_err());
    }
}

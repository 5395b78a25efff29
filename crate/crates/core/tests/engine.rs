mod common;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use dispatch_sim::corpus::CorpusRunner;
use dispatch_sim::events::{fold, EventPayload, NullSink};
use dispatch_sim::grounding::{classify_turn, Classifier, KeywordClassifier, OracleClassifier};
use dispatch_sim::llm::{ChatRequest, ChatResponse, GatewayError, LlmGateway, Recorder, ScriptLine, ScriptedBackend};
use dispatch_sim::opsmetrics::turn_increment;
use dispatch_sim::orchestrator::*;
use dispatch_sim::par::Execution;
use dispatch_sim::scenario::{bundled_profiles, generate_scenario, Scenario};
use dispatch_sim::taxonomy::{AuxiliaryResource, CallPhase, Taxonomy};
use dispatch_sim::template::{TemplateBackend, CALLBACK_LINE};
use dispatch_sim::transcript::*;

fn runner(classifier: Arc<dyn Classifier>) -> CorpusRunner {
    CorpusRunner {
        taxonomy: common::taxonomy(),
        gateway: Arc::new(TemplateBackend),
        classifier,
        config: EngineConfig::default(),
        profiles: bundled_profiles(),
    }
}

fn closed_corpus(classifier: Arc<dyn Classifier>, exec: Execution) -> Vec<Transcript> {
    runner(classifier)
        .run(100, 7, exec)
        .unwrap()
        .into_iter()
        .map(|o| o.unwrap_or_else(|f| panic!("{}: {}", f.case_id, f.message)))
        .collect()
}

fn scenario(i: usize, seed: u64) -> Scenario {
    generate_scenario(&Taxonomy::bundled(), &bundled_profiles()[i], seed).unwrap()
}

#[test]
fn template_corpus_is_closed_deterministic_and_sound() {
    let a = closed_corpus(Arc::new(KeywordClassifier), Execution::Parallel);
    let b = closed_corpus(Arc::new(KeywordClassifier), Execution::Sequential);
    assert_eq!(a.len(), 100);
    assert_eq!(write_corpus(&a), write_corpus(&b));
    let config = EngineConfig::default();
    for t in &a {
        assert_eq!(t.header.status, SessionStatus::Closed);
        assert!(verify_phase_sequence(&t.phase_sequence()), "{}", t.header.session_id);
        assert!(verify_alternation(&t.turns));
        assert!(verify_timestamps(&t.turns));
        let total: f64 = t.turns.iter().map(|r| turn_increment(&r.utterance, &config)).sum();
        assert!((t.duration_s() - total).abs() < 1e-9);
        let last = t.turns.last().unwrap();
        assert_eq!(last.speaker, Speaker::Dispatcher);
        assert_eq!(last.phase_at_turn, CallPhase::CallClosure);
        assert!(last.utterance.contains(CALLBACK_LINE));
        for (i, r) in t.turns.iter().enumerate() {
            assert_eq!(r.index, i as u64);
        }
    }
}

#[test]
fn oracle_classifier_escalates_every_target_once() {
    let taxonomy = Taxonomy::bundled();
    let corpus = closed_corpus(Arc::new(OracleClassifier), Execution::Parallel);
    let (mut correct, mut with_targets) = (0, 0);
    for t in &corpus {
        let entry = taxonomy.lookup(&t.header.scenario.profile.ground_truth_cc).unwrap();
        let targets: Vec<AuxiliaryResource> = t.header.escalations.iter().map(|e| e.target).collect();
        let unique: BTreeSet<_> = targets.iter().copied().collect();
        assert_eq!(targets.len(), unique.len(), "{}", t.header.session_id);
        if !entry.auxiliary_resources.is_empty() {
            with_targets += 1;
            correct += (unique == entry.auxiliary_resources) as usize;
        } else {
            assert!(targets.is_empty());
        }
        if !entry.pre_arrival_instructions.is_empty() {
            assert!(t
                .turns
                .iter()
                .any(|r| r.speaker == Speaker::Dispatcher && r.phase_at_turn == CallPhase::PreArrivalInstructions));
        }
        for e in &t.header.escalations {
            assert!(e.response.to_lowercase().contains(&e.target.spoken().to_lowercase()));
        }
    }
    assert!(with_targets > 0);
    assert_eq!(correct, with_targets);
}

#[test]
fn closure_follows_instructions_when_advice_required() {
    for t in closed_corpus(Arc::new(OracleClassifier), Execution::Parallel) {
        let first_closure = t
            .turns
            .iter()
            .position(|r| r.phase_at_turn == CallPhase::CallClosure)
            .unwrap();
        let instructed = t.turns[..first_closure]
            .iter()
            .any(|r| r.speaker == Speaker::Dispatcher && r.phase_at_turn == CallPhase::PreArrivalInstructions);
        assert!(instructed, "{}", t.header.session_id);
    }
}

#[test]
fn transition_checker_examples() {
    use CallPhase::*;
    let ok = [
        InitialIntake,
        SceneAssessment,
        Dispatch,
        RealTimeUpdates,
        PreArrivalInstructions,
        RealTimeUpdates,
        PreArrivalInstructions,
        CallClosure,
    ];
    assert!(verify_phase_sequence(&ok));
    assert!(verify_phase_sequence(&[
        InitialIntake,
        SceneAssessment,
        Dispatch,
        RealTimeUpdates,
        CallClosure
    ]));
    assert!(!verify_phase_sequence(&[InitialIntake, SceneAssessment, InitialIntake]));
    assert!(!verify_phase_sequence(&[InitialIntake, Dispatch]));
    assert!(!verify_phase_sequence(&[SceneAssessment]));
    assert!(!verify_phase_sequence(&[
        InitialIntake,
        SceneAssessment,
        Dispatch,
        RealTimeUpdates,
        CallClosure,
        RealTimeUpdates
    ]));
}

#[test]
fn create_session_contract() {
    let engine = common::template_engine(false);
    let s = scenario(3, 5);
    let a = engine.create_session(s.clone(), Mode::Auto, &mut NullSink).unwrap();
    let b = engine.create_session(s.clone(), Mode::Auto, &mut NullSink).unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!(a.phase, CallPhase::InitialIntake);
    assert_eq!(a.turn_index, 0);
    assert!(a.current_cc.is_lack());
    assert_eq!(a.status, SessionStatus::Active);
    let mut b2 = b.clone();
    b2.id = a.id.clone();
    assert_eq!(a, b2);

    let mut bad = s;
    bad.profile.ground_truth_cc = "zzz".into();
    assert!(matches!(
        engine.create_session(bad, Mode::Auto, &mut NullSink),
        Err(EngineError::InvalidScenario(_))
    ));
}

/// Records every request while delegating to the template backend.
#[derive(Default)]
struct PromptLog {
    requests: Mutex<Vec<ChatRequest>>,
}

impl LlmGateway for PromptLog {
    fn backend_id(&self) -> String {
        "prompt-log".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.requests.lock().unwrap().push(request.clone());
        TemplateBackend.complete(request)
    }
}

#[test]
fn trigger_turn_grounds_next_dispatcher_prompt() {
    let taxonomy = common::taxonomy();
    let log = Arc::new(PromptLog::default());
    let engine = Engine::new(
        taxonomy.clone(),
        log.clone(),
        Arc::new(KeywordClassifier),
        EngineConfig::default(),
    )
    .unwrap();
    let mut checked = 0;
    for i in 0..32 {
        let mut session = engine
            .create_session(scenario(i, 1), Mode::Auto, &mut NullSink)
            .unwrap();
        let t = engine.run_to_completion(&mut session, &mut NullSink).unwrap();
        let requests = log.requests.lock().unwrap().clone();
        log.requests.lock().unwrap().clear();
        let Some(first) = t
            .turns
            .iter()
            .position(|r| r.speaker == Speaker::Caller && !r.classification.is_lack())
        else {
            continue;
        };
        let next = &t.turns[first + 1];
        if !matches!(
            next.phase_at_turn,
            CallPhase::InitialIntake | CallPhase::SceneAssessment
        ) {
            continue;
        }
        let req = requests
            .iter()
            .find(|r| r.tag("agent") == Some("dispatcher") && r.tag("turn") == Some(next.index.to_string().as_str()))
            .unwrap();
        let entry = taxonomy.lookup(&t.turns[first].classification.label).unwrap();
        for q in &entry.typical_symptoms {
            assert!(req.system_prompt.contains(q.as_str()), "missing {q:?}");
        }
        checked += 1;
    }
    assert!(checked >= 16, "{checked}");
}

#[test]
fn responses_are_logged_before_turns() {
    let engine = common::template_engine(true);
    let mut events: Vec<EventPayload> = Vec::new();
    let mut session = engine.create_session(scenario(10, 2), Mode::Auto, &mut events).unwrap();
    engine.run_to_completion(&mut session, &mut events).unwrap();
    for (i, ev) in events.iter().enumerate() {
        if let EventPayload::Turn { record, .. } = ev {
            let agent = match record.speaker {
                Speaker::Caller => "caller",
                _ => "dispatcher",
            };
            assert!(events[..i].iter().any(|e| matches!(e,
                EventPayload::Response { agent: a, turn_index, .. } if a == agent && *turn_index == record.index)));
        }
        if let EventPayload::Escalation { exchange } = ev {
            let agent = format!("auxiliary:{}", exchange.target.as_str());
            assert!(events[..i].iter().any(|e| matches!(e,
                EventPayload::Response { agent: a, .. } if *a == agent)));
        }
    }
    assert_eq!(fold(&events).unwrap(), session);
}

#[test]
fn fold_reconstructs_state_after_every_step() {
    let engine = common::template_engine(false);
    for i in (0..100).step_by(7) {
        let mut events: Vec<EventPayload> = Vec::new();
        let mut session = engine
            .create_session(scenario(i, i as u64), Mode::Auto, &mut events)
            .unwrap();
        assert_eq!(fold(&events).unwrap(), session);
        while session.status == SessionStatus::Active {
            let _ = engine.step(&mut session, &mut events);
            assert_eq!(fold(&events).unwrap(), session, "case {i} turn {}", session.turn_index);
        }
    }
}

#[test]
fn turn_cap_aborts() {
    let config = EngineConfig {
        max_turns: 6,
        ..Default::default()
    };
    let engine = Engine::new(
        common::taxonomy(),
        Arc::new(TemplateBackend),
        Arc::new(KeywordClassifier),
        config,
    )
    .unwrap();
    let mut session = engine
        .create_session(scenario(0, 1), Mode::Auto, &mut NullSink)
        .unwrap();
    let t = engine.run_to_completion(&mut session, &mut NullSink).unwrap();
    assert_eq!(t.header.status, SessionStatus::Aborted);
    assert_eq!(t.header.abort_reason.as_deref(), Some(TURN_CAP_REASON));
    assert_eq!(t.turns.len(), 6);
    assert!(matches!(
        engine.step(&mut session, &mut NullSink),
        Err(EngineError::NotActive(_))
    ));

    let default = common::template_engine(false);
    let mut s = default
        .create_session(scenario(0, 1), Mode::Auto, &mut NullSink)
        .unwrap();
    for _ in 0..40 {
        if s.status != SessionStatus::Active {
            break;
        }
        let _ = default.step(&mut s, &mut NullSink);
    }
    assert!(s.transcript.len() <= 40);
}

#[test]
fn gateway_failure_leaves_session_unchanged() {
    let engine = Engine::new(
        common::taxonomy(),
        Arc::new(ScriptedBackend::default()),
        Arc::new(KeywordClassifier),
        EngineConfig::default(),
    )
    .unwrap();
    let mut session = engine
        .create_session(scenario(0, 1), Mode::Auto, &mut NullSink)
        .unwrap();
    let before = session.clone();
    let err = engine.step(&mut session, &mut NullSink).unwrap_err();
    assert!(matches!(
        err,
        EngineError::Gateway(GatewayError::FixtureExhausted { .. })
    ));
    assert_eq!(session, before);
}

#[test]
fn escalation_rules() {
    let engine = common::template_engine(true);
    let taxonomy = Taxonomy::bundled();
    let idx = bundled_profiles()
        .iter()
        .position(|p| {
            let r = &taxonomy.lookup(&p.ground_truth_cc).unwrap().auxiliary_resources;
            !r.is_empty() && r.len() < 4
        })
        .unwrap();
    let entry = taxonomy
        .lookup(&bundled_profiles()[idx].ground_truth_cc)
        .unwrap()
        .clone();
    let eligible = *entry.auxiliary_resources.iter().next().unwrap();
    let ineligible = *AuxiliaryResource::ALL
        .iter()
        .find(|r| !entry.auxiliary_resources.contains(r))
        .unwrap();

    let mut session = engine
        .create_session(scenario(idx, 3), Mode::Auto, &mut NullSink)
        .unwrap();
    assert!(matches!(
        engine.escalate(&mut session, eligible, &mut NullSink),
        Err(EngineError::WrongPhase(CallPhase::InitialIntake))
    ));
    while session.phase != CallPhase::Dispatch {
        engine.step(&mut session, &mut NullSink).unwrap();
    }
    let ex = engine.escalate(&mut session, eligible, &mut NullSink).unwrap();
    assert!(ex.response.to_lowercase().contains(&eligible.spoken().to_lowercase()));
    let setting = dispatch_sim::scenario::Catalogs::bundled()
        .setting_label(session.scenario.setting)
        .to_string();
    assert!(ex.response.contains(&setting) || ex.response.contains(&session.persona.address));
    assert!(matches!(
        engine.escalate(&mut session, eligible, &mut NullSink),
        Err(EngineError::DuplicateEscalation(_))
    ));
    assert!(matches!(
        engine.escalate(&mut session, ineligible, &mut NullSink),
        Err(EngineError::IneligibleTarget(_))
    ));
    let t = engine.run_to_completion(&mut session, &mut NullSink).unwrap();
    let targets: BTreeSet<_> = t.header.escalations.iter().map(|e| e.target).collect();
    assert_eq!(targets, entry.auxiliary_resources);
    assert_eq!(t.header.escalations.len(), entry.auxiliary_resources.len());
}

#[test]
fn human_dispatcher_mode() {
    let engine = common::template_engine(false);
    let mut events: Vec<EventPayload> = Vec::new();
    let mut session = engine
        .create_session(scenario(5, 9), Mode::HumanDispatcher, &mut events)
        .unwrap();
    assert!(matches!(
        engine.submit_human_utterance(&mut session, "Hello?", &mut events),
        Err(EngineError::OutOfTurn { .. })
    ));
    assert!(matches!(
        engine.run_to_completion(&mut session, &mut events),
        Err(EngineError::WrongMode { .. })
    ));
    engine.step(&mut session, &mut events).unwrap();
    assert!(matches!(
        engine.step(&mut session, &mut events),
        Err(EngineError::OutOfTurn { .. })
    ));
    let rec = engine
        .submit_human_utterance(&mut session, "What is the address of your emergency?", &mut events)
        .unwrap();
    assert_eq!(rec.speaker, Speaker::Dispatcher);
    let reply = session.transcript.last().unwrap();
    assert_eq!(reply.speaker, Speaker::Caller);
    assert!(
        reply.utterance.contains(&session.persona.address),
        "{}",
        reply.utterance
    );

    // Play the call to closure with plain human text.
    let entry = Taxonomy::bundled()
        .lookup(&session.scenario.profile.ground_truth_cc)
        .unwrap()
        .clone();
    let mut instruction = 0;
    for _ in 0..40 {
        if session.status != SessionStatus::Active {
            break;
        }
        let text = match session.phase {
            CallPhase::CallClosure => format!("Help is almost there. {CALLBACK_LINE}"),
            CallPhase::PreArrivalInstructions => {
                let t = entry.pre_arrival_instructions[instruction % entry.pre_arrival_instructions.len()].clone();
                instruction += 1;
                t
            }
            CallPhase::Dispatch => "I am sending an ambulance to you now.".into(),
            _ => "Tell me exactly what happened.".into(),
        };
        engine.submit_human_utterance(&mut session, &text, &mut events).unwrap();
    }
    assert_eq!(session.status, SessionStatus::Closed);
    assert!(verify_phase_sequence(&session.to_transcript().phase_sequence()));
    assert!(verify_alternation(&session.transcript));
    assert_eq!(fold(&events).unwrap(), session);
    assert!(matches!(
        engine.submit_human_utterance(&mut session, "Hello?", &mut events),
        Err(EngineError::NotActive(SessionStatus::Closed))
    ));
}

fn f1_scenario() -> Scenario {
    scenario(0, 11)
}

#[test]
fn scripted_fixture_f1_replays_turn_for_turn() {
    let script_path = common::golden_path("f1_script.jsonl");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let recorder = Arc::new(Recorder::new(TemplateBackend));
        let engine = Engine::new(
            common::taxonomy(),
            recorder.clone(),
            Arc::new(KeywordClassifier),
            EngineConfig::default(),
        )
        .unwrap();
        let mut s = engine
            .create_session_with_id("F1", f1_scenario(), Mode::Auto, &mut NullSink)
            .unwrap();
        engine.run_to_completion(&mut s, &mut NullSink).unwrap();
        let lines: String = recorder
            .take()
            .iter()
            .map(|l: &ScriptLine| serde_json::to_string(l).unwrap() + "\n")
            .collect();
        std::fs::write(&script_path, lines).unwrap();
    }
    let backend =
        ScriptedBackend::from_jsonl(std::io::BufReader::new(std::fs::File::open(&script_path).unwrap())).unwrap();
    let engine = Engine::new(
        common::taxonomy(),
        Arc::new(backend),
        Arc::new(KeywordClassifier),
        EngineConfig::default(),
    )
    .unwrap();
    let mut s = engine
        .create_session_with_id("F1", f1_scenario(), Mode::Auto, &mut NullSink)
        .unwrap();
    let t = engine.run_to_completion(&mut s, &mut NullSink).unwrap();
    assert_eq!(t.header.status, SessionStatus::Closed);
    assert_eq!(t.header.backend_id, ScriptedBackend::ID);
    common::golden("f1_transcript.jsonl", &t.to_jsonl());
    let parsed = Transcript::from_jsonl(t.to_jsonl().as_bytes()).unwrap();
    assert_eq!(parsed, t);
}

#[test]
fn template_transcript_golden() {
    let engine = common::template_engine(false);
    let mut s = engine
        .create_session_with_id("G1", scenario(42, 3), Mode::Auto, &mut NullSink)
        .unwrap();
    let t = engine.run_to_completion(&mut s, &mut NullSink).unwrap();
    common::golden("template_case42.jsonl", &t.to_jsonl());
}

#[test]
fn caller_phrasing_carries_no_triggers() {
    let engine = common::template_engine(false);
    let taxonomy = Taxonomy::bundled();
    let intents = [
        "opening",
        "symptom",
        "watch",
        "instruction",
        "dispatch_ack",
        "update",
        "describe",
        "hold",
        "closure",
        "answer:location",
        "answer:callback_number",
        "answer:patient_age",
        "answer:consciousness",
        "answer:breathing",
        "answer:hazards_present",
    ];
    for i in 0..100 {
        let session = engine
            .create_session(scenario(i, i as u64), Mode::Auto, &mut NullSink)
            .unwrap();
        let mut persona = session.persona.clone();
        persona.findings.clear();
        for intent in intents {
            for salt in 0..12 {
                let text = persona.render(intent, &format!("{i}:{salt}"));
                let c = classify_turn(std::slice::from_ref(&text), &taxonomy);
                assert!(c.is_lack(), "{intent} -> {text:?} matched {:?}", c.matched_triggers);
            }
        }
    }
}

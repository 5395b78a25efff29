//! REST handlers under `/api/v1`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use dispatch_sim::evalkit::LexiconClassifier;
use dispatch_sim::events::EventPayload;
use dispatch_sim::opsmetrics::DetectorSet;
use dispatch_sim::orchestrator::{Engine, EngineError, Session};
use dispatch_sim::questionnaire::questionnaire;
use dispatch_sim::report::{evaluate_corpus, ReportError};
use dispatch_sim::scenario::{PatientProfile, ScenarioGenerator};
use dispatch_sim::stats::{RatingRecord, StatsError};
use dispatch_sim::taxonomy::{AuxiliaryResource, CallPhase, Taxonomy};
use dispatch_sim::transcript::{read_corpus, Mode, SessionStatus, Speaker, Transcript};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::store::{Store, StoreError, StoredRating, StoredResponse};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAY_HEADER: &str = "idempotent-replay";

pub struct AppState {
    pub store: Store,
    pub engine: Engine,
    pub taxonomy: Arc<Taxonomy>,
    pub profiles: Vec<PatientProfile>,
    pub ui_dir: PathBuf,
    key_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(
        store: Store,
        engine: Engine,
        taxonomy: Arc<Taxonomy>,
        profiles: Vec<PatientProfile>,
        ui_dir: PathBuf,
    ) -> Self {
        Self {
            store,
            engine,
            taxonomy,
            profiles,
            ui_dir,
            key_locks: Mutex::new(HashMap::new()),
        }
    }
}

type Shared = Arc<AppState>;

/// Status plus JSON body; errors carry `{"error": code, "message": text}`.
#[derive(Debug, Clone)]
pub struct Reply {
    status: StatusCode,
    body: Value,
}

impl Reply {
    fn ok(body: Value) -> Self {
        Self {
            status: StatusCode::OK,
            body,
        }
    }

    fn created(body: Value) -> Self {
        Self {
            status: StatusCode::CREATED,
            body,
        }
    }

    fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
        }
    }
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body)).into_response()
    }
}

fn store_error(e: StoreError) -> Reply {
    Reply::error(StatusCode::INTERNAL_SERVER_ERROR, "persistence_error", e.to_string())
}

fn engine_error(e: EngineError) -> Reply {
    use EngineError::*;
    let (status, code) = match &e {
        InvalidScenario(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario"),
        Gateway(_) => (StatusCode::BAD_GATEWAY, "gateway_error"),
        Config(_) => (StatusCode::INTERNAL_SERVER_ERROR, "engine_config"),
        NotActive(_) => (StatusCode::CONFLICT, "session_not_active"),
        WrongMode { .. } => (StatusCode::BAD_REQUEST, "wrong_mode"),
        OutOfTurn { .. } => (StatusCode::CONFLICT, "out_of_turn"),
        TurnCap(_) => (StatusCode::CONFLICT, "turn_cap"),
        IneligibleTarget(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ineligible_target"),
        DuplicateEscalation(_) => (StatusCode::CONFLICT, "duplicate_escalation"),
        WrongPhase(_) => (StatusCode::CONFLICT, "wrong_phase"),
        Sink(_) => (StatusCode::INTERNAL_SERVER_ERROR, "persistence_error"),
    };
    Reply::error(status, code, e.to_string())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Reply> {
    let bytes: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| Reply::error(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

/// Runs `f` once per idempotency key and replays its reply on retries.
/// Requests without the header run every time.
async fn idempotent<F, Fut>(state: &Shared, headers: &HeaderMap, route: String, f: F) -> Response
where
    F: FnOnce() -> Fut,
    Fut: std::future::Future<Output = Reply>,
{
    let Some(key) = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|k| !k.is_empty())
    else {
        return f().await.into_response();
    };
    let lock = state
        .key_locks
        .lock()
        .unwrap()
        .entry(key.to_string())
        .or_default()
        .clone();
    let _guard = lock.lock().await;
    if let Some(stored) = state.store.idempotent(key) {
        if stored.route != route {
            return Reply::error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "idempotency_key_reused",
                "key was first used on a different route",
            )
            .into_response();
        }
        let mut resp = Reply {
            status: StatusCode::from_u16(stored.status).unwrap_or(StatusCode::OK),
            body: stored.body,
        }
        .into_response();
        resp.headers_mut()
            .insert(REPLAY_HEADER, HeaderValue::from_static("true"));
        return resp;
    }
    let reply = f().await;
    if !reply.status.is_server_error() {
        let stored = StoredResponse {
            key: key.to_string(),
            route,
            status: reply.status.as_u16(),
            body: reply.body.clone(),
        };
        if let Err(e) = state.store.remember(stored) {
            return store_error(e).into_response();
        }
    }
    reply.into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("blocking task panicked")
}

pub fn router(state: Shared) -> Router {
    let ui = ServeDir::new(state.ui_dir.clone());
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/taxonomy", get(taxonomy))
        .route("/api/v1/questionnaire", get(get_questionnaire))
        .route("/api/v1/scenarios", post(create_scenario))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/turns", post(post_turn))
        .route("/api/v1/sessions/{id}/ratings", post(post_rating))
        .route("/api/v1/reports/evaluation", get(evaluation_report))
        .nest_service("/ui", ui)
        .fallback(|| async { Reply::error(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

async fn health(State(state): State<Shared>) -> Reply {
    Reply::ok(json!({ "status": "ok", "taxonomy_checksum": state.taxonomy.checksum() }))
}

async fn taxonomy(State(state): State<Shared>) -> Reply {
    Reply::ok(serde_json::to_value(state.taxonomy.to_document()).expect("taxonomy serializes"))
}

async fn get_questionnaire() -> Reply {
    Reply::ok(serde_json::to_value(questionnaire()).expect("questionnaire serializes"))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileRef {
    Index(usize),
    Inline(PatientProfile),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRequest {
    seed: u64,
    profile: Option<ProfileRef>,
}

async fn create_scenario(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let s = state.clone();
    idempotent(&state, &headers, "POST /api/v1/scenarios".into(), || async move {
        let req: ScenarioRequest = match parse_body(&body) {
            Ok(r) => r,
            Err(e) => return e,
        };
        let profile = match req.profile {
            None => s.profiles[(req.seed % s.profiles.len() as u64) as usize].clone(),
            Some(ProfileRef::Index(i)) => match s.profiles.get(i) {
                Some(p) => p.clone(),
                None => {
                    return Reply::error(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "invalid_profile",
                        format!("profile index {i} is out of range 0..{}", s.profiles.len()),
                    )
                }
            },
            Some(ProfileRef::Inline(p)) => p,
        };
        let scenario = match ScenarioGenerator::default().generate(&s.taxonomy, &profile, req.seed) {
            Ok(sc) => sc,
            Err(e) => return Reply::error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_profile", e.to_string()),
        };
        if let Err(e) = s.store.put_scenario(&scenario) {
            return store_error(e);
        }
        // Ground truth stays server-side while a call may still be played.
        Reply::created(json!({ "scenario_id": scenario.id, "seed": req.seed }))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRequest {
    scenario_id: String,
    mode: Mode,
}

async fn create_session(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let s = state.clone();
    idempotent(&state, &headers, "POST /api/v1/sessions".into(), || async move {
        let req: SessionRequest = match parse_body(&body) {
            Ok(r) => r,
            Err(e) => return e,
        };
        let Some(scenario) = s.store.scenario(&req.scenario_id) else {
            return Reply {
                status: StatusCode::NOT_FOUND,
                body: json!({ "error": "scenario_not_found" }),
            };
        };
        let st = s.clone();
        blocking(move || {
            let created = st.store.create_session(&req.scenario_id, req.mode, |id, sink| {
                st.engine.create_session_with_id(id, scenario, req.mode, sink)
            });
            match created {
                Err(e) => store_error(e),
                Ok(Err(e)) => engine_error(e),
                Ok(Ok(slot)) => {
                    let slot = slot.lock().unwrap();
                    Reply::created(session_view(&st, &slot.session, &slot.ratings))
                }
            }
        })
        .await
    })
    .await
}

/// Opaque token naming the turn a client is answering.
pub fn turn_token(session: &Session) -> String {
    format!("t{}", session.turn_index)
}

fn whose_turn(session: &Session) -> Value {
    if session.status != SessionStatus::Active {
        return Value::Null;
    }
    match session.next_speaker() {
        Speaker::Caller => json!("caller"),
        _ => json!("dispatcher"),
    }
}

/// Session state plus the questionnaire, enough for either console view.
pub fn session_view(state: &AppState, session: &Session, ratings: &[StoredRating]) -> Value {
    let active = session.status == SessionStatus::Active;
    let escalation_open = active && matches!(session.phase, CallPhase::Dispatch | CallPhase::RealTimeUpdates);
    let eligible: Vec<AuxiliaryResource> = state
        .taxonomy
        .get(&session.current_cc.label)
        .map(|e| {
            e.auxiliary_resources
                .iter()
                .copied()
                .filter(|r| !session.escalations.iter().any(|x| x.target == *r))
                .collect()
        })
        .unwrap_or_default();
    let awaiting = match (active, session.mode, session.next_speaker()) {
        (false, ..) => Value::Null,
        (true, Mode::HumanDispatcher, Speaker::Dispatcher) => json!("utterance"),
        _ => json!("step"),
    };
    json!({
        "session_id": session.id,
        "scenario_id": session.scenario.id,
        "mode": session.mode,
        "status": session.status,
        "abort_reason": session.abort_reason,
        "phase": session.phase,
        "turn_index": session.turn_index,
        "next_speaker": whose_turn(session),
        "awaiting": awaiting,
        "turn_token": if active { json!(turn_token(session)) } else { Value::Null },
        "current_classification": session.current_cc,
        "turns": session.transcript,
        "escalations": session.escalations,
        "escalation_open": escalation_open,
        "eligible_targets": if escalation_open { json!(eligible) } else { json!([]) },
        "backend_id": session.backend_id,
        "scenario": if active { Value::Null } else { serde_json::to_value(&session.scenario).unwrap() },
        "ratings": ratings.iter().map(|r| json!({ "rating_id": r.rating_id, "rater_id": r.record.rater_id })).collect::<Vec<_>>(),
        "questionnaire": questionnaire(),
    })
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Reply {
    match state.store.slot(&id) {
        None => Reply::error(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}")),
        Some(slot) => {
            let slot = slot.lock().unwrap();
            Reply::ok(session_view(&state, &slot.session, &slot.ratings))
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TurnRequest {
    utterance: Option<String>,
    turn_token: Option<String>,
    escalate: Option<AuxiliaryResource>,
}

async fn post_turn(State(state): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let s = state.clone();
    let route = format!("POST /api/v1/sessions/{id}/turns");
    idempotent(&state, &headers, route, || async move {
        let req: TurnRequest = match parse_body(&body) {
            Ok(r) => r,
            Err(e) => return e,
        };
        let Some(slot) = s.store.slot(&id) else {
            return Reply::error(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"));
        };
        let st = s.clone();
        blocking(move || {
            let mut guard = slot.lock().unwrap();
            let slot = &mut *guard;
            match &req.turn_token {
                Some(t) if *t != turn_token(&slot.session) => {
                    return Reply::error(
                        StatusCode::CONFLICT,
                        "stale_turn_token",
                        format!("token {t} does not name the current turn"),
                    )
                }
                None if slot.session.mode == Mode::HumanDispatcher => {
                    return Reply::error(
                        StatusCode::BAD_REQUEST,
                        "turn_token_required",
                        "human-mode turns need a turn_token",
                    )
                }
                _ => {}
            }
            let (session, mut sink) = slot.split();
            let result = if let Some(target) = req.escalate {
                if req.utterance.is_some() {
                    Err(Reply::error(
                        StatusCode::BAD_REQUEST,
                        "invalid_body",
                        "escalate and utterance are exclusive",
                    ))
                } else {
                    st.engine
                        .escalate(session, target, &mut sink)
                        .map(|_| ())
                        .map_err(engine_error)
                }
            } else {
                match (session.mode, session.next_speaker(), req.utterance) {
                    (Mode::HumanDispatcher, Speaker::Dispatcher, Some(text)) => st
                        .engine
                        .submit_human_utterance(session, &text, &mut sink)
                        .map(|_| ())
                        .map_err(engine_error),
                    (Mode::HumanDispatcher, Speaker::Dispatcher, None) => Err(Reply::error(
                        StatusCode::BAD_REQUEST,
                        "utterance_required",
                        "the dispatcher's turn needs an utterance",
                    )),
                    (_, _, Some(_)) => Err(Reply::error(
                        StatusCode::BAD_REQUEST,
                        "utterance_not_allowed",
                        "an utterance is accepted only on a human dispatcher's turn",
                    )),
                    (_, _, None) => st.engine.step(session, &mut sink).map(|_| ()).map_err(engine_error),
                }
            };
            match result {
                Ok(()) => Reply::ok(session_view(&st, &slot.session, &slot.ratings)),
                Err(e) => e,
            }
        })
        .await
    })
    .await
}

async fn post_rating(State(state): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let s = state.clone();
    let route = format!("POST /api/v1/sessions/{id}/ratings");
    idempotent(&state, &headers, route, || async move {
        let record: RatingRecord = match parse_body(&body) {
            Ok(r) => r,
            Err(e) => return e,
        };
        let Some(slot) = s.store.slot(&id) else {
            return Reply::error(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"));
        };
        if let Err(e) = record.validate() {
            let field = match &e {
                StatsError::InvalidRecord { field, .. } => *field,
                _ => "",
            };
            return Reply {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": "invalid_rating", "field": field, "message": e.to_string() }),
            };
        }
        if record.case_id != id {
            return Reply::error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "case_mismatch",
                format!("case_id {} does not match session {id}", record.case_id),
            );
        }
        let st = s.clone();
        blocking(move || {
            let mut slot = slot.lock().unwrap();
            if slot.session.status == SessionStatus::Active {
                return Reply::error(
                    StatusCode::CONFLICT,
                    "session_open",
                    "ratings need a closed or aborted session",
                );
            }
            if !st.store.reserve_rating_pair(&record.case_id, &record.rater_id) {
                return Reply::error(
                    StatusCode::CONFLICT,
                    "duplicate_rating",
                    format!("rater {} already rated {}", record.rater_id, record.case_id),
                );
            }
            let rating_id = format!("{}-r{}", record.case_id, slot.ratings.len() + 1);
            let ev = EventPayload::Rating {
                rating_id: rating_id.clone(),
                record: record.clone(),
            };
            if let Err(e) = dispatch_sim::events::EventSink::append(&mut slot.sink(), &[ev]) {
                st.store.release_rating_pair(&record.case_id, &record.rater_id);
                return Reply::error(StatusCode::INTERNAL_SERVER_ERROR, "persistence_error", e);
            }
            slot.ratings.push(StoredRating {
                rating_id: rating_id.clone(),
                record,
            });
            Reply::created(json!({ "rating_id": rating_id }))
        })
        .await
    })
    .await
}

#[derive(Deserialize)]
struct ReportQuery {
    corpus: Option<String>,
}

/// `corpus=sessions` (the default) scores every finished session;
/// any other name reads `<data dir>/corpora/<name>.jsonl`.
async fn evaluation_report(State(state): State<Shared>, Query(q): Query<ReportQuery>) -> Reply {
    let name = q.corpus.unwrap_or_else(|| "sessions".into());
    let st = state.clone();
    blocking(move || {
        let (transcripts, warnings): (Vec<Transcript>, _) = if name == "sessions" {
            let t = st
                .store
                .snapshot()
                .into_iter()
                .filter(|s| s.status != SessionStatus::Active)
                .map(|s| s.to_transcript())
                .collect();
            (t, Vec::new())
        } else {
            let valid = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && !name.starts_with('.');
            if !valid {
                return Reply::error(StatusCode::BAD_REQUEST, "invalid_corpus_name", format!("{name:?}"));
            }
            let path = st.store.dir().join("corpora").join(format!("{name}.jsonl"));
            let Ok(file) = std::fs::File::open(&path) else {
                return Reply::error(StatusCode::NOT_FOUND, "corpus_not_found", format!("no corpus {name}"));
            };
            match read_corpus(std::io::BufReader::new(file)) {
                Ok(x) => x,
                Err(e) => return Reply::error(StatusCode::UNPROCESSABLE_ENTITY, "corrupt_corpus", e.to_string()),
            }
        };
        let detectors = DetectorSet::bundled(&st.taxonomy);
        match evaluate_corpus(&transcripts, warnings, &LexiconClassifier::bundled(), &detectors) {
            Ok(report) => Reply::ok(serde_json::to_value(report).expect("report serializes")),
            Err(ReportError::EmptyCorpus) => Reply::error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty_corpus",
                "no finished transcripts to evaluate",
            ),
            Err(e) => Reply::error(StatusCode::INTERNAL_SERVER_ERROR, "evaluation_error", e.to_string()),
        }
    })
    .await
}

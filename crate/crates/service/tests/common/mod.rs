#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use dispatch_sim_service::{build_state, router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct App {
    pub state: Arc<AppState>,
    pub router: Router,
}

pub fn app(dir: &Path) -> App {
    let config = ServiceConfig {
        data_dir: dir.join("data"),
        ui_dir: dir.join("ui"),
        ..Default::default()
    };
    let state = build_state(&config).unwrap();
    App {
        router: router(state.clone()),
        state,
    }
}

pub struct Resp {
    pub status: StatusCode,
    pub body: Value,
    pub headers: HeaderMap,
}

impl App {
    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> Resp {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let resp = self.router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        Resp { status, body, headers }
    }

    pub async fn get(&self, uri: &str) -> Resp {
        self.call("GET", uri, None, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Resp {
        self.call("POST", uri, Some(body), None).await
    }

    pub async fn scenario(&self, seed: u64, profile: usize) -> String {
        let r = self
            .post(
                "/api/v1/scenarios",
                serde_json::json!({ "seed": seed, "profile": profile }),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
        r.body["scenario_id"].as_str().unwrap().to_string()
    }

    pub async fn session(&self, seed: u64, profile: usize, mode: &str) -> Value {
        let scenario_id = self.scenario(seed, profile).await;
        let r = self
            .post(
                "/api/v1/sessions",
                serde_json::json!({ "scenario_id": scenario_id, "mode": mode }),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
        r.body
    }

    /// One step of an auto session, or of the caller in human mode.
    pub async fn step(&self, id: &str, token: &str) -> Resp {
        self.post(
            &format!("/api/v1/sessions/{id}/turns"),
            serde_json::json!({ "turn_token": token }),
        )
        .await
    }

    pub async fn say(&self, id: &str, token: &str, text: &str) -> Resp {
        self.post(
            &format!("/api/v1/sessions/{id}/turns"),
            serde_json::json!({ "turn_token": token, "utterance": text }),
        )
        .await
    }

    /// Steps an auto session until it leaves the active state.
    pub async fn run_auto(&self, view: Value) -> Value {
        let id = view["session_id"].as_str().unwrap().to_string();
        let mut view = view;
        for _ in 0..60 {
            if view["status"] != "active" {
                break;
            }
            let r = self.step(&id, view["turn_token"].as_str().unwrap()).await;
            assert!(r.status.is_success() || r.body["error"] == "turn_cap", "{}", r.body);
            view = self.get(&format!("/api/v1/sessions/{id}")).await.body;
        }
        view
    }
}

/// Dispatcher text a human might type for each phase.
pub fn human_line(view: &Value, instruction: &mut usize, instructions: &[String]) -> String {
    match view["phase"].as_str().unwrap() {
        "call_closure" => format!("Help is almost there. {}", dispatch_sim::template::CALLBACK_LINE),
        "pre_arrival_instructions" => {
            let t = instructions[*instruction % instructions.len()].clone();
            *instruction += 1;
            t
        }
        "dispatch" => "I am sending an ambulance to you now.".into(),
        "scene_assessment" => "Is the patient awake and breathing?".into(),
        _ => "What is the address of the emergency?".into(),
    }
}

pub fn rating(case: &str, rater: &str) -> Value {
    serde_json::json!({
        "case_id": case,
        "rater_id": rater,
        "advice_given": true,
        "amount_advice": 4,
        "helpfulness": 5,
        "num_questions": 3,
        "relevance": 4,
        "contacted_correct": true,
        "told_callback": true,
    })
}

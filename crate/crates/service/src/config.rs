use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use dispatch_sim::grounding::KeywordClassifier;
use dispatch_sim::llm::{GatewayError, LlmGateway, RemoteBackend, RemoteConfig};
use dispatch_sim::orchestrator::{Engine, EngineConfig, EngineError};
use dispatch_sim::scenario::bundled_profiles;
use dispatch_sim::taxonomy::Taxonomy;
use dispatch_sim::template::TemplateBackend;
use thiserror::Error;

use crate::api::{router, AppState};
use crate::store::{Store, StoreError};

pub const ENV_DATA_DIR: &str = "DISPATCH_SIM_DATA_DIR";
pub const ENV_PORT: &str = "DISPATCH_SIM_PORT";
pub const ENV_HOST: &str = "DISPATCH_SIM_HOST";
pub const ENV_UI_DIR: &str = "DISPATCH_SIM_UI_DIR";
pub const ENV_BACKEND: &str = "DISPATCH_SIM_BACKEND";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Template,
    Remote,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub ui_dir: PathBuf,
    pub backend: Backend,
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("dispatch-sim-data"),
            host: "127.0.0.1".into(),
            port: 8080,
            ui_dir: PathBuf::from("ui"),
            backend: Backend::Template,
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by the `DISPATCH_SIM_*` environment variables.
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_lookup(|k| std::env::var(k).ok().filter(|v| !v.is_empty()))
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let mut cfg = Self::default();
        if let Some(d) = get(ENV_DATA_DIR) {
            cfg.data_dir = d.into();
        }
        if let Some(h) = get(ENV_HOST) {
            cfg.host = h;
        }
        if let Some(p) = get(ENV_PORT) {
            cfg.port = p
                .parse()
                .map_err(|_| ServiceError::Config(format!("{ENV_PORT}={p:?} is not a port number")))?;
        }
        if let Some(u) = get(ENV_UI_DIR) {
            cfg.ui_dir = u.into();
        }
        if let Some(b) = get(ENV_BACKEND) {
            cfg.backend = match b.as_str() {
                "template" => Backend::Template,
                "remote" => Backend::Remote,
                other => {
                    return Err(ServiceError::Config(format!(
                        "{ENV_BACKEND}={other:?}; expected template or remote"
                    )))
                }
            };
        }
        Ok(cfg)
    }
}

pub fn build_state(config: &ServiceConfig) -> Result<Arc<AppState>, ServiceError> {
    let taxonomy = Arc::new(Taxonomy::bundled());
    let gateway: Arc<dyn LlmGateway> = match config.backend {
        Backend::Template => Arc::new(TemplateBackend),
        Backend::Remote => Arc::new(RemoteBackend::new(RemoteConfig::from_env()?)),
    };
    let engine = Engine::new(
        taxonomy.clone(),
        gateway,
        Arc::new(KeywordClassifier),
        config.engine.clone(),
    )?;
    let store = Store::open(&config.data_dir)?;
    Ok(Arc::new(AppState::new(
        store,
        engine,
        taxonomy,
        bundled_profiles(),
        config.ui_dir.clone(),
    )))
}

/// Binds and serves until Ctrl-C. Every log line is synced as it is
/// written, so shutdown has nothing left to flush.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = build_state(&config)?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|_| ServiceError::Config(format!("bad listen address {}:{}", config.host, config.port)))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    eprintln!(
        "dispatch-sim service listening on http://{} (data dir {})",
        listener.local_addr().unwrap_or(addr),
        config.data_dir.display()
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

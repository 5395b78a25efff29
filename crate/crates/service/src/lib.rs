//! REST service over the dispatch simulation engine, persisted as
//! append-only JSONL event logs.

pub mod api;
pub mod config;
pub mod store;

pub use api::{router, session_view, turn_token, AppState};
pub use config::{build_state, serve, ServiceConfig, ServiceError};
pub use store::{Store, StoreError};

//! Taxonomy-grounded emergency dispatch dialogue simulation and evaluation.

pub mod corpus;
pub mod evalkit;
pub mod events;
pub mod grounding;
pub mod llm;
pub mod opsmetrics;
pub mod orchestrator;
pub mod par;
pub mod questionnaire;
pub mod report;
pub mod scenario;
pub mod stats;
pub mod taxonomy;
pub mod template;
pub mod transcript;

//! Batch simulation over the fixture profiles.

use std::sync::Arc;

use crate::events::NullSink;
use crate::grounding::Classifier;
use crate::llm::LlmGateway;
use crate::orchestrator::{case_seed, Engine, EngineConfig, EngineError};
use crate::par::{map_indexed, Execution};
use crate::scenario::{PatientProfile, ScenarioGenerator};
use crate::taxonomy::Taxonomy;
use crate::transcript::{Mode, SessionStatus, Transcript};

#[derive(Debug)]
pub struct CaseFailure {
    pub case_id: String,
    pub message: String,
    /// Present when the session ran but did not close.
    pub transcript: Option<Box<Transcript>>,
}

impl CaseFailure {
    fn with_transcript(mut self, t: Transcript) -> Self {
        self.transcript = Some(Box::new(t));
        self
    }
}

pub type CaseOutcome = Result<Transcript, CaseFailure>;

/// `case-0001`, `case-0002`, ...
pub fn case_id(i: usize) -> String {
    format!("case-{:04}", i + 1)
}

pub struct CorpusRunner {
    pub taxonomy: Arc<Taxonomy>,
    pub gateway: Arc<dyn LlmGateway>,
    pub classifier: Arc<dyn Classifier>,
    pub config: EngineConfig,
    pub profiles: Vec<PatientProfile>,
}

impl CorpusRunner {
    /// Case `i` uses profile `i mod len` and a scenario seed derived from `seed`.
    pub fn run(&self, cases: usize, seed: u64, exec: Execution) -> Result<Vec<CaseOutcome>, EngineError> {
        let engine = Engine::new(
            self.taxonomy.clone(),
            self.gateway.clone(),
            self.classifier.clone(),
            self.config.clone(),
        )?;
        let generator = ScenarioGenerator::default();
        Ok(map_indexed(cases, exec, |i| {
            self.run_case(&engine, &generator, i, seed)
        }))
    }

    fn run_case(&self, engine: &Engine, generator: &ScenarioGenerator, i: usize, seed: u64) -> CaseOutcome {
        let id = case_id(i);
        let fail = |message: String| CaseFailure {
            case_id: id.clone(),
            message,
            transcript: None,
        };
        let profile = &self.profiles[i % self.profiles.len()];
        let scenario = generator
            .generate(&self.taxonomy, profile, case_seed(seed, i))
            .map_err(|e| fail(e.to_string()))?;
        let mut sink = NullSink;
        let mut session = engine
            .create_session_with_id(id.clone(), scenario, Mode::Auto, &mut sink)
            .map_err(|e| fail(e.to_string()))?;
        let transcript = engine
            .run_to_completion(&mut session, &mut sink)
            .map_err(|e| fail(e.to_string()))?;
        match transcript.header.status {
            SessionStatus::Closed => Ok(transcript),
            s => Err(fail(format!(
                "session ended {s:?}: {}",
                transcript.header.abort_reason.as_deref().unwrap_or("unknown")
            ))
            .with_transcript(transcript)),
        }
    }
}

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use dispatch_sim::grounding::{Classifier, KeywordClassifier, OracleClassifier};
use dispatch_sim::orchestrator::{Engine, EngineConfig};
use dispatch_sim::taxonomy::Taxonomy;
use dispatch_sim::template::TemplateBackend;

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares against a frozen file; `UPDATE_GOLDEN=1` rewrites it.
pub fn golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {name}; run with UPDATE_GOLDEN=1"));
    assert_eq!(actual, expected, "golden {name} differs");
}

pub fn taxonomy() -> Arc<Taxonomy> {
    Arc::new(Taxonomy::bundled())
}

pub fn template_engine(oracle: bool) -> Engine {
    let classifier: Arc<dyn Classifier> = if oracle {
        Arc::new(OracleClassifier)
    } else {
        Arc::new(KeywordClassifier)
    };
    Engine::new(
        taxonomy(),
        Arc::new(TemplateBackend),
        classifier,
        EngineConfig::default(),
    )
    .unwrap()
}

/// The bundled profiles run once each through the template engine.
pub fn template_corpus(seed: u64) -> Vec<dispatch_sim::transcript::Transcript> {
    use dispatch_sim::corpus::CorpusRunner;
    let runner = CorpusRunner {
        taxonomy: taxonomy(),
        gateway: Arc::new(TemplateBackend),
        classifier: Arc::new(KeywordClassifier),
        config: EngineConfig::default(),
        profiles: dispatch_sim::scenario::bundled_profiles(),
    };
    runner
        .run(100, seed, dispatch_sim::par::Execution::Parallel)
        .unwrap()
        .into_iter()
        .map(|r| r.unwrap())
        .collect()
}

/// A single closed template transcript.
pub fn template_corpus_one() -> dispatch_sim::transcript::Transcript {
    use dispatch_sim::events::NullSink;
    use dispatch_sim::transcript::Mode;
    let engine = template_engine(false);
    let t = Taxonomy::bundled();
    let scenario =
        dispatch_sim::scenario::generate_scenario(&t, &dispatch_sim::scenario::bundled_profiles()[0], 1).unwrap();
    let mut s = engine
        .create_session_with_id("T1", scenario, Mode::Auto, &mut NullSink)
        .unwrap();
    engine.run_to_completion(&mut s, &mut NullSink).unwrap()
}

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dispatch_sim::corpus::CorpusRunner;
use dispatch_sim::grounding::KeywordClassifier;
use dispatch_sim::orchestrator::EngineConfig;
use dispatch_sim::par::Execution;
use dispatch_sim::scenario::bundled_profiles;
use dispatch_sim::stats::{chi_squared_with, PermutationConfig};
use dispatch_sim::taxonomy::Taxonomy;
use dispatch_sim::template::TemplateBackend;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus(c: &mut Criterion) {
    let runner = CorpusRunner {
        taxonomy: Arc::new(Taxonomy::bundled()),
        gateway: Arc::new(TemplateBackend),
        classifier: Arc::new(KeywordClassifier),
        config: EngineConfig::default(),
        profiles: bundled_profiles(),
    };
    let mut g = c.benchmark_group("template_corpus_64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| runner.run(64, 7, *exec).unwrap())
        });
    }
    g.finish();
}

fn permutation(c: &mut Criterion) {
    let table = vec![vec![18, 2], vec![17, 3], vec![19, 1], vec![16, 4]];
    let mut g = c.benchmark_group("chi_squared_permutation_20k");
    g.sample_size(10);
    for (name, exec) in MODES {
        let config = PermutationConfig {
            draws: 20_000,
            exec,
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, config| {
            b.iter(|| chi_squared_with(&table, config).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, corpus, permutation);
criterion_main!(benches);

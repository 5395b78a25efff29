use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use dispatch_sim::corpus::CorpusRunner;
use dispatch_sim::evalkit::LexiconClassifier;
use dispatch_sim::grounding::{Classifier, KeywordClassifier, OracleClassifier};
use dispatch_sim::llm::{LlmGateway, Recorder, RemoteBackend, RemoteConfig, ScriptedBackend};
use dispatch_sim::opsmetrics::DetectorSet;
use dispatch_sim::orchestrator::EngineConfig;
use dispatch_sim::par::Execution;
use dispatch_sim::report::evaluate_corpus;
use dispatch_sim::scenario::bundled_profiles;
use dispatch_sim::stats::inference::{DEFAULT_PERMUTATION_DRAWS, DEFAULT_PERMUTATION_SEED};
use dispatch_sim::stats::{analyze_ratings, read_ratings_csv, PermutationConfig};
use dispatch_sim::taxonomy::Taxonomy;
use dispatch_sim::template::TemplateBackend;
use dispatch_sim::transcript::{read_corpus, write_corpus};
use dispatch_sim_service::config::Backend as ServiceBackend;
use dispatch_sim_service::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "dispatch-sim",
    version,
    about = "Simulate and evaluate emergency dispatch calls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of simulated calls and write the transcripts as JSONL.
    Simulate(SimulateArgs),
    /// Score a transcript corpus and write the evaluation report.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inter-rater statistics over a ratings CSV.
    Stats {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PERMUTATION_DRAWS)]
        draws: usize,
        #[arg(long, default_value_t = DEFAULT_PERMUTATION_SEED)]
        perm_seed: u64,
    },
    /// Start the HTTP service. Flags override DISPATCH_SIM_* variables.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<ServeBackend>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimBackend {
    Scripted,
    Template,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeBackend {
    Template,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierKind {
    Keyword,
    /// Injects the scenario ground truth.
    Oracle,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    cases: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "template")]
    backend: SimBackend,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to every core.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: Option<u64>,
    /// Fixture for the scripted backend.
    #[arg(long, required_if_eq("backend", "scripted"))]
    script: Option<PathBuf>,
    /// Also write every backend answer as a script fixture.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "keyword")]
    classifier: ClassifierKind,
    #[arg(long)]
    max_turns: Option<u64>,
}

enum Failure {
    /// Bad flags, config or input: exit 2.
    Usage(String),
    /// Output written but incomplete: exit 1.
    Partial(String),
    /// Nothing useful produced: exit 1.
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    let mut f = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let backend: Arc<dyn LlmGateway> = match args.backend {
        SimBackend::Template => Arc::new(TemplateBackend),
        SimBackend::Remote => Arc::new(RemoteBackend::new(RemoteConfig::from_env().map_err(usage)?)),
        SimBackend::Scripted => {
            let path = args.script.as_deref().expect("clap requires --script");
            Arc::new(ScriptedBackend::from_jsonl(open(path)?).map_err(usage)?)
        }
    };
    let recorder = args.record.as_ref().map(|_| Arc::new(Recorder::new(backend.clone())));
    let gateway: Arc<dyn LlmGateway> = match &recorder {
        Some(r) => r.clone(),
        None => backend,
    };
    let classifier: Arc<dyn Classifier> = match args.classifier {
        ClassifierKind::Keyword => Arc::new(KeywordClassifier),
        ClassifierKind::Oracle => Arc::new(OracleClassifier),
    };
    let mut config = EngineConfig::default();
    if let Some(m) = args.max_turns {
        config.max_turns = m;
    }
    let runner = CorpusRunner {
        taxonomy: Arc::new(Taxonomy::bundled()),
        gateway,
        classifier,
        config,
        profiles: bundled_profiles(),
    };
    let exec = Execution::from_threads(args.parallel.map(|p| p as usize));
    let outcomes = runner.run(args.cases as usize, args.seed, exec).map_err(usage)?;

    let mut transcripts = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => transcripts.push(t),
            Err(f) => {
                failures.push(format!("{}: {}", f.case_id, f.message));
                transcripts.extend(f.transcript.map(|t| *t));
            }
        }
    }
    write_file(&args.out, &write_corpus(&transcripts))?;
    if let (Some(path), Some(rec)) = (&args.record, &recorder) {
        let mut lines = rec.take();
        lines.sort_by(|a, b| (&a.session, a.turn, &a.agent).cmp(&(&b.session, b.turn, &b.agent)));
        let text: String = lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("script line serializes") + "\n")
            .collect();
        write_file(path, &text)?;
    }
    eprintln!(
        "{} of {} cases closed; {} transcripts written to {}",
        args.cases as usize - failures.len(),
        args.cases,
        transcripts.len(),
        args.out.display()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!("failed cases:\n  {}", failures.join("\n  "))))
    }
}

fn evaluate(input: &Path, out: &Path) -> Result<(), Failure> {
    let (transcripts, warnings) = read_corpus(open(input)?).map_err(usage)?;
    for w in &warnings {
        eprintln!("{}:{}: skipped: {}", input.display(), w.line, w.message);
    }
    let taxonomy = Taxonomy::bundled();
    let report = evaluate_corpus(
        &transcripts,
        warnings,
        &LexiconClassifier::bundled(),
        &DetectorSet::bundled(&taxonomy),
    )
    .map_err(usage)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(out, &text)?;
    eprintln!(
        "{} transcripts evaluated; report at {}",
        report.n_transcripts,
        out.display()
    );
    match report.warnings.len() {
        0 => Ok(()),
        n => Err(Failure::Partial(format!("{n} corpus lines skipped"))),
    }
}

fn stats(ratings: &Path, out: &Path, draws: usize, seed: u64) -> Result<(), Failure> {
    let records = read_ratings_csv(open(ratings)?).map_err(usage)?;
    let perm = PermutationConfig {
        draws,
        seed,
        ..Default::default()
    };
    let report = analyze_ratings(&records, &perm).map_err(usage)?;
    let text = serde_json::to_string_pretty(&report).expect("statistics serialize") + "\n";
    write_file(out, &text)?;
    eprintln!(
        "{} ratings from {} raters; {} multi-rated cases",
        report.n_records,
        report.raters.len(),
        report.multi_rated_cases.len()
    );
    Ok(())
}

fn serve(
    host: Option<String>,
    port: Option<u16>,
    data_dir: Option<PathBuf>,
    ui_dir: Option<PathBuf>,
    backend: Option<ServeBackend>,
) -> Result<(), Failure> {
    let mut cfg = ServiceConfig::from_env().map_err(usage)?;
    if let Some(h) = host {
        cfg.host = h;
    }
    if let Some(p) = port {
        cfg.port = p;
    }
    if let Some(d) = data_dir {
        cfg.data_dir = d;
    }
    if let Some(u) = ui_dir {
        cfg.ui_dir = u;
    }
    match backend {
        Some(ServeBackend::Template) => cfg.backend = ServiceBackend::Template,
        Some(ServeBackend::Remote) => cfg.backend = ServiceBackend::Remote,
        None => {}
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(dispatch_sim_service::serve(cfg)).map_err(|e| match e {
        dispatch_sim_service::ServiceError::Config(_) | dispatch_sim_service::ServiceError::Gateway(_) => usage(e),
        e => runtime(e),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Evaluate { input, out } => evaluate(&input, &out),
        Command::Stats {
            ratings,
            out,
            draws,
            perm_seed,
        } => stats(&ratings, &out, draws, perm_seed),
        Command::Serve {
            host,
            port,
            data_dir,
            ui_dir,
            backend,
        } => serve(host, port, data_dir, ui_dir, backend),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Partial(m)) | Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

mod common;

use std::collections::BTreeMap;

use dispatch_sim::evalkit::*;
use dispatch_sim::opsmetrics::*;
use dispatch_sim::report::{evaluate_corpus, ReportError, REPORT_SCHEMA};
use dispatch_sim::taxonomy::{CriticalEntity, Taxonomy, Urgency};
use dispatch_sim::transcript::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn syllable_counter_matches_hand_counts() {
    let list = include_str!("../data/syllable_words.tsv");
    let (mut hits, mut n) = (0, 0);
    let mut misses = Vec::new();
    for line in list.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (word, count) = line.split_once('\t').unwrap();
        let expected: usize = count.trim().parse().unwrap();
        n += 1;
        if count_syllables(word) == expected {
            hits += 1;
        } else {
            misses.push(word);
        }
    }
    assert!(n >= 200, "{n}");
    assert!(hits as f64 / n as f64 >= 0.95, "{hits}/{n} misses {misses:?}");
}

#[test]
fn flesch_reference_sentence() {
    let r = flesch_reading_ease("The cat sat on the mat.").unwrap();
    assert!((r.raw_score - 116.145).abs() < 1e-9);
    assert_eq!(r.clamped_score, 100.0);
    let hard =
        flesch_reading_ease("Institutionalization necessitates extraordinarily comprehensive documentation.").unwrap();
    assert_eq!(hard.clamped_score, 0.0);
    assert!(hard.raw_score < 0.0);
}

fn share(d: &BTreeMap<String, f64>, labels: &[&str]) -> f64 {
    labels.iter().map(|l| d[*l]).sum()
}

#[test]
fn affect_profiles_separate_roles() {
    let corpus = common::template_corpus(7);
    let (caller, dispatcher) = profile_corpus(&corpus, &LexiconClassifier::bundled()).unwrap();
    assert!(dispatcher.sentiment_dist["neutral"] > caller.sentiment_dist["neutral"]);
    assert!(share(&caller.emotion_dist, &["fear", "sadness"]) > share(&dispatcher.emotion_dist, &["fear", "sadness"]));
    assert_eq!(dispatcher.politeness_dist["impolite"], 0.0);
    assert!(dispatcher.mean_flesch > 50.0);
    assert_eq!(caller.sentiment_dist.len(), 3);
    assert_eq!(caller.emotion_dist.len(), 7);
    assert_eq!(caller.politeness_dist.len(), 4);
}

const VOCAB: [&str; 24] = [
    "please",
    "help",
    "scared",
    "thank",
    "you",
    "he",
    "is",
    "not",
    "breathing",
    "hurry",
    "great",
    "awful",
    "stupid",
    "sorry",
    "the",
    "crying",
    "okay",
    "angry",
    "wow",
    "gross",
    "happy",
    "sad",
    "calm",
    "now",
];

fn utterance(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..9);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn synthetic(base: &Transcript, rng: &mut ChaCha8Rng, id: usize) -> Transcript {
    let mut t = base.clone();
    t.header.session_id = format!("fz-{id}");
    let turns = rng.gen_range(2..8);
    let mut clock = 0.0;
    t.turns = (0..turns)
        .map(|i| {
            let mut r = base.turns[i % 2].clone();
            r.index = i as u64;
            r.utterance = utterance(rng);
            clock += 1.0;
            r.sim_time_s = clock;
            r
        })
        .collect();
    t
}

#[test]
fn distributions_sum_to_one_under_fuzz() {
    let classifier = LexiconClassifier::bundled();
    let base = common::template_corpus_one();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    for id in 0..10_000 {
        let t = synthetic(&base, &mut rng, id);
        let (c, d) = profile_transcript(&t, &classifier).unwrap();
        for p in [c, d] {
            for dist in [&p.sentiment_dist, &p.emotion_dist, &p.politeness_dist] {
                let total: f64 = dist.values().sum();
                assert!((total - 1.0).abs() < 1e-9, "{id}: {dist:?}");
                assert!(dist.values().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn missing_role_is_an_error() {
    let mut t = common::template_corpus_one();
    t.turns.retain(|r| r.speaker == Speaker::Caller);
    assert!(matches!(
        profile_transcript(&t, &LexiconClassifier::bundled()),
        Err(EvalError::RoleAbsent("dispatcher"))
    ));
}

#[test]
fn operational_strata_follow_urgency() {
    let taxonomy = Taxonomy::bundled();
    let corpus = common::template_corpus(7);
    let strata = stratify_by_urgency(&corpus, &DetectorSet::bundled(&taxonomy));
    assert_eq!(strata.len(), 3);
    let by: BTreeMap<Urgency, &StratumSummary> = strata.iter().map(|s| (s.urgency, s)).collect();
    let rt = |u| by[&u].mean_response_time_s;
    assert!(rt(Urgency::LifeCritical) < rt(Urgency::TraumaticIncident));
    assert!(rt(Urgency::TraumaticIncident) < rt(Urgency::IndividualComplaint));
    let md = |u| by[&u].median_duration_s;
    assert!(md(Urgency::LifeCritical) < md(Urgency::TraumaticIncident));
    assert!(md(Urgency::LifeCritical) < md(Urgency::IndividualComplaint));
    for s in &strata {
        assert!(s.mean_trace.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 >= w[0].1));
        assert!(s.mean_trace.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
    }
    assert_eq!(strata.iter().map(|s| s.n_transcripts).sum::<usize>(), 100);
}

#[test]
fn per_transcript_traces_are_monotone() {
    let taxonomy = Taxonomy::bundled();
    let detectors = DetectorSet::bundled(&taxonomy);
    for t in common::template_corpus(3) {
        let e = efficiency_score(&t, &detectors);
        assert!(e
            .completeness_trace
            .windows(2)
            .all(|w| w[1].0 > w[0].0 && w[1].1 >= w[0].1));
        let scores: Vec<u8> = WINDOW_LABELS.iter().map(|l| e.phase_scores[*l]).collect();
        assert!(scores.windows(2).all(|w| w[1] >= w[0]));
        assert!(scores.iter().all(|s| (1..=5).contains(s)));
        assert!(
            e.elicited.contains(&CriticalEntity::Location),
            "{}",
            t.header.session_id
        );
    }
}

#[test]
fn window_score_examples() {
    assert_eq!(window_score(0.0), 1);
    assert_eq!(window_score(0.5), 3);
    assert_eq!(window_score(0.375), 3);
    assert_eq!(window_score(1.0), 5);
}

#[test]
fn entity_detection_marks_prompting() {
    let taxonomy = Taxonomy::bundled();
    let detectors = DetectorSet::bundled(&taxonomy);
    let mut t = common::template_corpus_one();
    let turn = |i: u64, speaker, text: &str| {
        let mut r = t.turns[(i % 2) as usize].clone();
        r.index = i;
        r.speaker = speaker;
        r.utterance = text.into();
        r.sim_time_s = (i + 1) as f64;
        r
    };
    let turns = vec![
        turn(0, Speaker::Caller, "My dad is not breathing, we are at 12 Oak Street."),
        turn(1, Speaker::Dispatcher, "What is the phone number you are calling from?"),
        turn(2, Speaker::Caller, "It is 555-123-4567."),
    ];
    t.turns = turns;
    let found = detect_entities(&t, &detectors);
    assert!(!found[&CriticalEntity::Location].prompted);
    assert!(!found[&CriticalEntity::Breathing].prompted);
    assert!(found[&CriticalEntity::CallbackNumber].prompted);
    assert_eq!(found[&CriticalEntity::CallbackNumber].turn_index, 2);
    assert!(!found.contains_key(&CriticalEntity::PatientAge));
}

#[test]
fn empty_corpus_is_rejected() {
    let taxonomy = Taxonomy::bundled();
    let err = evaluate_corpus(
        &[],
        Vec::new(),
        &LexiconClassifier::bundled(),
        &DetectorSet::bundled(&taxonomy),
    )
    .unwrap_err();
    assert!(matches!(err, ReportError::EmptyCorpus));
}

#[test]
fn corrupt_line_becomes_warning() {
    let taxonomy = Taxonomy::bundled();
    let corpus = common::template_corpus(7);
    let mut text = write_corpus(&corpus[..5]);
    text.insert_str(0, "{not json\n");
    let (read, warnings) = read_corpus(text.as_bytes()).unwrap();
    assert_eq!(read.len(), 5);
    assert_eq!(warnings.len(), 1);
    assert_eq!(warnings[0].line, 1);
    let report = evaluate_corpus(
        &read,
        warnings,
        &LexiconClassifier::bundled(),
        &DetectorSet::bundled(&taxonomy),
    )
    .unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(report.n_transcripts, 5);
}

#[test]
fn report_golden() {
    let taxonomy = Taxonomy::bundled();
    let corpus = common::template_corpus(7);
    let report = evaluate_corpus(
        &corpus,
        Vec::new(),
        &LexiconClassifier::bundled(),
        &DetectorSet::bundled(&taxonomy),
    )
    .unwrap();
    assert_eq!(report.report_schema, REPORT_SCHEMA);
    assert_eq!(report.backend_ids, vec!["template".to_string()]);
    assert_eq!(report.corpus_means.closed_share, 1.0);
    let json = serde_json::to_string_pretty(&report).unwrap() + "\n";
    common::golden("report_seed7.json", &json);
}

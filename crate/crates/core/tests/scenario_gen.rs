mod common;

use std::collections::BTreeMap;

use dispatch_sim::scenario::*;
use dispatch_sim::taxonomy::{CallerIdentity, Taxonomy};
use dispatch_sim::template::TemplateBackend;

fn unconscious(taxonomy: &Taxonomy) -> Vec<PatientProfile> {
    let p = bundled_profiles()
        .into_iter()
        .filter(|p| !p.conscious)
        .collect::<Vec<_>>();
    assert!(!p.is_empty());
    for x in &p {
        x.check(taxonomy).unwrap();
    }
    p
}

#[test]
fn unconscious_profiles_never_yield_patient_caller() {
    let t = Taxonomy::bundled();
    let profiles = unconscious(&t);
    let generator = ScenarioGenerator::default();
    let patient = (0..10_000u64)
        .filter(|&seed| {
            let p = &profiles[seed as usize % profiles.len()];
            generator.generate(&t, p, seed).unwrap().caller_identity == CallerIdentity::Patient
        })
        .count();
    assert_eq!(patient, 0);
}

#[test]
fn identity_frequencies_are_near_uniform() {
    let t = Taxonomy::bundled();
    let profile = bundled_profiles()
        .into_iter()
        .find(|p| p.conscious && p.can_speak)
        .unwrap();
    assert_eq!(eligible_identities(&profile).len(), 6);
    let generator = ScenarioGenerator::default();
    let mut counts: BTreeMap<CallerIdentity, usize> = BTreeMap::new();
    let n = 10_000;
    for seed in 0..n as u64 {
        *counts
            .entry(generator.generate(&t, &profile, seed).unwrap().caller_identity)
            .or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let mut chi2 = 0.0;
    let expected = n as f64 / 6.0;
    for (id, c) in &counts {
        let share = *c as f64 / n as f64;
        assert!((share - 1.0 / 6.0).abs() <= 0.03, "{id:?} share {share}");
        chi2 += (*c as f64 - expected).powi(2) / expected;
    }
    // Goodness of fit against uniform at df = 5, alpha = 0.001.
    assert!(chi2 < 20.515, "chi2 {chi2}");
}

#[test]
fn scenarios_satisfy_invariants() {
    let t = Taxonomy::bundled();
    let generator = ScenarioGenerator::default();
    for (i, p) in bundled_profiles().iter().enumerate() {
        for seed in 0..20u64 {
            let s = generator.generate(&t, p, seed * 1000 + i as u64).unwrap();
            s.check(&t).unwrap();
            assert_eq!(
                s.language_mismatch,
                s.caller_identity == CallerIdentity::LimitedProficiency
            );
            assert_eq!(
                s.critical_entities_required,
                t.lookup(&p.ground_truth_cc).unwrap().critical_entities
            );
            if s.caller_identity == CallerIdentity::Patient {
                assert!(p.conscious && p.can_speak);
            }
        }
    }
}

#[test]
fn generation_is_byte_identical() {
    let t = Taxonomy::bundled();
    let p = &bundled_profiles()[7];
    let a = serde_json::to_string(&generate_scenario(&t, p, 99).unwrap()).unwrap();
    let b = serde_json::to_string(&generate_scenario(&t, p, 99).unwrap()).unwrap();
    assert_eq!(a, b);
}

const FORBIDDEN_FIELDS: [&str; 8] = [
    "ground_truth_cc",
    "salient_findings",
    "caller_identity",
    "critical_entities",
    "keyword_triggers",
    "language_mismatch",
    "lack_of_information",
    "rng_seed",
];

#[test]
fn narratives_leak_no_structured_tokens() {
    let t = Taxonomy::bundled();
    let ids: Vec<&str> = t.ids().collect();
    let catalogs = Catalogs::bundled();
    for (i, p) in bundled_profiles().iter().enumerate() {
        let s = generate_scenario(&t, p, i as u64).unwrap();
        let text = render_background(&s, &TemplateBackend).unwrap();
        for id in &ids {
            assert!(!text.contains(id), "case {i} leaks {id}: {text}");
        }
        for f in FORBIDDEN_FIELDS {
            assert!(!text.contains(f), "case {i} leaks {f}");
        }
        assert!(text.contains(s.time_of_day.as_str()));
        assert!(text.contains(catalogs.setting_label(s.setting)));
        assert!(text.contains(&s.relationship));
        assert!(s
            .profile
            .salient_findings
            .iter()
            .any(|f| text.contains(f.as_str()) || text.contains(&conjugate(f, Person::ThirdPlural))));
        assert_eq!(text.contains(LIMITED_PROFICIENCY_MARKER), s.language_mismatch);
    }
}

#[test]
fn narrative_golden() {
    let t = Taxonomy::bundled();
    let s = generate_scenario(&t, &bundled_profiles()[0], 1).unwrap();
    let text = render_background(&s, &TemplateBackend).unwrap();
    common::golden("narrative_case1.txt", &text);
}

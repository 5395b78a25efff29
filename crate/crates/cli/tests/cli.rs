use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dispatch-sim");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("DISPATCH_SIM_LLM_URL")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ratings(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data/ratings")
        .join(name)
        .display()
        .to_string()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--cases", "0", "--out", "a.jsonl"]);
    assert_eq!(code(&o), 2);
    let o = run(
        dir.path(),
        &["simulate", "--cases", "2", "--backend", "remote", "--out", "a.jsonl"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("DISPATCH_SIM_LLM_URL"), "{}", stderr(&o));
    let o = run(
        dir.path(),
        &["simulate", "--cases", "2", "--backend", "scripted", "--out", "a.jsonl"],
    );
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("a.jsonl").exists());
}

#[test]
fn simulate_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(
        d,
        &[
            "simulate", "--cases", "24", "--seed", "3", "--out", "a.jsonl", "--record", "s.jsonl",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(
        d,
        &[
            "simulate",
            "--cases",
            "24",
            "--seed",
            "3",
            "--out",
            "b.jsonl",
            "--parallel",
            "1",
        ],
    );
    assert_eq!(code(&o), 0);
    let a = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.jsonl")).unwrap());
    assert_eq!(a.lines().count(), 24);

    let o = run(
        d,
        &[
            "simulate",
            "--cases",
            "24",
            "--seed",
            "3",
            "--backend",
            "scripted",
            "--script",
            "s.jsonl",
            "--out",
            "c.jsonl",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = std::fs::read_to_string(d.join("c.jsonl")).unwrap();
    assert_eq!(
        c.replace("\"backend_id\":\"scripted\"", "\"backend_id\":\"template\""),
        a
    );

    let o = run(d, &["simulate", "--cases", "24", "--seed", "4", "--out", "e.jsonl"]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read_to_string(d.join("e.jsonl")).unwrap(), a);
}

#[test]
fn simulate_partial_lists_failed_cases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // An empty script cannot answer any request.
    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = run(
        d,
        &[
            "simulate",
            "--cases",
            "3",
            "--backend",
            "scripted",
            "--script",
            "empty.jsonl",
            "--out",
            "x.jsonl",
        ],
    );
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for id in ["case-0001", "case-0002", "case-0003"] {
        assert!(err.contains(id), "{err}");
    }

    let o = run(d, &["simulate", "--cases", "2", "--max-turns", "4", "--out", "y.jsonl"]);
    assert_eq!(code(&o), 1);
    assert_eq!(std::fs::read_to_string(d.join("y.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn evaluate_reports_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["simulate", "--cases", "10", "--out", "a.jsonl"])), 0);
    let o = run(d, &["evaluate", "--in", "a.jsonl", "--out", "r.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(d.join("r.json"));
    assert_eq!(r["report_schema"], 1);
    assert_eq!(r["n_transcripts"], 10);
    assert!(r["strata"].as_array().is_some());
    assert_eq!(r["caller"]["role"], "caller");
    assert_eq!(r["dispatcher"]["role"], "dispatcher");

    let corpus = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    let mut lines: Vec<&str> = corpus.lines().collect();
    lines.insert(4, "{\"header\": 17");
    std::fs::write(d.join("bad.jsonl"), lines.join("\n")).unwrap();
    let o = run(d, &["evaluate", "--in", "bad.jsonl", "--out", "w.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.jsonl:5"), "{}", stderr(&o));
    let w = json(d.join("w.json"));
    assert_eq!(w["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(w["warnings"][0]["line"], 5);
    assert_eq!(w["n_transcripts"], 10);
    assert_eq!(w["caller"], r["caller"]);

    std::fs::write(d.join("empty.jsonl"), "\n").unwrap();
    let o = run(d, &["evaluate", "--in", "empty.jsonl", "--out", "e.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty corpus"));
    assert_eq!(code(&run(d, &["evaluate", "--in", "nope.jsonl", "--out", "e.json"])), 2);
}

#[test]
fn stats_on_bundled_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fixture = ratings("fixture_ratings.csv");
    let o = run(
        d,
        &["stats", "--ratings", &fixture, "--out", "s.json", "--draws", "2000"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(d.join("s.json"));
    let pct = |m: &str| {
        s["descriptive"]["binary"]
            .as_array()
            .unwrap()
            .iter()
            .find(|b| b["metric"] == m)
            .unwrap()["pct_yes"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(pct("contacted_correct"), 94.0);
    assert_eq!(pct("told_callback"), 97.0);
    assert_eq!(pct("advice_given"), 91.0);
    assert_eq!(s["between_rater"].as_array().unwrap().len(), 7);

    let o = run(
        d,
        &[
            "stats",
            "--ratings",
            &ratings("perfect_agreement.csv"),
            "--out",
            "p.json",
            "--draws",
            "500",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = json(d.join("p.json"));
    let agreement = p["agreement"].as_object().unwrap();
    assert_eq!(agreement.len(), 7);
    for (m, a) in agreement {
        assert_eq!(a["ac1"].as_f64().unwrap(), 1.0, "{m}");
    }

    let text = std::fs::read_to_string(&fixture).unwrap();
    let single: String = text
        .lines()
        .filter(|l| !l.contains(",physician-") || l.contains(",physician-1,"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(d.join("single.csv"), single).unwrap();
    let o = run(d, &["stats", "--ratings", "single.csv", "--out", "x.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("need ≥2 raters"), "{}", stderr(&o));

    std::fs::write(d.join("hdr.csv"), "case,rater\n").unwrap();
    let o = run(d, &["stats", "--ratings", "hdr.csv", "--out", "x.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("header"), "{}", stderr(&o));
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["serve", "--backend", "remote", "--data-dir", "data"])
        .current_dir(dir.path())
        .env_remove("DISPATCH_SIM_LLM_URL")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("DISPATCH_SIM_LLM_URL"));
    let o = Command::new(BIN)
        .args(["serve"])
        .current_dir(dir.path())
        .env("DISPATCH_SIM_PORT", "http")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("DISPATCH_SIM_PORT"));
}

fn keys(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

fn strings(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect();
    k.sort();
    k
}

#[test]
fn schemas_track_serialized_fields() {
    let docs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let report_schema = json(docs.join("report.schema.json"));
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["simulate", "--cases", "6", "--out", "a.jsonl"])), 0);
    assert_eq!(code(&run(d, &["evaluate", "--in", "a.jsonl", "--out", "r.json"])), 0);
    let report = json(d.join("r.json"));
    assert_eq!(keys(&report), strings(&report_schema["required"]));
    assert_eq!(keys(&report_schema["properties"]), keys(&report));
    assert_eq!(
        keys(&report["caller"]),
        strings(&report_schema["$defs"]["profile"]["required"])
    );
    assert_eq!(
        keys(&report["strata"][0]),
        strings(&report_schema["$defs"]["stratum"]["required"])
    );
    assert_eq!(
        keys(&report["corpus_means"]),
        strings(&report_schema["properties"]["corpus_means"]["required"])
    );

    let tax_schema = json(docs.join("taxonomy.schema.json"));
    let tax: Value = serde_json::from_str(&dispatch_sim::taxonomy::Taxonomy::bundled().to_json_pretty()).unwrap();
    assert_eq!(keys(&tax), strings(&tax_schema["required"]));
    let entry = &tax_schema["$defs"]["entry"];
    let mut all = strings(&entry["required"]);
    all.push("special_considerations".into());
    all.sort();
    assert_eq!(keys(&entry["properties"]), all);
    for e in tax["entries"].as_array().unwrap() {
        for k in keys(e) {
            assert!(all.contains(&k), "{k}");
        }
    }
}

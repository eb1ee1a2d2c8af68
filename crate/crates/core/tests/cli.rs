mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{bin, expected_dir, fixture_dir, run_golden_chain, GOLDEN_OUTPUTS};
use serde_json::Value;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .env_remove("DETOXKIT_SCORER")
        .env_remove("DETOXKIT_CONFIG")
        .output()
        .unwrap()
}

fn lexdir() -> String {
    fixture_dir().join("lexicons").display().to_string()
}

fn pairs() -> String {
    fixture_dir().join("pairs.jsonl").display().to_string()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("export-train"));
    let out = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run_in(dir.path(), &["clean"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["clean", "--input", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}

#[test]
fn validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.jsonl"), "{\"lang\": \"xx\", \"toxic\": \"a\"}\n").unwrap();
    let out = run_in(dir.path(), &["stats", "--input", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:1"));

    let p = pairs();
    let out = run_in(dir.path(), &["clean", "--input", &p, "--output", "o.jsonl", "--jaccard-max", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), &["infer", "--input", &p, "--output", "o.jsonl", "--generator", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn golden_chain_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_golden_chain(a.path(), "1");
    let second = run_golden_chain(b.path(), "4");
    assert_eq!(first, second, "sequential and parallel runs differ");

    let expected = expected_dir();
    if std::env::var_os("DETOXKIT_BLESS").is_some() {
        fs::create_dir_all(&expected).unwrap();
        for (name, bytes) in &first {
            fs::write(expected.join(name), bytes).unwrap();
        }
    }
    for (name, bytes) in &first {
        let want = fs::read(expected.join(name)).unwrap_or_else(|e| panic!("{name}: {e}; run with DETOXKIT_BLESS=1"));
        assert!(want == *bytes, "{name} differs from the frozen golden file");
    }
    assert_eq!(GOLDEN_OUTPUTS.len(), first.len());
}

#[test]
fn commands_write_only_named_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (p, lex) = (pairs(), lexdir());
    let out = run_in(dir.path(), &["spans", "--input", &p, "--output", "spans.jsonl", "--lexicon-dir", &lex]);
    assert!(out.status.success());
    let out = run_in(dir.path(), &["stats", "--input", &p, "--out", "stats.json"]);
    assert!(out.status.success());
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["spans.jsonl", "stats.json"]);
}

#[test]
fn spans_and_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let (p, lex) = (pairs(), lexdir());
    assert!(run_in(dir.path(), &["spans", "--input", &p, "--output", "s.jsonl", "--lexicon-dir", &lex]).status.success());
    let first: Value = serde_json::from_str(fs::read_to_string(dir.path().join("s.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let terms: Vec<&str> = first["toxic_spans"].as_array().unwrap().iter().map(|s| s["term"].as_str().unwrap()).collect();
    assert_eq!(terms, ["stupid", "idiot"]);

    assert!(run_in(dir.path(), &["baseline", "--method", "delete", "--input", &p, "--output", "d.jsonl", "--lexicon-dir", &lex])
        .status
        .success());
    let first: Value = serde_json::from_str(fs::read_to_string(dir.path().join("d.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["neutral"], "you are a and nobody likes you");

    assert!(run_in(dir.path(), &["baseline", "--method", "duplicate", "--input", &p, "--output", "u.jsonl"]).status.success());
    for line in fs::read_to_string(dir.path().join("u.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["toxic"], v["neutral"]);
    }
}

#[test]
fn stats_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["stats", "--input", &pairs()]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stderr);
    assert!(table.contains("Hinglish (hin)"));
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["total"], 10);
    assert_eq!(json["per_lang"]["en"], 4);
    assert_eq!(json["per_lang"]["tt"], 0);
}

#[test]
fn tsv_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.tsv"), "toxic\tneutral\ndu idiot\tdu\nnur toxisch\t\n").unwrap();
    let out = run_in(dir.path(), &["stats", "--input", "p.tsv", "--format", "tsv", "--lang", "de", "--header"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["per_lang"]["de"], 2);
    assert_eq!(run_in(dir.path(), &["stats", "--input", "p.tsv", "--format", "tsv"]).status.code(), Some(1));
}

#[test]
fn anova_on_published_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = common::data_dir().join("submission_scores.tsv").display().to_string();
    let out = run_in(dir.path(), &["anova", "--scores", &scores, "--out", "a.json"]);
    assert!(out.status.success());
    let json: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    let df = |k: &str| (json[k]["df_between"].as_u64().unwrap(), json[k]["df_within"].as_u64().unwrap());
    assert_eq!(df("genetic"), (2, 12));
    assert_eq!(df("typology"), (5, 9));
    assert_eq!(df("geography"), (4, 9));
    assert_eq!(df("resource"), (2, 12));

    let out = run_in(dir.path(), &["anova", "--scores", &scores, "--scheme", "resource"]);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json.as_object().unwrap().keys().collect::<Vec<_>>(), ["resource"]);

    fs::write(dir.path().join("few.tsv"), "en\t0.5\nes\t0.6\n").unwrap();
    let out = run_in(dir.path(), &["anova", "--scores", "few.tsv", "--scheme", "genetic"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn prompt_and_export_train() {
    let dir = tempfile::tempdir().unwrap();
    let (p, lex) = (pairs(), lexdir());
    assert!(run_in(dir.path(), &["prompt", "--input", &p, "--output", "pr.jsonl", "--lexicon-dir", &lex]).status.success());
    let text = fs::read_to_string(dir.path().join("pr.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let turns = v["turns"].as_array().unwrap();
        assert_eq!(turns.len(), 2);
        assert!(turns.iter().all(|t| t["loss_masked"] == true));
    }

    assert!(run_in(dir.path(), &["export-train", "--input", &p, "--output", "tr.jsonl"]).status.success());
    let text = fs::read_to_string(dir.path().join("tr.jsonl")).unwrap();
    // The two near-copies and the case-folded duplicate are skipped.
    assert_eq!(text.lines().count(), 8);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let masks: Vec<bool> = v["turns"].as_array().unwrap().iter().map(|t| t["loss_masked"].as_bool().unwrap()).collect();
        assert_eq!(masks, [true, true, false]);
    }
}

#[test]
fn custom_templates_override_builtin() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("tpl")).unwrap();
    fs::write(dir.path().join("tpl/en.txt"), "CUSTOM ENGLISH PROMPT").unwrap();
    let out = run_in(dir.path(), &["prompt", "--input", &pairs(), "--output", "pr.jsonl", "--templates", "tpl"]);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("pr.jsonl")).unwrap();
    let en: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(en["turns"][0]["content"].as_str().unwrap().starts_with("CUSTOM ENGLISH PROMPT"));
}

#[test]
fn configuration_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "scorer = \"http://127.0.0.1:9\"\ntimeout_secs = 1\n").unwrap();
    let p = pairs();
    let args = ["enrich", "--input", p.as_str(), "--output", "e.jsonl", "--config", "cfg.toml"];

    // Config file alone: unreachable scorer.
    let out = run_in(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("127.0.0.1:9"));

    // Environment beats the config file.
    let out = Command::new(bin())
        .current_dir(dir.path())
        .args(args)
        .env("DETOXKIT_SCORER", "fallback")
        .output()
        .unwrap();
    assert!(out.status.success());

    // A flag beats the environment.
    let out = Command::new(bin())
        .current_dir(dir.path())
        .args(args)
        .args(["--scorer", "fallback"])
        .env("DETOXKIT_SCORER", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert!(out.status.success());

    fs::write(dir.path().join("bad.toml"), "colour = red\n").unwrap();
    let out = run_in(dir.path(), &["stats", "--input", &p, "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infer_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let (p, lex) = (pairs(), lexdir());
    let out = run_in(
        dir.path(),
        &["infer", "--input", &p, "--generator", "echo", "--output", "g.jsonl", "--records", "r.jsonl", "--n", "2", "--lexicon-dir", &lex],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (gen, rec) in fs::read_to_string(dir.path().join("g.jsonl"))
        .unwrap()
        .lines()
        .zip(fs::read_to_string(dir.path().join("r.jsonl")).unwrap().lines())
    {
        let gen: Value = serde_json::from_str(gen).unwrap();
        let rec: Value = serde_json::from_str(rec).unwrap();
        assert_eq!(gen["neutral"], gen["toxic"]);
        assert_eq!(rec["candidates"].as_array().unwrap().len(), 2);
        assert_eq!(rec["chosen"], 0);
    }
}

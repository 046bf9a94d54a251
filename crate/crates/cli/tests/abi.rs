use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use specqa::chunking::{fixed_chunk_corpus, semantic_chunk_corpus};
use specqa::embedding::Embedder;
use specqa::synthetic::planted_qa;
use specqa::{Document, EmbedderSpec, McqItem, SemanticChunkConfig};

fn specqa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specqa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TELEORACLE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn err(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure, got:\n{}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_corpus(path: &Path, docs: &[Document]) {
    let body: String = docs.iter().map(|d| serde_json::to_string(d).unwrap() + "\n").collect();
    fs::write(path, body).unwrap();
}

fn write_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "corpus": "corpus.jsonl",
        "workdir": "work",
        "chunking": {"fixed_chunk_tokens": 128, "fixed_overlap_tokens": 16}
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut cfg, extra) {
        base.extend(more);
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn write_questions(path: &Path, qs: &[McqItem]) {
    let items: Vec<Value> = qs
        .iter()
        .map(|q| json!({"id": q.id, "question": q.question, "options": q.options, "answer_index": q.answer_index}))
        .collect();
    fs::write(path, serde_json::to_string(&items).unwrap()).unwrap();
}

/// Planted corpus + questions + config, ingested and indexed.
fn indexed_workspace(seed: u64) -> (tempfile::TempDir, Vec<McqItem>) {
    let dir = tempfile::tempdir().unwrap();
    let set = planted_qa(seed, 20, 8);
    write_corpus(&dir.path().join("corpus.jsonl"), &set.documents);
    write_questions(&dir.path().join("questions.json"), &set.questions);
    write_config(dir.path(), json!({}));
    ok(&specqa(&["--config", "config.json", "ingest"], dir.path()));
    ok(&specqa(&["--config", "config.json", "index"], dir.path()));
    (dir, set.questions)
}

fn query_args<'a>(q: &'a McqItem, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["--config", "config.json", "--json", "query", q.question.as_str()];
    for o in &q.options {
        args.push("--option");
        args.push(o);
    }
    args.extend_from_slice(extra);
    args
}

#[test]
fn empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.jsonl"), "\n").unwrap();
    write_config(dir.path(), json!({}));
    let stderr = err(&specqa(&["--config", "config.json", "ingest"], dir.path()));
    assert!(stderr.contains("no documents"), "{stderr}");
}

#[test]
fn malformed_corpus_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("corpus.jsonl"),
        "{\"id\":\"a\",\"title\":\"t\",\"source\":\"s\",\"text\":\"x.\"}\n{\"id\":\"b\"}\n",
    )
    .unwrap();
    write_config(dir.path(), json!({}));
    let stderr = err(&specqa(&["--config", "config.json", "ingest"], dir.path()));
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn ingest_counts_match_chunkers_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let docs: Vec<Document> = planted_qa(3, 3, 3).documents;
    write_corpus(&dir.path().join("corpus.jsonl"), &docs);
    write_config(dir.path(), json!({}));

    let out: Value = serde_json::from_str(&ok(&specqa(&["--config", "config.json", "--json", "ingest"], dir.path()))).unwrap();
    let embedder = Embedder::new(EmbedderSpec::default()).unwrap();
    let semantic = semantic_chunk_corpus(&docs, &SemanticChunkConfig::default(), &embedder).unwrap();
    let fixed = fixed_chunk_corpus(&docs, 128, 16).unwrap();
    assert_eq!(out["documents"], 3);
    assert_eq!(out["strategies"][0]["strategy"], "semantic");
    assert_eq!(out["strategies"][0]["chunks"], semantic.len());
    assert_eq!(out["strategies"][1]["chunks"], fixed.len());
    let hist_total: u64 = out["strategies"][1]["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["count"].as_u64().unwrap())
        .sum();
    assert_eq!(hist_total as usize, fixed.len());

    let dumps = ["work/chunks/semantic.jsonl", "work/chunks/fixed.jsonl"];
    let before: Vec<Vec<u8>> = dumps.iter().map(|p| fs::read(dir.path().join(p)).unwrap()).collect();
    ok(&specqa(&["--config", "config.json", "ingest"], dir.path()));
    let after: Vec<Vec<u8>> = dumps.iter().map(|p| fs::read(dir.path().join(p)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn query_before_index_names_the_missing_step() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("corpus.jsonl"), &planted_qa(1, 2, 2).documents);
    write_config(dir.path(), json!({}));
    let stderr = err(&specqa(&["--config", "config.json", "query", "q?", "-o", "a", "-o", "b"], dir.path()));
    assert!(stderr.contains("specqa index"), "{stderr}");
    let stderr = err(&specqa(&["--config", "config.json", "index"], dir.path()));
    assert!(stderr.contains("specqa ingest"), "{stderr}");
}

#[test]
fn config_from_environment_and_flag_precedence() {
    let (dir, questions) = indexed_workspace(5);
    let q = &questions[0];
    let mut args = vec!["--json", "query", q.question.as_str()];
    for o in &q.options {
        args.extend(["-o", o.as_str()]);
    }
    let via_env = Command::new(env!("CARGO_BIN_EXE_specqa"))
        .args(&args)
        .current_dir(dir.path())
        .env("TELEORACLE_CONFIG", dir.path().join("config.json"))
        .output()
        .unwrap();
    let via_flag = specqa(&query_args(q, &[]), dir.path());
    assert_eq!(ok(&via_env), ok(&via_flag));

    fs::write(dir.path().join("bad.json"), r#"{"corpus": "corpus.jsonl", "typo": true}"#).unwrap();
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_specqa"))
        .args(["--config", "config.json", "ingest"])
        .current_dir(dir.path())
        .env("TELEORACLE_CONFIG", dir.path().join("bad.json"))
        .output()
        .unwrap();
    ok(&flag_wins);
    let stderr = err(&specqa(&["--config", "bad.json", "ingest"], dir.path()));
    assert!(stderr.contains("typo"), "{stderr}");
}

#[test]
fn query_reports_answer_and_stage_scores() {
    let (dir, questions) = indexed_workspace(5);
    let q = &questions[3];
    let out: Value = serde_json::from_str(&ok(&specqa(&query_args(q, &[]), dir.path()))).unwrap();
    assert_eq!(out["predicted"].as_u64().map(|p| p as usize), q.answer_index);
    assert_eq!(out["chosen_option"].as_str(), q.answer_text());
    assert_eq!(out["flags"], json!({"SE": true, "RR": true, "SC": true, "MC": true}));
    assert!(out["prompt_tokens"].as_u64().unwrap() <= out["prompt_budget"].as_u64().unwrap());
    let bundle = out["bundle"].as_array().unwrap();
    assert!(!bundle.is_empty());
    assert!(bundle.iter().any(|r| r["selected_by"] == "reranked" && r["rerank"].is_number()));
    for r in bundle {
        assert!(r["keyword"].as_f64().unwrap() >= 0.0);
        assert!(r["vector"].as_f64().unwrap().abs() <= 1.0 + 1e-9);
    }

    let mut args = query_args(q, &[]);
    args.retain(|a| *a != "--json");
    let text = ok(&specqa(&args, dir.path()));
    assert!(text.contains("answer:"), "{text}");
    assert!(text.contains("rerank"), "{text}");
}

#[test]
fn no_rerank_flag_matches_rr_off() {
    let (dir, questions) = indexed_workspace(8);
    let q = &questions[1];
    let out: Value = serde_json::from_str(&ok(&specqa(&query_args(q, &["--no-rerank"]), dir.path()))).unwrap();
    assert_eq!(out["flags"], json!({"SE": true, "RR": false, "SC": true, "MC": true}));
    assert!(out["bundle"].as_array().unwrap().iter().all(|r| r["rerank"].is_null()));

    fs::write(
        dir.path().join("rr-off.json"),
        serde_json::to_string(&json!({
            "corpus": "corpus.jsonl",
            "workdir": "work",
            "chunking": {"fixed_chunk_tokens": 128, "fixed_overlap_tokens": 16},
            "flags": {"SE": true, "RR": false, "SC": true, "MC": true}
        }))
        .unwrap(),
    )
    .unwrap();
    let mut args = query_args(q, &[]);
    args[1] = "rr-off.json";
    let from_config: Value = serde_json::from_str(&ok(&specqa(&args, dir.path()))).unwrap();
    assert_eq!(out, from_config);
}

#[test]
fn positions_matches_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let out: Value = serde_json::from_str(&ok(&specqa(&["--json", "positions", "6", "4", "2", "2"], dir.path()))).unwrap();
    assert_eq!(out["capacity"], 6);
    assert_eq!(out["max_entry"], 3);
    assert_eq!(out["ood"], json!([]));
    // rel = d for d <= 2, else q/2 - k/2 + 1
    for q in 0..6usize {
        for k in 0..=q {
            let d = q - k;
            let want = if d <= 2 { d } else { q / 2 - k / 2 + 1 };
            assert_eq!(out["matrix"][q][k], want, "({q},{k})");
        }
    }
    let out: Value = serde_json::from_str(&ok(&specqa(&["positions", "7", "4", "2", "2", "--json"], dir.path()))).unwrap();
    assert_eq!(out["ood"], json!([[6, 0], [6, 1]]));
    let text = ok(&specqa(&["positions", "7", "4", "2", "2"], dir.path()));
    assert!(text.contains("(6,0) (6,1)"), "{text}");
    err(&specqa(&["positions", "7", "4", "4", "2"], dir.path()));
}

#[test]
fn eval_writes_reports_and_table() {
    let (dir, _) = indexed_workspace(2);
    let out: Value = serde_json::from_str(&ok(&specqa(
        &["--config", "config.json", "--json", "eval", "questions.json"],
        dir.path(),
    )))
    .unwrap();
    let rows = out["comparison"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["accuracy"], 1.0);

    let report: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("work/reports/report-SE+RR+SC+MC.json")).unwrap(),
    )
    .unwrap();
    let mut keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["accuracy", "faithfulness", "flags", "n", "records", "unparsed"]);
    let mut rkeys: Vec<&str> = report["records"][0].as_object().unwrap().keys().map(String::as_str).collect();
    rkeys.sort_unstable();
    assert_eq!(rkeys, ["contexts", "gold", "predicted", "qid"]);
    assert!(dir.path().join("work/reports/comparison.txt").exists());
}

#[test]
fn eval_seed_flag_changes_random_stub_only() {
    let (dir, _) = indexed_workspace(4);
    write_config(dir.path(), json!({"generator": {"kind": "stub-random", "seed": 1}}));
    let run = |seed: &str, out: &str| -> Value {
        serde_json::from_str(&ok(&specqa(
            &["--config", "config.json", "--json", "--seed", seed, "eval", "questions.json", "--out", out],
            dir.path(),
        )))
        .unwrap()
    };
    let a = run("1", "a");
    let b = run("1", "b");
    assert_eq!(a["comparison"], b["comparison"]);
    let ra = fs::read(dir.path().join("a/report-SE+RR+SC+MC.json")).unwrap();
    let rb = fs::read(dir.path().join("b/report-SE+RR+SC+MC.json")).unwrap();
    assert_eq!(ra, rb);
    let predictions = |dir_name: &str| -> Vec<Value> {
        let r: Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(dir_name).join("report-SE+RR+SC+MC.json")).unwrap(),
        )
        .unwrap();
        r["records"].as_array().unwrap().iter().map(|x| x["predicted"].clone()).collect()
    };
    run("2", "c");
    assert_ne!(predictions("a"), predictions("c"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use factrie_core::fixtures;

const LABELS: &str = "Q1\tDanny Boyle\tDanny Boyle\tBritish director
Q2\tDanny\tDanny\tgiven name
Q3\tDaniel\tDaniel\tgiven name
Q4\tSlumdog Millionaire\tSlumdog Millionaire\t2008 film
Q5\tdrama film\tdrama film\tfilm genre
Q6\tTrainspotting\tTrainspotting\t1996 film
P569\t\tdate of birth\t
P735\t\tgiven name\t
P57\t\tdirector\t
P136\t\tgenre\t
";

const TRIPLES: &str = "Q1\tP569\tL:date::1956-10-20
Q1\tP735\tE:Q2
Q1\tP735\tE:Q3
Q4\tP57\tE:Q1
Q4\tP136\tE:Q5
Q6\tP57\tE:Q1
Q6\tP57\tE:Q99
not-an-id\tP57\tE:Q1
";

fn factrie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factrie"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = factrie(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the fixture inputs and the fixed vocabulary, then ingests.
fn boyle(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("labels.tsv"), LABELS).unwrap();
    std::fs::write(dir.join("triples.tsv"), TRIPLES).unwrap();
    let index = dir.join("boyle.idx");
    fixtures::boyle_tokenizer()
        .save(&dir.join("boyle.idx.vocab.json"))
        .unwrap();
    ok(&[
        "ingest",
        "--triples",
        s(&dir.join("triples.tsv")),
        "--labels",
        s(&dir.join("labels.tsv")),
        "--index",
        s(&index),
        "--cutoff-depth",
        "3",
        "--batch-size",
        "2",
    ]);
    index
}

#[derive(serde::Deserialize)]
struct Row {
    token: u32,
    piece: String,
    leaves: u64,
}

fn query_tokens(index: &Path, tokens: &[u32]) -> Vec<Row> {
    let list: Vec<String> = tokens.iter().map(u32::to_string).collect();
    let mut args = vec!["query", "--index", s(index), "--json"];
    let joined = list.join(",");
    if !tokens.is_empty() {
        args.extend(["--tokens", joined.as_str()]);
    }
    serde_json::from_str(&ok(&args)).unwrap()
}

#[test]
fn ingest_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("boyle.idx.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let out = ok(&["query", "--index", s(&index), "<Danny Boyle> <"]);
    assert!(out.contains("\"date\""), "{out}");
    assert!(out.contains("\"given\""), "{out}");
    assert!(!out.contains("born"), "{out}");
    let rows: Vec<Row> = serde_json::from_str(&ok(&["query", "--index", s(&index), "--json", "<Danny Boyle> <"])).unwrap();
    assert_eq!(rows[0].piece, "given");
    assert_eq!(rows[0].leaves, 2);
    assert_eq!(rows[1].piece, "date");

    let root = query_tokens(&index, &[]);
    assert_eq!(root.iter().map(|r| r.leaves).sum::<u64>(), 6);
    assert!(root.windows(2).all(|w| w[0].leaves >= w[1].leaves));
}

/// Following listed tokens from the root reaches every fact exactly once.
#[test]
fn query_closure_matches_facts() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let tok = fixtures::boyle_tokenizer();
    let mut expected: Vec<Vec<u32>> = fixtures::BOYLE_FACTS.iter().map(|f| tok.encode_fact(f)).collect();
    expected.sort();
    let mut found = Vec::new();
    let mut stack = vec![(Vec::new(), 6u64)];
    while let Some((prefix, leaves)) = stack.pop() {
        let rows = query_tokens(&index, &prefix);
        if rows.is_empty() {
            assert_eq!(leaves, 1);
            found.push(prefix);
            continue;
        }
        assert_eq!(rows.iter().map(|r| r.leaves).sum::<u64>(), leaves);
        for r in rows {
            let mut p = prefix.clone();
            p.push(r.token);
            stack.push((p, r.leaves));
        }
    }
    found.sort();
    assert_eq!(found, expected);
}

#[test]
fn builds_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let again = dir.path().join("again.idx");
    std::fs::copy(dir.path().join("boyle.idx.vocab.json"), dir.path().join("again.idx.vocab.json")).unwrap();
    ok(&[
        "ingest",
        "--triples",
        s(&dir.path().join("triples.tsv")),
        "--labels",
        s(&dir.path().join("labels.tsv")),
        "--index",
        s(&again),
        "--cutoff-depth",
        "3",
        "--batch-size",
        "2",
    ]);
    assert_eq!(std::fs::read(&index).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn empty_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("labels.tsv"), LABELS).unwrap();
    std::fs::write(dir.path().join("triples.tsv"), "").unwrap();
    let index = dir.path().join("empty.idx");
    let out = factrie(&[
        "ingest",
        "--triples",
        s(&dir.path().join("triples.tsv")),
        "--labels",
        s(&dir.path().join("labels.tsv")),
        "--index",
        s(&index),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no facts after filtering"));
    assert!(!index.exists());
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let out = factrie(&["query", "--index", s(&index), "<Danny Boyle> <born"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("longest valid prefix: \" <Danny Boyle> <\""), "{err}");

    let bytes = std::fs::read(&index).unwrap();
    let broken = dir.path().join("broken.idx");
    std::fs::write(&broken, &bytes[..bytes.len() - 5]).unwrap();
    std::fs::copy(dir.path().join("boyle.idx.vocab.json"), dir.path().join("broken.idx.vocab.json")).unwrap();
    assert_eq!(factrie(&["stats", "--index", s(&broken)]).status.code(), Some(3));

    assert_eq!(factrie(&["stats", "--index", s(&dir.path().join("missing.idx"))]).status.code(), Some(2));
}

#[test]
fn decode_slumdog() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let script = dir.path().join("script.json");
    std::fs::write(&script, serde_json::to_string(&fixtures::slumdog_script()).unwrap()).unwrap();
    let out_path = dir.path().join("transcript.json");
    let out = ok(&[
        "decode",
        "--index",
        s(&index),
        "--script",
        s(&script),
        "--question",
        fixtures::SLUMDOG_QUESTION,
        "--beams",
        "3",
        "--out",
        s(&out_path),
    ]);
    assert!(out.contains("answer: {\"answer\":\"1956-10-20\"}"), "{out}");
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(t["transcript"]["fact_events"].as_array().unwrap().len(), 2);
    let manifest = PathBuf::from(t["manifest"].as_str().unwrap());
    assert!(manifest.exists());
}

#[test]
fn eval_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let dataset = dir.path().join("questions.jsonl");
    std::fs::write(
        &dataset,
        format!(
            "{}\n{}\n",
            serde_json::json!({"id": "slumdog", "question": fixtures::SLUMDOG_QUESTION, "answer": "1956-10-20", "question_type": "multi-hop"}),
            serde_json::json!({"id": "refuse", "question": "Who?", "answer": "nobody"}),
        ),
    )
    .unwrap();
    let mut slumdog = fixtures::slumdog_script();
    slumdog.id = Some("slumdog".into());
    let mut refuse = factrie_core::qa::Script::from_pairs([("", vec!["I don't know."])]);
    refuse.id = Some("refuse".into());
    let scripts = dir.path().join("scripts.jsonl");
    std::fs::write(
        &scripts,
        format!("{}\n{}\n", serde_json::to_string(&slumdog).unwrap(), serde_json::to_string(&refuse).unwrap()),
    )
    .unwrap();
    let out_dir = dir.path().join("eval");
    ok(&[
        "eval",
        "--index",
        s(&index),
        "--dataset",
        s(&dataset),
        "--scripts",
        s(&scripts),
        "--jobs",
        "2",
        "--strict-enum-match",
        "--out-dir",
        s(&out_dir),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let overall = &report["result"]["overall"];
    assert_eq!(overall["accuracy"], 0.5);
    assert_eq!(overall["precision"], 1.0);
    assert_eq!(report["manifest"], "manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read_to_string(out_dir.join("transcripts.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn bench_stats_compact_golden() {
    let dir = tempfile::tempdir().unwrap();
    let index = boyle(dir.path());
    let out = ok(&["bench", "--index", s(&index), "--tokens", "0"]);
    assert!(out.contains("unconstrained 0.0 ms, constrained 0.0 ms"), "{out}");
    let out = ok(&["bench", "--index", s(&index), "--tokens", "60", "--delay-ms", "0", "--in-memory", "--every", "20"]);
    assert_eq!(out.lines().count(), 1 + 3 + 2);

    let stats = ok(&["stats", "--index", s(&index)]);
    assert!(stats.contains("facts              6"), "{stats}");
    assert!(stats.contains("batches            3"), "{stats}");

    let compacted = dir.path().join("one.idx");
    ok(&["compact", "--index", s(&index), "--out", s(&compacted)]);
    let stats: serde_json::Value = serde_json::from_str(&ok(&["stats", "--index", s(&compacted), "--json"])).unwrap();
    assert_eq!(stats["batch_count"], 1);
    assert_eq!(stats["fact_count"], 6);
    assert_eq!(
        ok(&["query", "--index", s(&compacted), "<Danny Boyle> <"]),
        ok(&["query", "--index", s(&index), "<Danny Boyle> <"])
    );

    let golden = dir.path().join("golden.jsonl");
    ok(&["golden", "--index", s(&index), "--out", s(&golden), "--count", "40", "--seed", "3"]);
    let text = std::fs::read_to_string(&golden).unwrap();
    let mut constrained = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let logits = v["logits"].as_array().unwrap();
        let expected = v["expected"].as_array().unwrap();
        let allowed: Vec<u64> = v["allowed"].as_array().unwrap().iter().map(|a| a[0].as_u64().unwrap()).collect();
        if !allowed.is_empty() {
            constrained += 1;
        }
        for (i, (x, e)) in logits.iter().zip(expected).enumerate() {
            if allowed.is_empty() || allowed.contains(&(i as u64)) {
                assert_eq!(x, e);
            } else {
                assert!(e.is_null());
            }
        }
    }
    assert_eq!(text.lines().count(), 40);
    assert_eq!(constrained, 30);
}

#[test]
fn synth_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--facts", "300", "--seed", "9", "--out-dir", s(dir.path())]);
    let index = dir.path().join("s.idx");
    let out = ok(&[
        "ingest",
        "--triples",
        s(&dir.path().join("triples.tsv")),
        "--labels",
        s(&dir.path().join("labels.tsv")),
        "--index",
        s(&index),
        "--max-pieces",
        "300",
    ]);
    assert!(out.contains("facts              300"), "{out}");
    assert!(dir.path().join("s.idx.vocab.json").exists());
    let root = query_tokens(&index, &[]);
    assert_eq!(root.iter().map(|r| r.leaves).sum::<u64>(), 300);
}

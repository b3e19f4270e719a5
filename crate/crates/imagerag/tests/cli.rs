mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use imagerag::store;
use serde_json::Value;

const ENV_VARS: [&str; 6] = [
    "IMAGERAG_VLM_ENDPOINT",
    "IMAGERAG_VLM_KEY",
    "IMAGERAG_T2I_ENDPOINT",
    "IMAGERAG_T2I_KEY",
    "IMAGERAG_EMBED_ENDPOINT",
    "IMAGERAG_EMBED_KEY",
];

fn imagerag(args: &[&str], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_imagerag"));
    cmd.args(args).current_dir(cwd);
    for v in ENV_VARS {
        cmd.env_remove(v);
    }
    cmd.output().unwrap()
}

fn json_ok(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fx(name: &str) -> String {
    fixture(name).to_str().unwrap().to_string()
}

#[test]
fn ingest_writes_a_loadable_index() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("out.irag");
    let out = imagerag(&["ingest", &fx("two.irag"), &fx("two.meta.jsonl"), out_path.to_str().unwrap()], dir.path());
    let v = json_ok(&out);
    assert_eq!(v["records"], 2);
    assert_eq!(v["dimension"], 2);
    assert_eq!(v["embedder_tag"], "clip-vit-b32");
    assert!(dir.path().join("out.jsonl").is_file());
    let index = store::load_index(&out_path).unwrap();
    assert_eq!(index.len(), 2);

    let plain = imagerag(
        &["--plain", "ingest", &fx("two.irag"), &fx("two.meta.jsonl"), out_path.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(String::from_utf8(plain.stdout).unwrap(), "2 records, dim 2\n");
}

#[test]
fn ingest_rejects_bad_inputs_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("o.irag");
    let o = out_path.to_str().unwrap();
    let bad = imagerag(&["ingest", &fx("bad_magic.irag"), &fx("two.meta.jsonl"), o], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("bad magic"));
    assert!(bad.stdout.is_empty());
    let dup = imagerag(&["ingest", &fx("dup.irag"), &fx("dup.meta.jsonl"), o], dir.path());
    assert_eq!(dup.status.code(), Some(2));
    assert!(stderr(&dup).contains("duplicate id \"a\""));
    let missing = imagerag(&["ingest", "nope.irag", &fx("two.meta.jsonl"), o], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(!out_path.exists());
}

#[test]
fn retrieve_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = imagerag(
        &[
            "retrieve",
            "--caption",
            "a cat",
            "--k",
            "3",
            "--index",
            &fx("small.irag"),
            "--mock-transcript",
            &fx("rerank.transcript.jsonl"),
        ],
        dir.path(),
    );
    let v = json_ok(&out);
    let index = store::load_index(&fixture("small.irag")).unwrap();
    let want = index.top_k(&[1.0, 0.0, 0.0, 0.0], 3).unwrap();
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 3);
    for (h, w) in hits.iter().zip(&want) {
        assert_eq!(h["id"], w.id.as_str());
        assert!((h["score"].as_f64().unwrap() - w.score).abs() < 1e-12);
    }
    assert_eq!(hits[0]["id"], "cat-1");
    assert_eq!(hits[1]["id"], "cat-2");

    let bm25 = imagerag(
        &[
            "retrieve",
            "--caption",
            "a cat",
            "--k",
            "2",
            "--rerank",
            "bm25",
            "--index",
            &fx("small.irag"),
            "--mock-transcript",
            &fx("rerank.transcript.jsonl"),
        ],
        dir.path(),
    );
    assert_eq!(json_ok(&bm25)["hits"].as_array().unwrap().len(), 2);
}

#[test]
fn retrieve_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let zero = imagerag(&["retrieve", "--caption", "x", "--k", "0", "--index", &fx("small.irag")], dir.path());
    assert_eq!(zero.status.code(), Some(2));
    let no_index = imagerag(&["retrieve", "--caption", "x", "--k", "1"], dir.path());
    assert_eq!(no_index.status.code(), Some(2));
    assert!(stderr(&no_index).contains("no index"));
    // no transcript and no endpoint in the environment
    let no_env = imagerag(&["retrieve", "--caption", "x", "--k", "1", "--index", &fx("small.irag")], dir.path());
    assert_eq!(no_env.status.code(), Some(2));
    assert!(stderr(&no_env).contains("IMAGERAG_EMBED_ENDPOINT"));

    std::fs::copy(fixture("two.irag"), dir.path().join("nocap.irag")).unwrap();
    std::fs::copy(fixture("nocap.meta.jsonl"), dir.path().join("nocap.jsonl")).unwrap();
    let t = dir.path().join("t.jsonl");
    std::fs::write(&t, "{\"kind\":\"embed\",\"text\":\"x\",\"vector\":[1,0]}\n").unwrap();
    let out = imagerag(
        &["retrieve", "--caption", "x", "--k", "1", "--rerank", "bm25", "--index", "nocap.irag", "--mock-transcript", t.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nocap.jsonl"));
}

#[test]
fn generate_with_mismatch_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "generate",
        "a cat and a dog",
        "--index",
        &fx("small.irag"),
        "--mock-transcript",
        &fx("mismatch.transcript.jsonl"),
        "--seed",
        "3",
    ];
    let v = json_ok(&imagerag(&args, dir.path()));
    let stages: Vec<&str> = v["stages"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(stages, ["initial-gen", "decision", "vlm-loop", "retrieval", "final-gen"]);
    let run_dir = dir.path().join(v["run_dir"].as_str().unwrap());
    for name in ["initial.json", "final.json", "trace.json"] {
        assert!(run_dir.join(name).is_file(), "{name}");
    }
    let trace: Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["run_id"], v["run_id"]);
    let final_art: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("final.json")).unwrap()).unwrap();
    let images: Vec<&str> = final_art["images"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(images, ["images/cat-1.png", "images/dog-1.png"]);

    let again = json_ok(&imagerag(&args, dir.path()));
    assert_eq!(again["run_id"], v["run_id"]);
}

#[test]
fn generate_with_match_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_ok(&imagerag(
        &["generate", "a cat", "--index", &fx("small.irag"), "--mock-transcript", &fx("match.transcript.jsonl")],
        dir.path(),
    ));
    assert_eq!(v["stages"], serde_json::json!(["initial-gen", "decision"]));
    let run_dir = dir.path().join(v["run_dir"].as_str().unwrap());
    assert!(run_dir.join("initial.json").is_file());
    assert!(!run_dir.join("final.json").exists());

    let plain = imagerag(
        &["--plain", "generate", "a cat", "--index", &fx("small.irag"), "--mock-transcript", &fx("match.transcript.jsonl")],
        dir.path(),
    );
    let line = String::from_utf8(plain.stdout).unwrap();
    assert!(line.starts_with(v["run_id"].as_str().unwrap()), "{line}");

    let bad = imagerag(
        &[
            "generate",
            "a cat",
            "--index",
            &fx("small.irag"),
            "--mock-transcript",
            &fx("match.transcript.jsonl"),
            "--backend-profile",
            "no-such-backend",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exhausted_transcript_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.jsonl");
    std::fs::write(&t, "{\"kind\":\"vlm\",\"content\":\"no\"}\n").unwrap();
    let out = imagerag(
        &["generate", "a cat", "--index", &fx("small.irag"), "--mock-transcript", t.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("exhausted"));
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
}

#[test]
fn personalize_on_single_image_backend_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = imagerag(
        &[
            "personalize",
            "my cat",
            "--subject",
            "https://me.example/cat.jpg",
            "--backend-profile",
            "sdxl-ip",
            "--index",
            &fx("small.irag"),
            "--mock-transcript",
            &fx("mismatch.transcript.jsonl"),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("personal"));
}

#[test]
fn eval_with_plans_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.jsonl");
    std::fs::write(&t, "{\"kind\":\"vlm\",\"content\":\"yes\"}\n{\"kind\":\"vlm\",\"content\":\"yes\"}\n").unwrap();
    let plans = dir.path().join("plans.json");
    std::fs::write(
        &plans,
        r#"{"plans":[{"name":"base","variant":"base"},{"name":"ours","variant":"full-method"}],
            "evaluators":{"clip-t2i":"mock-clip","siglip-t2i":"mock-siglip"},"seed":5}"#,
    )
    .unwrap();
    let csv = dir.path().join("r.csv");
    let args = [
        "eval",
        "--plans",
        plans.to_str().unwrap(),
        "--classes",
        &fx("classes.jsonl"),
        "--index",
        &fx("small.irag"),
        "--mock-transcript",
        t.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ];
    let v = json_ok(&imagerag(&args, dir.path()));
    assert_eq!(v["cells"].as_array().unwrap().len(), 2 * 2 * 2);
    assert_eq!(v["summary"].as_array().unwrap().len(), 2 * 2);
    assert!(v.get("failures").is_none());
    assert_eq!(v["summary_line"], "8 cells, 4 summary rows, 0 failures");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("plan,clip-t2i mean,clip-t2i sem,siglip-t2i mean,siglip-t2i sem\n"));
    // ours exits early on "yes", so it generates exactly what base does
    let s = v["summary"].as_array().unwrap();
    assert_eq!(s[0]["mean"], s[2]["mean"]);

    std::fs::write(&plans, r#"{"plans":[{"name":"base","variant":"base"}]}"#).unwrap();
    let out = imagerag(&args, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("evaluators"));
}

#[test]
fn synthetic_sweep_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let v = json_ok(&imagerag(
        &[
            "sweep",
            "--synthetic",
            "--synthetic-classes",
            "4",
            "--sizes",
            "50,300",
            "--parallelism",
            "2",
            "--out",
            report.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert_eq!(v["summary"].as_array().unwrap().len(), 2 * 3);
    assert_eq!(v["subsets"].as_array().unwrap().len(), 2);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(saved["summary"], v["summary"]);
    let bad = imagerag(&["sweep", "--synthetic", "--sizes", "300,50"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

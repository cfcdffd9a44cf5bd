//! Command-line behavior: outputs, manifests, exit codes and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgalign::io::{write_embeddings_json, write_triplets_jsonl};
use mgalign::trainer::{EncoderSet, LinearMap, SyntheticSpec, SyntheticTask};
use mgalign::{knn_clamped, solve_exact, solve_pairwise, AffinityPair, AlignOptions, EmbeddingMatrix, Metric, Solver};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn mgalign(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgalign")).args(args).current_dir(dir).output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn write_random_embeddings(dir: &Path, name: &str, rows: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = EmbeddingMatrix::new(Array2::from_shape_fn((rows, 3), |_| rng.random_range(-1.0..1.0))).unwrap();
    write_embeddings_json(&m, fs::File::create(dir.join(name)).unwrap()).unwrap();
    m
}

/// Synthetic triplets already mapped to latent space, so they are separable.
fn write_separable_triplets(dir: &Path, name: &str, batch: usize, seed: u64) -> mgalign::ModalityBatch {
    let task = SyntheticTask::new(SyntheticSpec { batch, margin: 10.0, seed, ..Default::default() }).unwrap();
    let recover = EncoderSet {
        encoders: task
            .mixing
            .iter()
            .map(|m| LinearMap { weight: m.t().to_owned(), bias: ndarray::Array1::zeros(4) })
            .collect(),
    };
    let batch = recover.encode(&task.batch(0).unwrap().views).unwrap();
    write_triplets_jsonl(&batch, fs::File::create(dir.join(name)).unwrap()).unwrap();
    batch
}

#[test]
fn align_same_file_is_zero_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    write_random_embeddings(dir.path(), "a.json", 6, 1);
    let out = mgalign(&["align", "a.json", "a.json", "--solver", "exact", "--out", "r.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(dir.path().join("r.json"));
    assert_eq!(r["objective"], 0.0);
    assert_eq!(r["sigma"], serde_json::json!([0, 1, 2, 3, 4, 5]));
    assert_eq!(r["manifest"], "r.json.manifest.json");
    let m = json(dir.path().join("r.json.manifest.json"));
    assert_eq!(m["command"], "align");
    assert_eq!(m["config"]["k"], 5);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["outputs"][0]["path"], "r.json");
}

#[test]
fn align_matches_in_process_exact_solve() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_random_embeddings(dir.path(), "a.json", 5, 2);
    let b = write_random_embeddings(dir.path(), "b.json", 5, 3);
    let out = mgalign(&["align", "a.json", "b.json", "--solver", "exact", "--out", "r.json"], dir.path());
    assert!(out.status.success());
    let g1 = knn_clamped(a, 5, Metric::Cosine).unwrap();
    let g2 = knn_clamped(b, 5, Metric::Cosine).unwrap();
    let want = solve_exact(&AffinityPair::between(&g1, &g2, Metric::Cosine).unwrap()).unwrap();
    let r = json(dir.path().join("r.json"));
    assert_eq!(r["objective"].as_f64().unwrap(), want.objective);
    assert_eq!(r["sigma"], serde_json::to_value(&want.sigma).unwrap());
}

#[test]
fn align_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_random_embeddings(dir.path(), "a.json", 12, 4);
    write_random_embeddings(dir.path(), "b.json", 12, 5);
    let args = |o: &'static str| ["align", "a.json", "b.json", "--seed", "9", "--out", o];
    assert!(mgalign(&args("r1.json"), dir.path()).status.success());
    assert!(mgalign(&args("r2.json"), dir.path()).status.success());
    let r1 = fs::read_to_string(dir.path().join("r1.json")).unwrap();
    let r2 = fs::read_to_string(dir.path().join("r2.json")).unwrap();
    assert_eq!(r1.replace("r1.json", "r.json"), r2.replace("r2.json", "r.json"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_random_embeddings(dir.path(), "a.json", 5, 1);
    write_random_embeddings(dir.path(), "big.json", 10, 1);
    write_random_embeddings(dir.path(), "c.json", 6, 1);
    fs::write(dir.path().join("bad.json"), "not json").unwrap();
    let code = |args: &[&str]| mgalign(args, dir.path()).status.code();
    assert_eq!(code(&["align", "bad.json", "a.json", "--out", "x.json"]), Some(2));
    assert_eq!(code(&["align", "missing.json", "a.json", "--out", "x.json"]), Some(2));
    assert_eq!(code(&["align", "a.json", "a.json", "--k", "0", "--out", "x.json"]), Some(2));
    assert_eq!(code(&["align", "a.json", "c.json", "--out", "x.json"]), Some(2));
    assert_eq!(code(&["align", "big.json", "big.json", "--solver", "exact", "--out", "x.json"]), Some(3));
    let out = mgalign(&["align", "bad.json", "a.json", "--out", "x.json"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));
}

#[test]
fn multi_align_separable_file_gives_identity() {
    let dir = tempfile::tempdir().unwrap();
    write_separable_triplets(dir.path(), "t.jsonl", 6, 11);
    let out = mgalign(
        &["multi-align", "t.jsonl", "--solver", "exact", "--metric", "euclidean", "--out", "m.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(dir.path().join("m.json"));
    assert_eq!(m["mode"], "barycenter");
    assert_eq!(m["matchings"], serde_json::json!([[0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 4, 5]]));
    assert_eq!(m["ids"].as_array().unwrap().len(), 6);
}

#[test]
fn multi_align_single_record_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("one.jsonl"),
        "{\"id\": \"r0\", \"v\": [1, 0], \"a\": [[0, 1], [1, 1]], \"ae\": [2, 2]}\n",
    )
    .unwrap();
    let out = mgalign(&["multi-align", "one.jsonl", "--out", "m.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(dir.path().join("m.json"));
    assert_eq!(m["matchings"], serde_json::json!([[0], [0], [0]]));
    assert_eq!(m["ids"], serde_json::json!(["r0"]));
}

#[test]
fn multi_align_pairwise_mode_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let batch = write_separable_triplets(dir.path(), "t.jsonl", 5, 12);
    let out = mgalign(
        &[
            "multi-align",
            "t.jsonl",
            "--mode",
            "pairwise",
            "--solver",
            "exact",
            "--metric",
            "euclidean",
            "--out",
            "p.json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let want = solve_pairwise(&batch, &AlignOptions::new(5, Metric::Euclidean), &Solver::Exact).unwrap();
    let p = json(dir.path().join("p.json"));
    assert_eq!(p["mode"], "pairwise");
    assert_eq!(p["pairs"], serde_json::to_value(&want.pairs).unwrap());
    assert_eq!(p["total_objective"].as_f64().unwrap(), want.total_objective);
}

#[test]
fn verify_passes_fails_on_mutant_and_handles_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let ok = mgalign(&["verify", "--trials", "200", "--n", "4", "--out", "v.json"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let v = json(dir.path().join("v.json"));
    assert_eq!(v["passed"], true);
    assert_eq!(v["axioms"]["trials"], 200);
    assert!(v["axioms"]["violations"].as_array().unwrap().is_empty());

    let bad = mgalign(&["verify", "--trials", "30", "--mutant", "--out", "m.json"], dir.path());
    assert_eq!(bad.status.code(), Some(4));
    let m = json(dir.path().join("m.json"));
    assert!(m["axioms"]["violations"].as_array().unwrap().iter().any(|v| v["kind"] == "symmetry"));

    let empty = mgalign(&["verify", "--trials", "0", "--out", "e.json"], dir.path());
    assert_eq!(empty.status.code(), Some(0));
    let e = json(dir.path().join("e.json"));
    assert_eq!(e["axioms"]["trials"], 0);
    assert!(e["axioms"]["violations"].as_array().unwrap().is_empty());

    assert_eq!(mgalign(&["verify", "--n", "12", "--out", "x.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn train_writes_checkpoint_trace_and_manifest_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = mgalign(args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["train", "--epochs", "6", "--seed", "2", "--out", "a.json"]);
    run(&["train", "--epochs", "6", "--seed", "2", "--out", "b.json"]);
    let a = fs::read_to_string(dir.path().join("a.json")).unwrap();
    let b = fs::read_to_string(dir.path().join("b.json")).unwrap();
    assert_eq!(a.replace("a.json", "x"), b.replace("b.json", "x"));
    let trace = fs::read_to_string(dir.path().join("a.json.trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "epoch,batch,hamming,surrogate,accuracy");
    assert_eq!(trace.lines().count(), 7);
    let m = json(dir.path().join("a.json.manifest.json"));
    assert_eq!(m["seed"], 2);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["summary"]["end_epoch"], 6);

    run(&["train", "--epochs", "3", "--seed", "2", "--out", "first.json"]);
    run(&["train", "--epochs", "3", "--seed", "2", "--resume", "first.json", "--out", "second.json"]);
    let full = json(dir.path().join("a.json"));
    let resumed = json(dir.path().join("second.json"));
    assert_eq!(resumed["epoch"], 6);
    assert_eq!(resumed["encoders"], full["encoders"]);
}

#[test]
fn train_divergence_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgalign(&["train", "--epochs", "3", "--lr", "1e300", "--out", "d.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn thread_cap_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    write_random_embeddings(dir.path(), "a.json", 5, 1);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_mgalign"))
            .args(["align", "a.json", "a.json", "--out", "r.json"])
            .env("MGALIGN_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    assert_eq!(json(dir.path().join("r.json.manifest.json"))["machine"]["worker_threads"], 1);
    assert_eq!(run("0").status.code(), Some(2));
}

#[test]
fn bench_writes_counts_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgalign(&["bench", "--modalities", "3,6", "--batches", "6", "--out", "b.csv"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][..4], &["3", "6", "3", "3"]);
    assert_eq!(&rows[1][..4], &["6", "6", "6", "15"]);
}

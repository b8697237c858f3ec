use std::path::Path;
use std::process::{Command, Output};

fn regabstract(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regabstract"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = regabstract(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--cancer", "60", "--control", "24", "--sites", "4", "--histologies", "4", "--pool", "30"];

fn small_corpus(dir: &Path, name: &str) {
    let mut args = vec!["gen-corpus", "--seed", "7", "--out", name];
    args.extend_from_slice(SMALL);
    ok(&args, dir);
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gen_corpus_is_deterministic_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "a");
    small_corpus(tmp.path(), "b");
    let (a, b) = (dir_files(&tmp.path().join("a")), dir_files(&tmp.path().join("b")));
    assert_eq!(a.len(), 6);
    assert_eq!(a, b);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "gen-corpus");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["n_cancer_patients"], 60);
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    let hash = |d: &str| {
        let out = ok(&["gen-corpus", "--seed", "7", "--out", d, "--cancer", "60", "--control", "24", "--sites", "4", "--histologies", "4", "--pool", "30"], tmp.path());
        out.rsplit("sha256 ").next().unwrap().trim().to_string()
    };
    assert_eq!(hash("c"), hash("d"));
}

#[test]
fn missing_upstream_artifacts_exit_1_and_name_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let out = regabstract(&["train", "--attribute", "site", "--corpus", "nope", "--vocab", "v.json", "--out", "m"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-corpus"));

    small_corpus(tmp.path(), "corpus");
    let out = regabstract(&["train", "--attribute", "site", "--corpus", "corpus", "--vocab", "v.json", "--out", "m"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("build-vocab"));

    let out = regabstract(&["report", "missing.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_flags_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "corpus");
    for args in [
        vec!["train", "--corpus", "corpus", "--vocab", "v.json", "--out", "m", "--window", "30:-30"],
        vec!["train", "--corpus", "corpus", "--vocab", "v.json", "--out", "m", "--kinds", "path,xray"],
        vec!["train", "--corpus", "corpus", "--vocab", "v.json", "--out", "m", "--attribute", "grade"],
        vec!["gen-corpus", "--out", "x", "--cross-doc", "1.5"],
        vec!["no-such-command"],
    ] {
        let out = regabstract(&args, tmp.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(regabstract(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path(), "corpus");
    std::fs::write(tmp.path().join("corpus/patients.jsonl"), "{not json\n").unwrap();
    let out = regabstract(&["infer", "--corpus", "corpus", "--out", "x.jsonl"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

/// The whole pipeline at toy scale: every stage runs, writes its manifest,
/// and the report renders what the stages wrote.
#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir, "corpus");
    ok(&["build-vocab", "--corpus", "corpus", "--size", "300", "--out", "work/vocab.json"], dir);
    assert!(dir.join("work/vocab.manifest.json").exists());
    let fit = ["--epochs", "2", "--embed-dim", "16", "--hidden", "8", "--max-sentences", "64"];
    let mut train = vec!["train", "--corpus", "corpus", "--vocab", "work/vocab.json", "--attribute", "site", "--window", "-30:30", "--kinds", "path,rad,op", "--out", "models"];
    train.extend_from_slice(&fit);
    let out = ok(&train, dir);
    assert!(out.contains("site site.contextfree"), "{out}");
    for f in ["ckpt", "options.json", "history.json", "metrics.json", "manifest.json"] {
        assert!(dir.join(format!("models/site.contextfree.{f}")).exists(), "{f}");
    }
    // same manifest inputs and seed, same bytes
    let mut again = train.clone();
    *again.iter_mut().find(|a| **a == "models").unwrap() = "models2";
    ok(&again, dir);
    assert_eq!(
        std::fs::read(dir.join("models/site.contextfree.ckpt")).unwrap(),
        std::fs::read(dir.join("models2/site.contextfree.ckpt")).unwrap()
    );

    ok(&["eval", "--corpus", "corpus", "--method", "model", "--checkpoints", "models", "--vocab", "work/vocab.json", "--out", "eval/model.json"], dir);
    ok(&["eval", "--corpus", "corpus", "--method", "ontology", "--out", "eval/ontology.json"], dir);
    ok(&["eval", "--corpus", "corpus", "--method", "bow", "--out", "eval/bow.json"], dir);
    assert!(dir.join("eval/bow.manifest.json").exists());

    let mut ablate = vec!["ablate", "--corpus", "corpus", "--vocab", "work/vocab.json", "--variant", "path@-30:30", "--variant", "path,rad@-30:30", "--out", "ablation"];
    ablate.extend_from_slice(&fit);
    let tsv = ok(&ablate, dir);
    assert!(tsv.starts_with("variant\tkinds\twindow\tauroc\tauprc\taccuracy\tn_instances\tdelta_auprc\n"));
    assert_eq!(tsv.lines().count(), 3);

    let mut cf = vec!["case-find", "train", "--corpus", "corpus", "--vocab", "work/vocab.json", "--scheme", "hard-negatives", "--out", "cf"];
    cf.extend_from_slice(&fit);
    ok(&cf, dir);
    let eval = ok(&["case-find", "eval", "--corpus", "corpus", "--vocab", "work/vocab.json", "--model", "cf", "--out", "cf/eval.json"], dir);
    assert!(eval.contains("hard_negatives on test"), "{eval}");

    let metrics = ["eval/ontology.json", "eval/bow.json", "eval/model.json", "ablation/metrics.json", "cf/eval.json"];
    let mut report = vec!["report"];
    report.extend_from_slice(&metrics);
    let text = ok(&report, dir);
    assert!(text.contains("## Abstraction"));
    assert!(text.contains("| site | ontology | test |"));
    assert!(text.contains("| site | bow | test |"));
    assert!(text.contains("| site | contextfree | test |"));
    assert!(text.contains("## Case finding (patient level, first positive day within [-7, 30] of diagnosis)"));
    assert!(text.contains("| hard_negatives | test |"));
    assert!(text.contains("| F1 |"));
    assert!(text.contains("## Ablation: site"));
    // report is a pure function of its inputs
    assert_eq!(text, ok(&report, dir));
    ok(&["report", "--out", "report.md", "eval/bow.json"], dir);
    assert!(std::fs::read_to_string(dir.join("report.md")).unwrap().contains("| site | bow |"));

    let mut pre = vec!["pretrain", "--corpus", "corpus", "--vocab", "work/vocab.json", "--out", "enc/encoder.ckpt", "--steps", "3", "--batch-size", "2"];
    pre.extend_from_slice(&["--embed-dim", "16", "--layers", "1", "--heads", "2", "--ff-dim", "16"]);
    ok(&pre, dir);
    let mut tuned = vec!["train", "--corpus", "corpus", "--vocab", "work/vocab.json", "--pretrained", "enc/encoder.ckpt", "--out", "models", "--epochs", "1", "--hidden", "8", "--max-sentences", "16"];
    tuned.extend_from_slice(&["--attribute", "histology"]);
    let out = ok(&tuned, dir);
    assert!(out.contains("histology.transformer"), "{out}");

    ok(&["infer", "--corpus", "corpus", "--checkpoints", "models", "--vocab", "work/vocab.json", "--out", "extractions.jsonl"], dir);
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(dir.join("extractions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 84 * 8);
    let site_sources: Vec<&str> = rows.iter().filter(|r| r["attribute"] == "site").map(|r| r["source"].as_str().unwrap()).collect();
    assert!(site_sources.iter().all(|s| *s == "model:site.contextfree"));
    assert!(rows.iter().filter(|r| r["attribute"] == "clinical_t").all(|r| r["source"] == "ontology"));

    let patient = rows.iter().find(|r| r["attribute"] == "site" && !r["rationale"].is_null()).unwrap()["patient_id"].as_str().unwrap().to_string();
    let text = ok(&["explain", "--corpus", "corpus", "--checkpoints", "models", "--vocab", "work/vocab.json", "--patient", &patient], dir);
    assert!(text.starts_with(&format!("{patient} site: ")), "{text}");
    assert!(text.contains("registry: "));
    assert!(text.contains("1. ["));
    let json = ok(&["explain", "--corpus", "corpus", "--checkpoints", "models", "--vocab", "work/vocab.json", "--patient", &patient, "--json"], dir);
    let x: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(x["extraction_id"], format!("{patient}:site"));
    let out = regabstract(&["explain", "--corpus", "corpus", "--patient", "nobody"], dir);
    assert_eq!(out.status.code(), Some(1));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spanforge::corpus::{canonical, load_dataset, DatasetSource, LoadOptions};
use spanforge::metrics::{write_predictions, SpanPrediction};

fn mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("mini")
}

fn mini_args() -> Vec<String> {
    let dir = mini_dir();
    vec![
        "--dataset".into(),
        dir.join("questions.json").display().to_string(),
        "--documents".into(),
        dir.join("documents.json").display().to_string(),
        "--format".into(),
        "techqa".into(),
    ]
}

fn spanforge(out: &Path, args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanforge"))
        .env_remove("SPANFORGE_OUT_DIR")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn args(head: &[&str], tail: Vec<String>) -> Vec<String> {
    head.iter().map(|s| s.to_string()).chain(tail).collect()
}

/// The mini corpus as one canonical file, written into `dir`.
fn canonical_mini(dir: &Path) -> PathBuf {
    let src = DatasetSource::Techqa {
        questions: mini_dir().join("questions.json"),
        documents: mini_dir().join("documents.json"),
    };
    let d = load_dataset(&src, &LoadOptions::default()).unwrap().dataset;
    let path = dir.join("mini.jsonl");
    fs::write(&path, canonical::to_bytes(&d)).unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(spanforge(tmp.path(), &args(&["frobnicate"], vec![])).status.code(), Some(2));
    assert_eq!(spanforge(tmp.path(), &args(&["stats"], vec![])).status.code(), Some(2));
    let missing = args(&["stats", "--dataset"], vec![tmp.path().join("nope.jsonl").display().to_string()]);
    assert_eq!(spanforge(tmp.path(), &missing).status.code(), Some(2));
    let bad_p = args(&["augment", "--p", "1.5", "--n", "2", "--d-left", "1", "--d-right", "1"], mini_args());
    assert_eq!(spanforge(tmp.path(), &bad_p).status.code(), Some(2));
}

#[test]
fn validate_reports_corrupted_offsets() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = spanforge(tmp.path(), &args(&["validate"], mini_args()));
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let text = fs::read_to_string(mini_dir().join("questions.json")).unwrap();
    let mut questions: serde_json::Value = serde_json::from_str(&text).unwrap();
    let start = questions[0]["START_OFFSET"].as_u64().unwrap();
    questions[0]["START_OFFSET"] = (start + 3).into();
    let bad = tmp.path().join("questions.json");
    fs::write(&bad, questions.to_string()).unwrap();
    let mut a = mini_args();
    a[1] = bad.display().to_string();

    let out = spanforge(tmp.path(), &args(&["validate"], a.clone()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MINI_Q001"));

    // The stated offset is 3 characters off, well inside the repair window.
    let repaired = spanforge(tmp.path(), &args(&["validate", "--repair"], a));
    assert_eq!(repaired.status.code(), Some(0), "{}", String::from_utf8_lossy(&repaired.stderr));
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = canonical_mini(tmp.path());
    let d = load_dataset(&DatasetSource::Canonical(data.clone()), &LoadOptions::default())
        .unwrap()
        .dataset;
    let preds: Vec<SpanPrediction> = d
        .questions
        .iter()
        .map(|q| match &q.gold {
            Some(g) => SpanPrediction::span(&q.id, &g.doc_id, g.span, 1.0),
            None => SpanPrediction::no_answer(&q.id, 1.0),
        })
        .collect();
    let pred_path = tmp.path().join("gold.jsonl");
    let mut buf = Vec::new();
    write_predictions(&mut buf, &preds).unwrap();
    fs::write(&pred_path, buf).unwrap();

    let out_dir = tmp.path().join("out");
    let out = spanforge(
        &out_dir,
        &args(
            &["eval", "--dataset", data.to_str().unwrap(), "--predictions", pred_path.to_str().unwrap(), "--k", "1"],
            vec![],
        ),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["em"], 1.0);
    assert_eq!(report["recall"], 1.0);
    assert_eq!(report["dra"]["1"], 1.0);
    assert_eq!(report["n_questions"], 20);

    // A second prediction for one question is rejected unless asked to keep the best.
    let mut dup = preds.clone();
    dup.push(SpanPrediction::no_answer(&preds[0].question_id, 0.0));
    let mut buf = Vec::new();
    write_predictions(&mut buf, &dup).unwrap();
    fs::write(&pred_path, buf).unwrap();
    let eval = |extra: &[&str]| {
        let mut a = args(&["eval", "--dataset", data.to_str().unwrap(), "--predictions", pred_path.to_str().unwrap()], vec![]);
        a.extend(extra.iter().map(|s| s.to_string()));
        spanforge(&out_dir, &a).status.code()
    };
    assert_eq!(eval(&[]), Some(1));
    assert_eq!(eval(&["--best-per-question"]), Some(0));
}

#[test]
fn augment_writes_manifests_and_run_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spanforge(
        tmp.path(),
        &args(&["augment", "--profile", "techqa", "--seed", "3", "--manifests"], mini_args()),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stage1 = fs::read_to_string(tmp.path().join("stage1.jsonl")).unwrap();
    let stage2 = fs::read_to_string(tmp.path().join("stage2.jsonl")).unwrap();
    let count = |s: &str, needle: &str| s.lines().filter(|l| l.contains(needle)).count();
    assert_eq!(count(&stage2, "\"record\":\"question\""), 20);
    assert_eq!(count(&stage2, "\"origin\":\"augmented\""), 0);
    // round(0.8 * 16) = 13 selected questions, six spans each.
    assert_eq!(count(&stage1, "\"origin\":\"augmented\""), 13 * 6);

    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("augment.run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 3);
    assert_eq!(run["inputs"].as_array().unwrap().len(), 2);
    let outputs: Vec<&str> = run["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert_eq!(outputs, ["augmented.jsonl", "stage1.jsonl", "stage2.jsonl"]);

    // Rebuilding the manifests from augmented.jsonl gives the same bytes.
    let again = tmp.path().join("again");
    let augmented = tmp.path().join("augmented.jsonl").display().to_string();
    let out = spanforge(&again, &args(&["manifest", "--augmented", &augmented], mini_args()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(again.join("stage1.jsonl")).unwrap(), stage1);
    assert_eq!(fs::read_to_string(again.join("stage2.jsonl")).unwrap(), stage2);
}

#[test]
fn manifest_rejects_augmentation_of_other_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = canonical_mini(tmp.path());
    let first = tmp.path().join("a");
    let out = spanforge(&first, &args(&["augment", "--profile", "policyqa", "--dataset", data.to_str().unwrap()], vec![]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(&data).unwrap().replacen("Technote.", "Technote!", 1);
    fs::write(&data, text).unwrap();
    let augmented = first.join("augmented.jsonl").display().to_string();
    let out = spanforge(
        &tmp.path().join("b"),
        &args(&["manifest", "--augmented", &augmented, "--dataset", data.to_str().unwrap()], vec![]),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("derived from dataset"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn out_dir_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_spanforge"))
        .env("SPANFORGE_OUT_DIR", tmp.path())
        .args(args(&["extract", "--max-spans", "1"], mini_args()))
        .status()
        .unwrap();
    assert!(status.success());
    let preds = fs::read_to_string(tmp.path().join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 20 * 10);
}

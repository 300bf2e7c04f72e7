//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Criteria that need data which is not
//! present locally print SKIP.
//!
//! Run with `cargo test -p spanforge --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanforge::augment::{self, AugmentParams, Stage};
use spanforge::corpus::{
    compute_stats, load_dataset, Answer, CharSpan, Dataset, DatasetSource, Document, LoadOptions, Question,
};
use spanforge::extract::{self, ExtractorParams, IdfTable};
use spanforge::metrics::{self, EvalOptions, PredictedSpan, SpanPrediction};
use spanforge::rerank::{self, Pools};

const METRIC_TOLERANCE: f64 = 1e-12;
const COUNT_LAW_BUDGET: Duration = Duration::from_secs(1);
const PIPELINE_BUDGET: Duration = Duration::from_secs(5);
const TECHQA_DIR_ENV: &str = "SPANFORGE_TECHQA_DIR";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn main() {
    let checks: [(&str, Check); 9] = [
        ("augmentation count law", count_law),
        ("containment and bounds", containment_and_bounds),
        ("worked displacement example", worked_example),
        ("metric oracle equivalence", metric_oracle),
        ("answerable-only DRA", answerable_only_dra),
        ("rerank properties", rerank_properties),
        ("end-to-end mini corpus", end_to_end),
        ("determinism", determinism),
        ("TechQA ingestion sanity", techqa_ingestion),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Verdict::Pass(detail) => println!("[PASS] {name}: {detail}"),
            Verdict::Fail(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
            Verdict::Skip(detail) => println!("[SKIP] {name}: {detail}"),
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Verdict::Fail(format!($($fmt)+));
        }
    };
}

macro_rules! attempt {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return Verdict::Fail(format!("{}: {e}", stringify!($e))),
        }
    };
}

/// Answerable questions whose answers sit in the middle of their documents.
fn synthetic(count: usize) -> Dataset {
    let mut d = Dataset::new("synthetic");
    let pad = "lorem ipsum dolor sit amet ".repeat(3);
    for i in 0..count {
        let text = format!("{pad}the answer to item {i:03} is here {pad}");
        let doc = Document::new(format!("doc{i:03}"), text);
        let start = pad.chars().count();
        let span = CharSpan::new(start, start + "the answer to item 000 is here".len());
        d.questions.push(Question {
            id: format!("q{i:03}"),
            text: format!("where is item {i}?"),
            candidate_doc_ids: vec![doc.id().to_owned()],
            gold: Some(Answer::from_document(&doc, span).expect("span lies inside the document")),
        });
        d.insert_document(doc);
    }
    d
}

fn count_law() -> Verdict {
    let d = synthetic(100);
    let params = AugmentParams {
        p: 0.8,
        n: 6,
        d_left: 15,
        d_right: 20,
        seed: 2024,
    };
    let started = Instant::now();
    let aug = attempt!(augment::augment_dataset(&d, &params));
    let manifests = attempt!(augment::emit_stage_manifests(&d, &aug));
    let elapsed = started.elapsed();

    let stage1 = manifests.examples(Stage::One).len();
    let stage2 = manifests.examples(Stage::Two).len();
    ensure!(aug.fuzzy.len() == 480, "expected 480 fuzzy records, got {}", aug.fuzzy.len());
    ensure!(aug.shortfalls.is_empty(), "unexpected shortfalls: {:?}", aug.shortfalls);
    ensure!(stage1 == stage2 + 480, "stage1 = {stage1}, stage2 = {stage2}");
    ensure!(elapsed < COUNT_LAW_BUDGET, "took {elapsed:?}");
    Verdict::Pass(format!("480 fuzzy, stage1 {stage1} = stage2 {stage2} + 480, {elapsed:?}"))
}

fn containment_and_bounds() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = 10_000;
    let mut produced = 0usize;
    for case in 0..cases {
        let doc_len = rng.random_range(1..=200usize);
        let start = rng.random_range(0..doc_len);
        let end = rng.random_range(start + 1..=doc_len);
        let text: String = (0..doc_len).map(|i| if i % 7 == 3 { ' ' } else { 'é' }).collect();
        let doc = Document::new(format!("doc{case}"), text);
        let gold = attempt!(Answer::from_document(&doc, CharSpan::new(start, end)));
        let params = AugmentParams {
            p: 1.0,
            n: rng.random_range(1..=12),
            d_left: rng.random_range(1..=25),
            d_right: rng.random_range(1..=25),
            seed: case as u64,
        };
        let mut sub = ChaCha8Rng::seed_from_u64(augment::question_seed(params.seed, "q"));
        let spans = attempt!(augment::generate_fuzzy_spans("q", &gold, &doc, &params, &mut sub));
        ensure!(spans.len() <= params.n, "case {case}: {} spans for n = {}", spans.len(), params.n);
        let mut seen = HashSet::new();
        for s in &spans {
            let fs = s.answer.span;
            ensure!(fs.contains(&gold.span), "case {case}: {fs} does not contain {}", gold.span);
            ensure!(fs.is_valid_within(doc_len), "case {case}: {fs} outside doc of length {doc_len}");
            ensure!(fs != gold.span, "case {case}: fuzzy span equals gold");
            ensure!(seen.insert(fs), "case {case}: duplicate span {fs}");
            let d = s.displacement;
            ensure!(
                d != 0 && (d < 0 && d.unsigned_abs() as usize <= params.d_left || d > 0 && d as usize <= params.d_right),
                "case {case}: displacement {d} outside [-{}, {}]",
                params.d_left,
                params.d_right
            );
            ensure!(doc.slice(fs) == Some(s.answer.text.as_str()), "case {case}: text does not match {fs}");
        }
        produced += spans.len();
    }
    Verdict::Pass(format!("{cases} cases, {produced} fuzzy spans checked"))
}

fn worked_example() -> Verdict {
    let text = "Libraries missing, install the gtk2 libraries (32 and 64 bit)";
    let doc = Document::new("ex", text);
    let gold = CharSpan::new(19, 45);
    ensure!(doc.slice(gold) == Some("install the gtk2 libraries"), "gold slice is {:?}", doc.slice(gold));
    let left = attempt!(augment::displace_span(gold, -19, doc.char_len()));
    let right = attempt!(augment::displace_span(gold, 16, doc.char_len()));
    ensure!(left == CharSpan::new(0, 45), "d = -19 gave {left}");
    ensure!(right == CharSpan::new(19, 61), "d = +16 gave {right}");
    Verdict::Pass(format!("d=-19 -> {left}, d=+16 -> {right}"))
}

fn char_set(span: CharSpan) -> BTreeSet<usize> {
    (span.start..span.end).collect()
}

/// F1 and recall from explicit index sets.
fn oracle(pred: CharSpan, gold: CharSpan) -> (f64, f64) {
    let p = char_set(pred);
    let g = char_set(gold);
    let common = p.intersection(&g).count() as f64;
    if common == 0.0 {
        return (0.0, 0.0);
    }
    let precision = common / p.len() as f64;
    let recall = common / g.len() as f64;
    (2.0 * precision * recall / (precision + recall), recall)
}

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let doc = Document::new("doc", "z".repeat(300));
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let mut span = || {
            let s = rng.random_range(0..299);
            CharSpan::new(s, rng.random_range(s + 1..=300))
        };
        let (p, g) = (span(), span());
        let gold = attempt!(Answer::from_document(&doc, g));
        let pred = PredictedSpan {
            doc_id: "doc".into(),
            span: p,
        };
        let f1 = attempt!(metrics::char_overlap_f1(Some(&pred), Some(&gold)));
        let recall = attempt!(metrics::char_recall(Some(&pred), Some(&gold)));
        let (of1, orecall) = oracle(p, g);
        let delta = (f1 - of1).abs().max((recall - orecall).abs());
        ensure!(delta <= METRIC_TOLERANCE, "pair {i}: pred {p}, gold {g}, delta {delta:e}");
        worst = worst.max(delta);
    }
    Verdict::Pass(format!("1000 pairs, max |delta| = {worst:e} (tolerance {METRIC_TOLERANCE:e})"))
}

fn answerable_only_dra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut d = synthetic(60);
    let doc_ids: Vec<String> = d.documents.keys().cloned().collect();
    let mut preds = Vec::new();
    let mut pools = Pools::new();
    for q in &d.questions {
        let mut ranked: Vec<String> = (0..5).map(|_| doc_ids[rng.random_range(0..doc_ids.len())].clone()).collect();
        if rng.random_bool(0.5) {
            let at = rng.random_range(0..ranked.len());
            ranked[at] = q.candidate_doc_ids[0].clone();
        }
        preds.push(SpanPrediction::span(&q.id, &ranked[0], CharSpan::new(0, 5), 1.0));
        pools.insert(q.id.clone(), ranked);
    }
    let ks = [1, 3, 5];
    let opts = EvalOptions::default();
    let before = attempt!(metrics::evaluate(&preds, Some(&pools), &d, &ks, &opts));

    for (i, doc) in doc_ids.iter().enumerate().take(40) {
        let id = format!("n{i:03}");
        d.questions.push(Question {
            id: id.clone(),
            text: "no answer here".into(),
            candidate_doc_ids: vec![doc.clone()],
            gold: None,
        });
        if i % 2 == 0 {
            preds.push(SpanPrediction::span(&id, doc, CharSpan::new(0, 5), 0.5));
        } else {
            preds.push(SpanPrediction::no_answer(&id, 0.5));
        }
        pools.insert(id, vec![doc.clone()]);
    }
    let after = attempt!(metrics::evaluate(&preds, Some(&pools), &d, &ks, &opts));
    let unpooled = attempt!(metrics::evaluate(&preds, None, &d, &ks, &opts));
    ensure!(after.n_questions == before.n_questions + 40, "question count did not grow");
    ensure!(before.dra == after.dra, "dra changed: {:?} -> {:?}", before.dra, after.dra);
    let base = attempt!(metrics::evaluate(&preds[..60], None, &synthetic(60), &ks, &opts));
    ensure!(base.dra == unpooled.dra, "dra without pools changed: {:?} -> {:?}", base.dra, unpooled.dra);
    Verdict::Pass(format!("dra {:?} unchanged after adding 40 unanswerable questions", after.dra))
}

fn pools_bytes(pools: &Pools) -> Vec<u8> {
    let mut buf = Vec::new();
    rerank::write_pools(&mut buf, pools).expect("writing to a Vec cannot fail");
    buf
}

fn rerank_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let tables = 1000;
    for t in 0..tables {
        let n_docs = rng.random_range(1..=8);
        let mut preds = Vec::new();
        for doc in 0..n_docs {
            for s in 0..rng.random_range(1..=5) {
                // Multiples of 1/16 keep every scaled score exact, ties included.
                let score = rng.random_range(0..64) as f64 / 16.0;
                preds.push(SpanPrediction::span("q", format!("doc{doc}"), CharSpan::new(s * 4, s * 4 + 3), score));
            }
        }
        let distinct = n_docs;
        let mut previous: Vec<String> = Vec::new();
        for k in 1..=12 {
            let pool = attempt!(rerank::rerank_question(&preds, k));
            ensure!(
                pool.len() <= k.min(distinct),
                "table {t}, k {k}: pool of {} from {distinct} docs",
                pool.len()
            );
            ensure!(pool.starts_with(&previous), "table {t}: pool at k {k} does not extend k {}", k - 1);
            let unique: HashSet<&String> = pool.iter().collect();
            ensure!(unique.len() == pool.len(), "table {t}, k {k}: duplicate documents");
            previous = pool;
        }
        let k = rng.random_range(1..=12);
        let base = pools_bytes(&attempt!(rerank::rerank_all(&preds, k)));
        for factor in [0.25, 0.5, 2.0, 3.0, 1024.0] {
            let scaled: Vec<SpanPrediction> = preds
                .iter()
                .map(|p| SpanPrediction {
                    score: p.score * factor,
                    ..p.clone()
                })
                .collect();
            let got = pools_bytes(&attempt!(rerank::rerank_all(&scaled, k)));
            ensure!(got == base, "table {t}: scaling by {factor} changed the pools");
        }
    }
    Verdict::Pass(format!("{tables} score tables, k = 1..12"))
}

fn mini_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("mini")
}

fn mini_source() -> DatasetSource {
    let dir = mini_corpus_dir();
    DatasetSource::Techqa {
        questions: dir.join("questions.json"),
        documents: dir.join("documents.json"),
    }
}

/// Tokens of the gold document that no other candidate of the question contains.
fn uniquely_shared(d: &Dataset, q: &Question) -> usize {
    let gold = &q.gold.as_ref().expect("answerable").doc_id;
    let tokens = |text: &str| -> HashSet<String> { extract::tokenize(text).into_iter().map(|t| t.norm).collect() };
    let question = tokens(&q.text);
    let mut shared = &tokens(d.documents[gold].text()) & &question;
    for other in q.candidate_doc_ids.iter().filter(|c| *c != gold) {
        shared = &shared - &tokens(d.documents[other].text());
    }
    shared.len()
}

fn end_to_end() -> Verdict {
    let started = Instant::now();
    let loaded = attempt!(load_dataset(&mini_source(), &LoadOptions::default()));
    let d = loaded.dataset;
    ensure!(d.questions.len() == 20, "mini corpus has {} questions", d.questions.len());
    ensure!(
        d.questions.iter().all(|q| q.candidate_doc_ids.len() == 10),
        "every question needs 10 candidates"
    );
    for q in d.questions.iter().filter(|q| q.is_answerable()) {
        let n = uniquely_shared(&d, q);
        ensure!(n >= 3, "{} shares only {n} distinctive tokens with its gold document", q.id);
    }

    let params = ExtractorParams {
        idf_table: Some(IdfTable::from_documents(d.documents.values())),
        ..ExtractorParams::default()
    };
    let preds = attempt!(extract::extract_dataset(&d, &params));
    let pools = attempt!(rerank::rerank_all(&preds, 3));
    let stats = rerank::pool_stats(&pools);
    let report = attempt!(metrics::evaluate(
        &preds,
        Some(&pools),
        &d,
        &[3],
        &EvalOptions {
            best_per_question: true,
            ..EvalOptions::default()
        }
    ));
    let elapsed = started.elapsed();
    let dra3 = report.dra[&3];
    ensure!(dra3 == 1.0, "DRA@3 = {dra3}");
    ensure!(stats.max_pool <= 3, "max pool {}", stats.max_pool);
    ensure!(elapsed < PIPELINE_BUDGET, "pipeline took {elapsed:?}");
    Verdict::Pass(format!(
        "DRA@3 = {dra3}, max pool {}, avg pool {:.2}, {elapsed:?}",
        stats.max_pool, stats.avg_pool
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spanforge"))
        .current_dir(dir)
        .env_remove("SPANFORGE_OUT_DIR")
        .arg("--out-dir")
        .arg(".")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let src = mini_corpus_dir();
    let questions = src.join("questions.json");
    let documents = src.join("documents.json");
    let data = [
        "--dataset",
        questions.to_str().unwrap(),
        "--documents",
        documents.to_str().unwrap(),
        "--format",
        "techqa",
    ];
    let with = |rest: &[&'static str]| -> Vec<&str> { data.iter().copied().chain(rest.iter().copied()).collect() };
    run_cli(dir, &[&["augment"][..], &with(&["--profile", "techqa", "--seed", "7", "--manifests"])].concat())?;
    run_cli(dir, &[&["extract"][..], &with(&[])].concat())?;
    run_cli(dir, &["rerank", "--predictions", "predictions.jsonl", "--k", "3"])?;
    run_cli(
        dir,
        &[
            &["eval"][..],
            &with(&["--predictions", "predictions.jsonl", "--pools", "pools.jsonl", "--k", "1,3", "--best-per-question"]),
        ]
        .concat(),
    )?;
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Verdict {
    let a = attempt!(tempfile::tempdir());
    let b = attempt!(tempfile::tempdir());
    let first = attempt!(pipeline_outputs(a.path()));
    let second = attempt!(pipeline_outputs(b.path()));
    for expected in ["augmented.jsonl", "stage1.jsonl", "stage2.jsonl", "predictions.jsonl", "pools.jsonl", "report.json"] {
        ensure!(first.contains_key(expected), "{expected} was not written");
    }
    ensure!(
        first.keys().eq(second.keys()),
        "file sets differ: {:?} vs {:?}",
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &first {
        ensure!(&second[name] == bytes, "{name} differs between runs");
    }
    Verdict::Pass(format!("{} files byte-identical across two runs", first.len()))
}

fn techqa_ingestion() -> Verdict {
    let Some(dir) = std::env::var_os(TECHQA_DIR_ENV).map(PathBuf::from) else {
        return Verdict::Skip(format!("set {TECHQA_DIR_ENV} to the TechQA training_and_dev directory"));
    };
    let documents = dir.join("training_dev_technotes.json");
    let splits = [("training_Q_A.json", 600usize), ("dev_Q_A.json", 310)];
    if !documents.is_file() || splits.iter().any(|(f, _)| !dir.join(f).is_file()) {
        return Verdict::Skip(format!("TechQA files not found under {}", dir.display()));
    }
    let mut notes = Vec::new();
    for (file, expected) in splits {
        let source = DatasetSource::Techqa {
            questions: dir.join(file),
            documents: documents.clone(),
        };
        let d = attempt!(load_dataset(&source, &LoadOptions::default())).dataset;
        let stats = compute_stats(&d);
        ensure!(d.questions.len() == expected, "{file}: {} questions, expected {expected}", d.questions.len());
        ensure!(
            d.questions.iter().all(|q| q.candidate_doc_ids.len() == 50),
            "{file}: not every question has 50 candidates"
        );
        if file.starts_with("training") {
            let avg = stats.avg_answer_len_tokens;
            ensure!((avg - 48.1).abs() <= 0.1 * 48.1, "{file}: average answer length {avg:.2} tokens");
        }
        notes.push(format!("{file}: {} questions, avg answer {:.2} tokens", expected, stats.avg_answer_len_tokens));
    }
    Verdict::Pass(notes.join("; "))
}

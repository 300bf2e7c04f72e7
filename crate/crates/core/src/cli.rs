//! `spanforge` command line.
//!
//! Exit codes: 0 on success, 1 when the data fails validation, 2 for usage
//! and I/O errors. Every command that writes files also writes
//! `<command>.run.json` into the output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::artifact::{atomic_write, RunManifest};
use crate::augment::{self, AugmentParams, Profile, Stage};
use crate::corpus::{self, canonical, Dataset, DatasetSource, LoadOptions};
use crate::error::{Error, Result};
use crate::extract::{self, ExtractorParams, IdfTable};
use crate::metrics::{self, EvalOptions, UnanswerableScoring};
use crate::rerank;

pub const OUT_DIR_ENV: &str = "SPANFORGE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "spanforge", version, about = "Fuzzy-span augmentation, reranking and QA evaluation")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "spanforge-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Techqa,
    Squad,
    Canonical,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Question file (techqa), SQuAD-style JSON, or canonical JSONL dump.
    #[arg(long)]
    dataset: PathBuf,
    /// Document collection; required with --format techqa.
    #[arg(long)]
    documents: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "canonical")]
    format: FormatArg,
    /// Fix answer offsets that are off by up to 50 characters.
    #[arg(long)]
    repair: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Techqa,
    Policyqa,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Preset parameters; explicit flags override it.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_left: Option<usize>,
    #[arg(long)]
    d_right: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IdfArg {
    /// Smoothed idf over the loaded documents.
    Corpus,
    /// Every token weighs 1.
    Unit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnanswerableArg {
    Reward,
    Exclude,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print dataset statistics.
    Stats {
        #[command(flatten)]
        data: DatasetArgs,
    },
    /// Check dataset invariants; exits 1 on any violation.
    Validate {
        #[command(flatten)]
        data: DatasetArgs,
    },
    /// Generate fuzzy spans and write augmented.jsonl.
    Augment {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        params: AugmentArgs,
        /// Also write stage1.jsonl and stage2.jsonl.
        #[arg(long)]
        manifests: bool,
    },
    /// Write stage1.jsonl and stage2.jsonl from a dataset and its augmented.jsonl.
    Manifest {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        augmented: PathBuf,
    },
    /// Score token windows of every candidate document; writes predictions.jsonl.
    Extract {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, value_delimiter = ',', default_value = "20,40")]
        windows: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        max_spans: usize,
        #[arg(long, value_enum, default_value = "corpus")]
        idf: IdfArg,
    },
    /// Reduce candidate pools from span scores; writes pools.jsonl.
    Rerank {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = rerank::DEFAULT_K)]
        k: usize,
        /// Also write filtered.jsonl with candidates replaced by the pools.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        documents: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "canonical")]
        format: FormatArg,
    },
    /// Score predictions against gold answers; writes report.json.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Ranked documents per question for DRA; defaults to the predicted document.
        #[arg(long)]
        pools: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        k: Vec<usize>,
        /// Keep the highest-scoring prediction per question instead of failing on duplicates.
        #[arg(long)]
        best_per_question: bool,
        #[arg(long, value_enum, default_value = "reward")]
        unanswerable: UnanswerableArg,
        /// Include per-question scores in the report.
        #[arg(long)]
        verbose: bool,
    },
}

enum Outcome {
    Done,
    Violations,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Malformed { .. } | Error::InvalidParams(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::Violations) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Records(records) = &e {
                for r in records {
                    eprintln!("  {r}");
                }
            }
            exit_code(&e)
        }
    }
}

fn source(dataset: &Path, documents: Option<&Path>, format: FormatArg) -> Result<DatasetSource> {
    Ok(match format {
        FormatArg::Techqa => DatasetSource::Techqa {
            questions: dataset.to_path_buf(),
            documents: documents
                .ok_or_else(|| Error::InvalidParams("--format techqa needs --documents".into()))?
                .to_path_buf(),
        },
        FormatArg::Squad => DatasetSource::SquadStyle(dataset.to_path_buf()),
        FormatArg::Canonical => DatasetSource::Canonical(dataset.to_path_buf()),
    })
}

fn load(data: &DatasetArgs) -> Result<(Dataset, DatasetSource)> {
    let src = source(&data.dataset, data.documents.as_deref(), data.format)?;
    let options = LoadOptions {
        repair: data.repair,
        ..Default::default()
    };
    let loaded = corpus::load_dataset(&src, &options)?;
    if !loaded.repairs.is_empty() {
        eprintln!("repaired {} answer offset(s)", loaded.repairs.len());
    }
    Ok((loaded.dataset, src))
}

fn dataset_config(data: &DatasetArgs) -> serde_json::Value {
    json!({
        "dataset": data.dataset.display().to_string(),
        "documents": data.documents.as_ref().map(|p| p.display().to_string()),
        "format": format!("{:?}", data.format).to_lowercase(),
        "repair": data.repair,
    })
}

fn add_inputs(manifest: &mut RunManifest, src: &DatasetSource) -> Result<()> {
    for p in src.paths() {
        manifest.add_input(p)?;
    }
    Ok(())
}

fn resolve_params(args: &AugmentArgs) -> Result<AugmentParams> {
    let profile = match args.profile {
        Some(ProfileArg::Policyqa) => Profile::Policyqa,
        Some(ProfileArg::Techqa) | None => Profile::Techqa,
    };
    let base = profile.params(args.seed);
    let params = AugmentParams {
        p: args.p.unwrap_or(base.p),
        n: args.n.unwrap_or(base.n),
        d_left: args.d_left.unwrap_or(base.d_left),
        d_right: args.d_right.unwrap_or(base.d_right),
        seed: args.seed,
    };
    params.validate()?;
    Ok(params)
}

fn write_manifests(out_dir: &Path, dataset: &Dataset, m: &augment::StageManifests, run: &mut RunManifest) -> Result<()> {
    for stage in [Stage::One, Stage::Two] {
        let name = format!("{}.jsonl", stage.name());
        atomic_write(&out_dir.join(&name), |w| m.write(stage, dataset, w))?;
        run.add_output(out_dir, &name)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::Stats { data } => {
            let (d, _) = load(&data)?;
            let stats = corpus::compute_stats(&d);
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            Ok(Outcome::Done)
        }

        Command::Validate { data } => {
            let (d, _) = match load(&data) {
                Err(Error::Records(records)) => {
                    for r in &records {
                        println!("{r}");
                    }
                    println!("{} violation(s)", records.len());
                    return Ok(Outcome::Violations);
                }
                other => other?,
            };
            let violations = corpus::validate_dataset(&d);
            for v in &violations {
                println!("{v}");
            }
            println!("{} violation(s)", violations.len());
            Ok(if violations.is_empty() {
                Outcome::Done
            } else {
                Outcome::Violations
            })
        }

        Command::Augment {
            data,
            params,
            manifests,
        } => {
            let p = resolve_params(&params)?;
            let (d, src) = load(&data)?;
            let aug = augment::augment_dataset(&d, &p)?;
            let mut run = RunManifest::new(
                "augment",
                json!({ "data": dataset_config(&data), "params": p, "manifests": manifests }),
                Some(p.seed),
            );
            add_inputs(&mut run, &src)?;
            atomic_write(&out_dir.join("augmented.jsonl"), |w| augment::write_augmented(w, &d, &aug))?;
            run.add_output(&out_dir, "augmented.jsonl")?;
            if manifests {
                let m = augment::emit_stage_manifests(&d, &aug)?;
                write_manifests(&out_dir, &d, &m, &mut run)?;
            }
            run.write(&out_dir)?;
            eprintln!(
                "{} original + {} fuzzy examples ({} question(s) short of n = {})",
                aug.original.len(),
                aug.fuzzy.len(),
                aug.shortfalls.len(),
                p.n
            );
            Ok(Outcome::Done)
        }

        Command::Manifest { data, augmented } => {
            let (d, src) = load(&data)?;
            let file = fs::File::open(&augmented).map_err(|e| Error::io(&augmented, e))?;
            let aug = augment::read_augmented(BufReader::new(file), &augmented.display().to_string())?;
            let m = augment::emit_stage_manifests(&d, &aug)?;
            let mut run = RunManifest::new(
                "manifest",
                json!({ "data": dataset_config(&data), "augmented": augmented.display().to_string() }),
                Some(aug.params.seed),
            );
            add_inputs(&mut run, &src)?;
            run.add_input(&augmented)?;
            write_manifests(&out_dir, &d, &m, &mut run)?;
            run.write(&out_dir)?;
            eprintln!("stage1: {} records, stage2: {} records", m.stage1.len(), m.stage2.len());
            Ok(Outcome::Done)
        }

        Command::Extract {
            data,
            windows,
            max_spans,
            idf,
        } => {
            let (d, src) = load(&data)?;
            let params = ExtractorParams {
                window_tokens: windows.clone(),
                max_spans_per_doc: max_spans,
                idf_table: match idf {
                    IdfArg::Corpus => Some(IdfTable::from_documents(d.documents.values())),
                    IdfArg::Unit => None,
                },
            };
            let preds = extract::extract_dataset(&d, &params)?;
            let mut run = RunManifest::new(
                "extract",
                json!({
                    "data": dataset_config(&data),
                    "windows": windows,
                    "max_spans": max_spans,
                    "idf": format!("{idf:?}").to_lowercase(),
                }),
                None,
            );
            add_inputs(&mut run, &src)?;
            atomic_write(&out_dir.join("predictions.jsonl"), |w| metrics::write_predictions(w, &preds))?;
            run.add_output(&out_dir, "predictions.jsonl")?;
            run.write(&out_dir)?;
            Ok(Outcome::Done)
        }

        Command::Rerank {
            predictions,
            k,
            dataset,
            documents,
            format,
        } => {
            let file = fs::File::open(&predictions).map_err(|e| Error::io(&predictions, e))?;
            let preds = metrics::read_predictions(BufReader::new(file), &predictions.display().to_string())?;
            let pools = rerank::rerank_all(&preds, k)?;
            let stats = rerank::pool_stats(&pools);
            let mut run = RunManifest::new(
                "rerank",
                json!({
                    "predictions": predictions.display().to_string(),
                    "k": k,
                    "dataset": dataset.as_ref().map(|p| p.display().to_string()),
                }),
                None,
            );
            run.add_input(&predictions)?;
            atomic_write(&out_dir.join("pools.jsonl"), |w| rerank::write_pools(w, &pools))?;
            run.add_output(&out_dir, "pools.jsonl")?;
            atomic_write(&out_dir.join("pool_stats.json"), |w| {
                serde_json::to_writer_pretty(&mut *w, &stats)?;
                w.write_all(b"\n")
            })?;
            run.add_output(&out_dir, "pool_stats.json")?;

            if let Some(path) = dataset {
                let src = source(&path, documents.as_deref(), format)?;
                let d = corpus::load_dataset(&src, &LoadOptions::default())?.dataset;
                add_inputs(&mut run, &src)?;
                let (filtered, summary) = rerank::filter_dataset(&d, &pools)?;
                atomic_write(&out_dir.join("filtered.jsonl"), |w| canonical::write_dataset(w, &filtered))?;
                run.add_output(&out_dir, "filtered.jsonl")?;
                eprintln!(
                    "filtered: {} empty pool(s), {} gold document(s) dropped, {} unpooled",
                    summary.empty_pool.len(),
                    summary.gold_dropped.len(),
                    summary.unpooled.len()
                );
            }
            run.write(&out_dir)?;
            println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
            Ok(Outcome::Done)
        }

        Command::Eval {
            data,
            predictions,
            pools,
            k,
            best_per_question,
            unanswerable,
            verbose,
        } => {
            let (d, src) = load(&data)?;
            let file = fs::File::open(&predictions).map_err(|e| Error::io(&predictions, e))?;
            let preds = metrics::read_predictions(BufReader::new(file), &predictions.display().to_string())?;
            let retrievals: Option<BTreeMap<String, Vec<String>>> = match &pools {
                Some(p) => {
                    let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
                    Some(rerank::read_pools(BufReader::new(file), &p.display().to_string())?)
                }
                None => None,
            };
            let opts = EvalOptions {
                unanswerable: match unanswerable {
                    UnanswerableArg::Reward => UnanswerableScoring::Reward,
                    UnanswerableArg::Exclude => UnanswerableScoring::Exclude,
                },
                best_per_question,
                verbose,
            };
            let report = metrics::evaluate(&preds, retrievals.as_ref(), &d, &k, &opts)?;
            let mut run = RunManifest::new(
                "eval",
                json!({
                    "data": dataset_config(&data),
                    "predictions": predictions.display().to_string(),
                    "pools": pools.as_ref().map(|p| p.display().to_string()),
                    "k": k,
                    "best_per_question": best_per_question,
                    "unanswerable": opts.unanswerable,
                    "verbose": verbose,
                }),
                None,
            );
            add_inputs(&mut run, &src)?;
            run.add_input(&predictions)?;
            if let Some(p) = &pools {
                run.add_input(p)?;
            }
            atomic_write(&out_dir.join("report.json"), |w| {
                serde_json::to_writer_pretty(&mut *w, &report)?;
                w.write_all(b"\n")
            })?;
            run.add_output(&out_dir, "report.json")?;
            run.write(&out_dir)?;
            print!("{}", report.to_table());
            Ok(Outcome::Done)
        }
    }
}

//! C interface to spanforge.
//!
//! Every fallible function returns an [`SfStatus`]; on failure a message is
//! kept per thread and can be fetched with [`sf_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function. Offsets are
//! in Unicode scalar values, spans are half-open.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::{self, File};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spanforge::augment::{self, AugmentParams, Profile, Stage};
use spanforge::corpus::{load_dataset, Answer, CharSpan, Dataset, DatasetSource, LoadOptions};
use spanforge::metrics::{self, EvalOptions, PredictedSpan};
use spanforge::{artifact, rerank, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    /// A null pointer, non-UTF-8 string or unknown name was passed.
    InvalidArgument = 1,
    Io = 2,
    Malformed = 3,
    /// The data was read but violates an invariant.
    InvalidData = 4,
    InvalidParams = 5,
    Panic = 6,
}

/// Half-open character span.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SfSpan {
    pub start: u64,
    pub end: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SfAugmentParams {
    pub p: f64,
    pub n: u64,
    pub d_left: u64,
    pub d_right: u64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SfEvalSummary {
    pub f1: f64,
    pub em: f64,
    pub recall: f64,
    /// DRA at the requested cut-off, over answerable questions.
    pub dra: f64,
    pub n_questions: u64,
    pub n_answerable: u64,
}

/// Opaque loaded dataset.
pub struct SfDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("NUL bytes were removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(SfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => SfStatus::Io,
            Error::Malformed { .. } => SfStatus::Malformed,
            Error::InvalidParams(_) | Error::ZeroDisplacement => SfStatus::InvalidParams,
            _ => SfStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SfStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn opt_path(p: *const c_char, name: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{name} is null")))
}

fn to_usize(v: u64, name: &str) -> Result<usize, Failure> {
    usize::try_from(v).map_err(|_| invalid(format!("{name} does not fit in usize")))
}

fn span_of(s: SfSpan) -> Result<CharSpan, Failure> {
    Ok(CharSpan::new(to_usize(s.start, "start")?, to_usize(s.end, "end")?))
}

fn params_of(p: &SfAugmentParams) -> Result<AugmentParams, Failure> {
    Ok(AugmentParams {
        p: p.p,
        n: to_usize(p.n, "n")?,
        d_left: to_usize(p.d_left, "d_left")?,
        d_right: to_usize(p.d_right, "d_right")?,
        seed: p.seed,
    })
}

/// Message of the last failed call on this thread, or null. Free the result
/// with [`sf_string_free`].
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset. `format` is "techqa", "squad" or "canonical";
/// `documents` is required for techqa and ignored otherwise.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_dataset_load(
    path: *const c_char,
    documents: *const c_char,
    format: *const c_char,
    repair: bool,
    out: *mut *mut SfDataset,
) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        let source = match str_arg(format, "format")? {
            "techqa" => DatasetSource::Techqa {
                questions: path,
                documents: opt_path(documents, "documents")?
                    .ok_or_else(|| invalid("techqa format needs a documents path"))?,
            },
            "squad" => DatasetSource::SquadStyle(path),
            "canonical" => DatasetSource::Canonical(path),
            other => return Err(invalid(format!("unknown format {other:?}"))),
        };
        let options = LoadOptions {
            repair,
            ..LoadOptions::default()
        };
        let inner = load_dataset(&source, &options)?.dataset;
        *out = Box::into_raw(Box::new(SfDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from [`sf_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_dataset_free(dataset: *mut SfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn sf_dataset_question_count(dataset: *const SfDataset) -> u64 {
    dataset.as_ref().map_or(0, |d| d.inner.questions.len() as u64)
}

/// # Safety
/// `dataset` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn sf_dataset_answerable_count(dataset: *const SfDataset) -> u64 {
    dataset.as_ref().map_or(0, |d| d.inner.num_answerable() as u64)
}

/// Hex sha256 of the dataset's canonical form. Free with [`sf_string_free`].
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_dataset_digest(dataset: *const SfDataset, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = dataset.as_ref().ok_or_else(|| invalid("dataset is null"))?;
        *out = CString::new(d.inner.digest()).expect("hex has no NUL").into_raw();
        Ok(())
    })
}

/// Extends `gold` by `d` characters: negative moves the start left, positive
/// moves the end right, clamped to `[0, doc_len]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_displace_span(gold: SfSpan, d: i64, doc_len: u64, out: *mut SfSpan) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let s = augment::displace_span(span_of(gold)?, d, to_usize(doc_len, "doc_len")?)?;
        *out = SfSpan {
            start: s.start as u64,
            end: s.end as u64,
        };
        Ok(())
    })
}

fn same_doc_pair(pred: SfSpan, gold: SfSpan) -> Result<(PredictedSpan, Answer), Failure> {
    Ok((
        PredictedSpan {
            doc_id: String::new(),
            span: span_of(pred)?,
        },
        Answer {
            doc_id: String::new(),
            span: span_of(gold)?,
            text: String::new(),
        },
    ))
}

/// Character-overlap F1 of two non-empty spans in the same document.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_char_overlap_f1(pred: SfSpan, gold: SfSpan, out: *mut f64) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let (p, g) = same_doc_pair(pred, gold)?;
        *out = metrics::char_overlap_f1(Some(&p), Some(&g))?;
        Ok(())
    })
}

/// Fraction of the gold characters covered by `pred`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_char_recall(pred: SfSpan, gold: SfSpan, out: *mut f64) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let (p, g) = same_doc_pair(pred, gold)?;
        *out = metrics::char_recall(Some(&p), Some(&g))?;
        Ok(())
    })
}

/// Preset parameters: "techqa" or "policyqa".
///
/// # Safety
/// `name` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_profile_params(name: *const c_char, seed: u64, out: *mut SfAugmentParams) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let profile: Profile = str_arg(name, "name")?.parse().map_err(invalid)?;
        let p = profile.params(seed);
        *out = SfAugmentParams {
            p: p.p,
            n: p.n as u64,
            d_left: p.d_left as u64,
            d_right: p.d_right as u64,
            seed: p.seed,
        };
        Ok(())
    })
}

/// Augments `dataset` and writes augmented.jsonl, stage1.jsonl and
/// stage2.jsonl into `out_dir`, creating it if needed. The number of fuzzy
/// examples generated is stored in `fuzzy_count` when it is not null.
///
/// # Safety
/// `dataset` and `params` must be valid; `out_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sf_augment_write(
    dataset: *const SfDataset,
    params: *const SfAugmentParams,
    out_dir: *const c_char,
    fuzzy_count: *mut u64,
) -> SfStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| invalid("dataset is null"))?.inner;
        let params = params_of(params.as_ref().ok_or_else(|| invalid("params is null"))?)?;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        fs::create_dir_all(&dir).map_err(|e| Failure::from(Error::Io { path: dir.clone(), source: e }))?;

        let aug = augment::augment_dataset(d, &params)?;
        let manifests = augment::emit_stage_manifests(d, &aug)?;
        artifact::atomic_write(&dir.join("augmented.jsonl"), |w| augment::write_augmented(w, d, &aug))?;
        for stage in [Stage::One, Stage::Two] {
            let path = dir.join(format!("{}.jsonl", stage.name()));
            artifact::atomic_write(&path, |w| manifests.write(stage, d, w))?;
        }
        if let Some(count) = fuzzy_count.as_mut() {
            *count = aug.fuzzy.len() as u64;
        }
        Ok(())
    })
}

/// Evaluates a predictions file against `dataset`. `pools` may be null, in
/// which case each question's predicted document is its retrieved list.
/// When `best_per_question` is false, duplicate predictions are an error.
///
/// # Safety
/// `dataset` must be valid; paths NUL-terminated (or null for `pools`);
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_evaluate_files(
    dataset: *const SfDataset,
    predictions: *const c_char,
    pools: *const c_char,
    k: u64,
    best_per_question: bool,
    out: *mut SfEvalSummary,
) -> SfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = &dataset.as_ref().ok_or_else(|| invalid("dataset is null"))?.inner;
        let pred_path = str_arg(predictions, "predictions")?;
        let preds = metrics::read_predictions(open(pred_path)?, pred_path)?;
        let pools = match opt_path(pools, "pools")? {
            Some(p) => {
                let shown = p.display().to_string();
                Some(rerank::read_pools(open(&shown)?, &shown)?)
            }
            None => None,
        };
        let k = to_usize(k, "k")?;
        let opts = EvalOptions {
            best_per_question,
            ..EvalOptions::default()
        };
        let report = metrics::evaluate(&preds, pools.as_ref(), d, &[k], &opts)?;
        *out = SfEvalSummary {
            f1: report.f1,
            em: report.em,
            recall: report.recall,
            dra: report.dra[&k],
            n_questions: report.n_questions as u64,
            n_answerable: report.n_answerable as u64,
        };
        Ok(())
    })
}

/// Reranks a predictions file into a pools file holding the documents of
/// each question's top-`k` spans.
///
/// # Safety
/// Paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sf_rerank_files(predictions: *const c_char, k: u64, pools_out: *const c_char) -> SfStatus {
    guard(|| {
        let pred_path = str_arg(predictions, "predictions")?;
        let out = PathBuf::from(str_arg(pools_out, "pools_out")?);
        let preds = metrics::read_predictions(open(pred_path)?, pred_path)?;
        let pools = rerank::rerank_all(&preds, to_usize(k, "k")?)?;
        artifact::atomic_write(&out, |w| rerank::write_pools(w, &pools))?;
        Ok(())
    })
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io { path: path.into(), source: e }.into())
}

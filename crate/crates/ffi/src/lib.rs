//! C ABI over the patchvote patch model, deduplication, metrics and vote
//! tallying.
//!
//! Every fallible function returns a [`PvStatus`]; on failure the message is
//! available from [`pv_last_error`] on the same thread. Objects are opaque
//! handles released with their matching `_free` function, and strings
//! returned through `char **` out-parameters are released with
//! [`pv_string_free`].

use patchvote::eval::{
    all_correct_ratios, confusion_metrics, correlations, ensemble_bounds, wilcoxon_signed_rank, CorrectnessMatrix,
    EvalError,
};
use patchvote::patch::{apply_patch, deduplicate, normalize, parse_patch, CandidatePatch, DedupReport, FileTree, PatchError, StructuredPatch};
use patchvote::selector::{tally_winner, Vote};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidPatch = 3,
    ApplyFailed = 4,
    InvalidInput = 5,
    Undefined = 6,
    Io = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type FfiResult<T> = Result<T, (PvStatus, String)>;

fn patch_status(e: &PatchError) -> PvStatus {
    match e {
        PatchError::InvalidPatch { .. } => PvStatus::InvalidPatch,
        PatchError::HunkMismatch { .. }
        | PatchError::MissingFile(_)
        | PatchError::FileExists(_)
        | PatchError::NotText(_) => PvStatus::ApplyFailed,
        PatchError::UnknownProfile(_) | PatchError::EmptyInput => PvStatus::InvalidInput,
    }
}

fn from_patch(e: PatchError) -> (PvStatus, String) {
    (patch_status(&e), e.to_string())
}

fn from_eval(e: EvalError) -> (PvStatus, String) {
    let status = match e {
        EvalError::ConstantInput | EvalError::AllZeroDifferences | EvalError::ZeroTotal => PvStatus::Undefined,
        _ => PvStatus::InvalidInput,
    };
    (status, e.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> PvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PvStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PvStatus::Panic
        }
    }
}

fn null() -> (PvStatus, String) {
    (PvStatus::NullArgument, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| (PvStatus::InvalidUtf8, "argument is not UTF-8".into()))
}

unsafe fn out_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| (PvStatus::InvalidInput, "result contains a nul byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize) -> FfiResult<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn check_out<T>(out: *mut T) -> FfiResult<()> {
    if out.is_null() {
        Err(null())
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A parsed unified diff.
pub struct PvPatch(StructuredPatch);

/// An in-memory file tree.
pub struct PvTree(FileTree);

/// Equivalence classes of a set of patches.
pub struct PvDedup(DedupReport);

/// A boolean correctness matrix, one row per issue.
pub struct PvMatrix(CorrectnessMatrix);

/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pv_patch_parse(text: *const c_char, out: *mut *mut PvPatch) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let p = parse_patch(str_arg(text)?).map_err(from_patch)?;
        *out = Box::into_raw(Box::new(PvPatch(p)));
        Ok(())
    })
}

/// # Safety
/// `patch` must be NULL or a handle from [`pv_patch_parse`].
#[no_mangle]
pub unsafe extern "C" fn pv_patch_free(patch: *mut PvPatch) {
    if !patch.is_null() {
        drop(Box::from_raw(patch));
    }
}

/// Number of files the patch touches; 0 for NULL.
///
/// # Safety
/// `patch` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pv_patch_file_count(patch: *const PvPatch) -> usize {
    patch.as_ref().map_or(0, |p| p.0.files.len())
}

/// Renders the patch back to unified-diff text.
///
/// # Safety
/// `patch` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pv_patch_to_unified(patch: *const PvPatch, out: *mut *mut c_char) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let p = patch.as_ref().ok_or_else(null)?;
        out_string(out, p.0.to_unified())
    })
}

/// Canonical form used for duplicate detection under `profile`.
///
/// # Safety
/// `patch` must be a live handle, `profile` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pv_patch_canonical(
    patch: *const PvPatch,
    profile: *const c_char,
    out: *mut *mut c_char,
) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let p = patch.as_ref().ok_or_else(null)?;
        let n = normalize(&p.0, str_arg(profile)?).map_err(from_patch)?;
        out_string(out, n.canonical_form())
    })
}

#[no_mangle]
pub extern "C" fn pv_tree_new() -> *mut PvTree {
    Box::into_raw(Box::new(PvTree(FileTree::new())))
}

/// Reads every file under `dir`, skipping `.git`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pv_tree_from_dir(dir: *const c_char, out: *mut *mut PvTree) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let t = FileTree::from_dir(std::path::Path::new(str_arg(dir)?)).map_err(|e| (PvStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(PvTree(t)));
        Ok(())
    })
}

/// # Safety
/// `tree` must be NULL or a tree handle.
#[no_mangle]
pub unsafe extern "C" fn pv_tree_free(tree: *mut PvTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Sets the content of `path`.
///
/// # Safety
/// `tree` must be a live handle, `path` NUL-terminated, and `data` must
/// point to `len` readable bytes (or be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn pv_tree_insert(tree: *mut PvTree, path: *const c_char, data: *const u8, len: usize) -> PvStatus {
    guard(|| {
        let t = tree.as_mut().ok_or_else(null)?;
        let bytes = slice_arg(data, len)?;
        t.0.insert(str_arg(path)?, bytes.to_vec());
        Ok(())
    })
}

/// Borrows the content of `path`. The pointer stays valid until the tree is
/// modified or freed. Returns `InvalidInput` when the path is absent.
///
/// # Safety
/// `tree` must be a live handle, `path` NUL-terminated, `data` and `len`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pv_tree_get(
    tree: *const PvTree,
    path: *const c_char,
    data: *mut *const u8,
    len: *mut usize,
) -> PvStatus {
    guard(|| {
        check_out(data)?;
        check_out(len)?;
        let t = tree.as_ref().ok_or_else(null)?;
        let path = str_arg(path)?;
        let bytes = t.0.get(path).ok_or_else(|| (PvStatus::InvalidInput, format!("no file `{path}`")))?;
        *data = bytes.as_ptr();
        *len = bytes.len();
        Ok(())
    })
}

/// Number of files; 0 for NULL.
///
/// # Safety
/// `tree` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pv_tree_len(tree: *const PvTree) -> usize {
    tree.as_ref().map_or(0, |t| t.0.len())
}

/// Applies `patch` to `tree`, writing a new tree to `out`. `tree` is left
/// unchanged.
///
/// # Safety
/// `tree` and `patch` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pv_tree_apply(tree: *const PvTree, patch: *const PvPatch, out: *mut *mut PvTree) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let t = tree.as_ref().ok_or_else(null)?;
        let p = patch.as_ref().ok_or_else(null)?;
        let next = apply_patch(&t.0, &p.0).map_err(from_patch)?;
        *out = Box::into_raw(Box::new(PvTree(next)));
        Ok(())
    })
}

/// Groups `n` patches into equivalence classes. `ids[i]` names `texts[i]`.
///
/// # Safety
/// `ids` and `texts` must each point to `n` NUL-terminated strings,
/// `profile` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pv_dedup(
    ids: *const *const c_char,
    texts: *const *const c_char,
    n: usize,
    profile: *const c_char,
    out: *mut *mut PvDedup,
) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let ids = slice_arg(ids, n)?;
        let texts = slice_arg(texts, n)?;
        let mut patches = Vec::with_capacity(n);
        for (i, (&id, &text)) in ids.iter().zip(texts).enumerate() {
            patches.push(CandidatePatch::new(str_arg(id)?, str_arg(text)?, i));
        }
        let report = deduplicate(&patches, str_arg(profile)?).map_err(from_patch)?;
        *out = Box::into_raw(Box::new(PvDedup(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from [`pv_dedup`].
#[no_mangle]
pub unsafe extern "C" fn pv_dedup_free(report: *mut PvDedup) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of equivalence classes; 0 for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pv_dedup_class_count(report: *const PvDedup) -> usize {
    report.as_ref().map_or(0, |r| r.0.classes.len())
}

/// Representative of the class containing `id`.
///
/// # Safety
/// `report` must be a live handle, `id` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pv_dedup_representative(
    report: *const PvDedup,
    id: *const c_char,
    out: *mut *mut c_char,
) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let r = report.as_ref().ok_or_else(null)?;
        let id = str_arg(id)?;
        let class = r.0.class_of(id).ok_or_else(|| (PvStatus::InvalidInput, format!("`{id}` is not in any class")))?;
        out_string(out, class.representative.clone())
    })
}

/// The whole report as JSON.
///
/// # Safety
/// `report` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pv_dedup_to_json(report: *const PvDedup, out: *mut *mut c_char) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let r = report.as_ref().ok_or_else(null)?;
        out_string(out, serde_json::to_string(&r.0).map_err(|e| (PvStatus::InvalidInput, e.to_string()))?)
    })
}

/// Builds a matrix from `rows * cols` row-major outcomes.
///
/// # Safety
/// `data` must point to `rows * cols` readable bools and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pv_matrix_new(data: *const bool, rows: usize, cols: usize, out: *mut *mut PvMatrix) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let total = rows.checked_mul(cols).ok_or((PvStatus::InvalidInput, "matrix too large".to_string()))?;
        let cells = slice_arg(data, total)?;
        let rows: Vec<Vec<bool>> = if cols == 0 { vec![Vec::new(); rows] } else { cells.chunks(cols).map(<[bool]>::to_vec).collect() };
        let m = CorrectnessMatrix::from_rows(rows).map_err(from_eval)?;
        *out = Box::into_raw(Box::new(PvMatrix(m)));
        Ok(())
    })
}

/// Parses the matrix JSON document `{"issues": [{"id", "outcomes"}]}`.
///
/// # Safety
/// `json` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pv_matrix_from_json(json: *const c_char, out: *mut *mut PvMatrix) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let m = CorrectnessMatrix::from_json(str_arg(json)?).map_err(from_eval)?;
        *out = Box::into_raw(Box::new(PvMatrix(m)));
        Ok(())
    })
}

/// # Safety
/// `matrix` must be NULL or a matrix handle.
#[no_mangle]
pub unsafe extern "C" fn pv_matrix_free(matrix: *mut PvMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PvBounds {
    pub oracle: f64,
    pub adversary: f64,
    pub average: f64,
    pub all_correct: f64,
    pub all_incorrect: f64,
}

/// # Safety
/// `matrix` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pv_matrix_bounds(matrix: *const PvMatrix, out: *mut PvBounds) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let m = matrix.as_ref().ok_or_else(null)?;
        let b = ensemble_bounds(&m.0).map_err(from_eval)?;
        let r = all_correct_ratios(&m.0).map_err(from_eval)?;
        *out = PvBounds {
            oracle: b.oracle,
            adversary: b.adversary,
            average: b.average,
            all_correct: r.all_correct,
            all_incorrect: r.all_incorrect,
        };
        Ok(())
    })
}

/// Confusion-matrix metrics. A metric whose denominator is zero has its
/// `has_` flag cleared and its value set to NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvConfusion {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub has_precision: bool,
    pub has_recall: bool,
    pub has_f1: bool,
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pv_confusion(tp: u64, tn: u64, fp: u64, fn_: u64, out: *mut PvConfusion) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let c = confusion_metrics(tp, tn, fp, fn_).map_err(from_eval)?;
        *out = PvConfusion {
            accuracy: c.accuracy,
            precision: c.precision.unwrap_or(f64::NAN),
            recall: c.recall.unwrap_or(f64::NAN),
            f1: c.f1.unwrap_or(f64::NAN),
            has_precision: c.precision.is_some(),
            has_recall: c.recall.is_some(),
            has_f1: c.f1.is_some(),
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvWilcoxon {
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Whether the exact distribution was used.
    pub exact: bool,
    pub significant: bool,
}

/// Two-sided signed-rank test on `n` pairs.
///
/// # Safety
/// `x` and `y` must point to `n` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pv_wilcoxon(x: *const f64, y: *const f64, n: usize, out: *mut PvWilcoxon) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let w = wilcoxon_signed_rank(slice_arg(x, n)?, slice_arg(y, n)?).map_err(from_eval)?;
        *out = PvWilcoxon {
            statistic: w.statistic,
            p_value: w.p_value,
            n: w.n,
            exact: w.method == patchvote::eval::WilcoxonMethod::Exact,
            significant: w.significant,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvCorrelations {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
}

/// # Safety
/// `x` and `y` must point to `n` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pv_correlations(x: *const f64, y: *const f64, n: usize, out: *mut PvCorrelations) -> PvStatus {
    guard(|| {
        check_out(out)?;
        let c = correlations(slice_arg(x, n)?, slice_arg(y, n)?).map_err(from_eval)?;
        *out = PvCorrelations { pearson_r: c.pearson_r, spearman_rho: c.spearman_rho, kendall_tau: c.kendall_tau };
        Ok(())
    })
}

/// Majority winner of `n_votes` votes, each a candidate index below
/// `n_candidates`. Ties are drawn with `seed`; `tie` reports whether one
/// happened.
///
/// # Safety
/// `votes` must point to `n_votes` values; `winner` and `tie` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pv_tally(
    votes: *const usize,
    n_votes: usize,
    n_candidates: usize,
    seed: u64,
    winner: *mut usize,
    tie: *mut bool,
) -> PvStatus {
    guard(|| {
        check_out(winner)?;
        check_out(tie)?;
        let votes = slice_arg(votes, n_votes)?;
        if n_candidates == 0 || votes.is_empty() {
            return Err((PvStatus::InvalidInput, "need at least one candidate and one vote".into()));
        }
        if let Some(bad) = votes.iter().find(|&&v| v >= n_candidates) {
            return Err((PvStatus::InvalidInput, format!("vote {bad} is out of range")));
        }
        let names: Vec<String> = (0..n_candidates).map(|i| i.to_string()).collect();
        let votes: Vec<Vote> = votes
            .iter()
            .enumerate()
            .map(|(k, &v)| Vote {
                voter_index: k,
                chosen: names[v].clone(),
                rationale: String::new(),
                rounds_used: 0,
                generated_tests: Vec::new(),
                forced: false,
            })
            .collect();
        let (w, _, t) = tally_winner(&names, &votes, seed);
        *winner = w.parse().expect("winner is a candidate index");
        *tie = t;
        Ok(())
    })
}

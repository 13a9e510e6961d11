//! C ABI over the icl-dst library.
//!
//! Structured values cross the boundary as UTF-8 JSON strings using the
//! library's serde encodings. Every fallible call returns an [`IclStatus`];
//! on failure [`icl_last_error`] describes the problem for the calling
//! thread. Strings written to `out` parameters are owned by the caller and
//! must be released with [`icl_string_free`]. Handles are opaque and must be
//! released with their matching `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use icl_dst::normalize::{fuzzy_ratio, normalize_prediction, CanonicalMap, NormalizerConfig};
use icl_dst::parser::parse_completion;
use icl_dst::pmi::pmi_score;
use icl_dst::prompt::canonicalize_completion;
use icl_dst::retrieval::{
    select_diverse_mmr, select_topk, EmbeddingRecord, EmbeddingVector, ExampleIndex, SelectionConfig,
};
use icl_dst::schema::{CanonicalSchema, EntityDatabase, Ontology};
use icl_dst::state::{apply_state_change, diff_states, sim_f1, DialogueState, SlotName, StateChange};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IclStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidInput = 4,
    Ambiguous = 5,
    Panic = 99,
}

/// Parsed domain and slot inventory.
pub struct IclSchema(CanonicalSchema);

/// Canonical-form map used to normalize predicted values.
pub struct IclNormalizer(CanonicalMap);

/// Cosine index over example embeddings.
pub struct IclIndex(ExampleIndex);

#[derive(Debug, Error)]
enum FfiError {
    #[error("argument `{0}` is null")]
    Null(&'static str),
    #[error("argument `{0}` is not valid UTF-8")]
    Utf8(&'static str),
    #[error("argument `{0}`: {1}")]
    Json(&'static str, String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Ambiguous(String),
}

impl FfiError {
    fn status(&self) -> IclStatus {
        match self {
            FfiError::Null(_) => IclStatus::NullArgument,
            FfiError::Utf8(_) => IclStatus::InvalidUtf8,
            FfiError::Json(..) => IclStatus::InvalidJson,
            FfiError::Invalid(_) => IclStatus::InvalidInput,
            FfiError::Ambiguous(_) => IclStatus::Ambiguous,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> IclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IclStatus::Ok
        }
        Ok(Err(e)) => {
            let status = e.status();
            set_last_error(e.to_string());
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            IclStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::Utf8(name))
}

unsafe fn json<T: DeserializeOwned>(p: *const c_char, name: &'static str) -> Result<T, FfiError> {
    serde_json::from_str(text(p, name)?).map_err(|e| FfiError::Json(name, e.to_string()))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or(FfiError::Null(name))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::Null("out"));
    }
    let c = CString::new(s).map_err(|_| FfiError::Invalid("output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), FfiError> {
    let s = serde_json::to_string(value).map_err(|e| FfiError::Invalid(e.to_string()))?;
    write_string(out, s)
}

unsafe fn write_value<T>(out: *mut T, value: T) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::Null("out"));
    }
    *out = value;
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), FfiError> {
    write_value(out, Box::into_raw(Box::new(value)))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn icl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned through an `out` parameter. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn icl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a schema document.
///
/// # Safety
/// `schema_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_schema_new(schema_json: *const c_char, out: *mut *mut IclSchema) -> IclStatus {
    guard(|| {
        let schema =
            CanonicalSchema::from_json(text(schema_json, "schema_json")?).map_err(|e| FfiError::Invalid(e.to_string()))?;
        write_handle(out, IclSchema(schema))
    })
}

/// # Safety
/// `schema` must come from [`icl_schema_new`] and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn icl_schema_free(schema: *mut IclSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Parses a completion into `{"parsed": delta}` or
/// `{"rejected": {"reason", "span"}}` JSON.
///
/// # Safety
/// Pointers must be valid; `text_in` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icl_parse_completion(
    schema: *const IclSchema,
    text_in: *const c_char,
    out_json: *mut *mut c_char,
) -> IclStatus {
    guard(|| {
        let schema = handle(schema, "schema")?;
        let outcome = parse_completion(text(text_in, "text")?, &schema.0);
        write_json(out_json, &outcome)
    })
}

/// Renders a delta as its canonical update line.
///
/// # Safety
/// `delta_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_canonicalize_completion(delta_json: *const c_char, out: *mut *mut c_char) -> IclStatus {
    guard(|| {
        let delta: StateChange = json(delta_json, "delta_json")?;
        write_string(out, canonicalize_completion(&delta))
    })
}

/// Applies a delta to a state; both JSON. Fails with `INVALID_INPUT` on an
/// unresolvable reference.
///
/// # Safety
/// Inputs must be NUL-terminated; `out_state_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_apply_state_change(
    state_json: *const c_char,
    delta_json: *const c_char,
    out_state_json: *mut *mut c_char,
) -> IclStatus {
    guard(|| {
        let state: DialogueState = json(state_json, "state_json")?;
        let delta: StateChange = json(delta_json, "delta_json")?;
        let next = apply_state_change(&state, &delta).map_err(|e| FfiError::Invalid(e.to_string()))?;
        write_json(out_state_json, &next)
    })
}

/// Minimal delta turning `prev` into `next`.
///
/// # Safety
/// Inputs must be NUL-terminated; `out_delta_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_diff_states(
    prev_json: *const c_char,
    next_json: *const c_char,
    out_delta_json: *mut *mut c_char,
) -> IclStatus {
    guard(|| {
        let prev: DialogueState = json(prev_json, "prev_json")?;
        let next: DialogueState = json(next_json, "next_json")?;
        write_json(out_delta_json, &diff_states(&prev, &next))
    })
}

/// Delta similarity in [0, 1].
///
/// # Safety
/// Inputs must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_sim_f1(a_json: *const c_char, b_json: *const c_char, out: *mut f64) -> IclStatus {
    guard(|| {
        let a: StateChange = json(a_json, "a_json")?;
        let b: StateChange = json(b_json, "b_json")?;
        write_value(out, sim_f1(&a, &b))
    })
}

/// Integer similarity in [0, 100] between two strings.
///
/// # Safety
/// Inputs must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_fuzzy_ratio(a: *const c_char, b: *const c_char, out: *mut u32) -> IclStatus {
    guard(|| write_value(out, fuzzy_ratio(text(a, "a")?, text(b, "b")?)))
}

/// `cond_logprob - beta * prior_logprob`.
#[no_mangle]
pub extern "C" fn icl_pmi_score(cond_logprob: f64, prior_logprob: f64, beta: f64) -> f64 {
    pmi_score(cond_logprob, prior_logprob, beta)
}

/// Builds a normalizer. `gold_counts_json` may be NULL; otherwise it maps
/// slot names to `{surface: count}`. With `strict` non-zero an ambiguous
/// surface fails the call with `AMBIGUOUS`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_normalizer_new(
    schema: *const IclSchema,
    database_json: *const c_char,
    ontology_json: *const c_char,
    gold_counts_json: *const c_char,
    strict: i32,
    out: *mut *mut IclNormalizer,
) -> IclStatus {
    guard(|| {
        let schema = handle(schema, "schema")?;
        let db = EntityDatabase::from_json(text(database_json, "database_json")?)
            .map_err(|e| FfiError::Invalid(e.to_string()))?;
        let ontology = Ontology::from_json(text(ontology_json, "ontology_json")?)
            .map_err(|e| FfiError::Invalid(e.to_string()))?;
        let counts: Option<BTreeMap<SlotName, BTreeMap<String, u64>>> = if gold_counts_json.is_null() {
            None
        } else {
            Some(json(gold_counts_json, "gold_counts_json")?)
        };
        let map = CanonicalMap::build(&schema.0, &db, &ontology, counts.as_ref(), NormalizerConfig::default());
        if strict != 0 {
            if let Some(a) = map.audit().ambiguities.first() {
                return Err(FfiError::Ambiguous(format!(
                    "{:?} for {} links to {:?}",
                    a.surface, a.slot, a.candidates
                )));
            }
        }
        write_handle(out, IclNormalizer(map))
    })
}

/// # Safety
/// `map` must come from [`icl_normalizer_new`] and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn icl_normalizer_free(map: *mut IclNormalizer) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Rewrites every literal of a delta to its preferred surface form.
///
/// # Safety
/// Pointers must be valid; `delta_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_normalize_prediction(
    map: *const IclNormalizer,
    delta_json: *const c_char,
    out_delta_json: *mut *mut c_char,
) -> IclStatus {
    guard(|| {
        let map = handle(map, "map")?;
        let delta: StateChange = json(delta_json, "delta_json")?;
        write_json(out_delta_json, &normalize_prediction(&delta, &map.0))
    })
}

/// The normalizer's link and ambiguity report as JSON.
///
/// # Safety
/// `map` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_normalizer_audit(map: *const IclNormalizer, out_json: *mut *mut c_char) -> IclStatus {
    guard(|| write_json(out_json, handle(map, "map")?.0.audit()))
}

/// Builds an index from a JSON array of `{"id", "vector"}` records.
///
/// # Safety
/// `records_json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_index_new(records_json: *const c_char, out: *mut *mut IclIndex) -> IclStatus {
    guard(|| {
        let records: Vec<EmbeddingRecord> = json(records_json, "records_json")?;
        let index = ExampleIndex::build(records).map_err(|e| FfiError::Invalid(e.to_string()))?;
        write_handle(out, IclIndex(index))
    })
}

/// # Safety
/// `index` must come from [`icl_index_new`] and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn icl_index_free(index: *mut IclIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Diversity-aware selection of `k` examples from the `window` nearest to
/// the query vector (a JSON number array). `alpha = 0` gives plain top-k.
/// Writes `{"members": [{"id", "relevance", "marginal"}]}`.
///
/// # Safety
/// Pointers must be valid; `query_json` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_index_select(
    index: *const IclIndex,
    query_json: *const c_char,
    k: usize,
    alpha: f64,
    window: usize,
    out_json: *mut *mut c_char,
) -> IclStatus {
    guard(|| {
        let index = handle(index, "index")?;
        let q: Vec<f64> = json(query_json, "query_json")?;
        if q.len() != index.0.dim() {
            return Err(FfiError::Invalid(format!(
                "query has {} dimensions, index has {}",
                q.len(),
                index.0.dim()
            )));
        }
        let query = EmbeddingVector::new(q).map_err(|e| FfiError::Invalid(e.to_string()))?;
        let set = if alpha == 0.0 && window <= k {
            select_topk(&index.0, &query, k)
        } else {
            let cfg = SelectionConfig::new(k, alpha, window).map_err(|e| FfiError::Invalid(e.to_string()))?;
            select_diverse_mmr(&index.0, &query, &cfg)
        };
        write_json(out_json, &set)
    })
}

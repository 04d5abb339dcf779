//! C ABI over `msnp`.
//!
//! Conventions:
//! - Every fallible call returns an [`MsnpStatus`]; results come back
//!   through out-pointers.
//! - Strings in are NUL-terminated UTF-8. Strings out are allocated here and
//!   must be released with [`msnp_string_free`].
//! - After a failure, [`msnp_last_error_message`] describes it. The message
//!   is per thread and stays valid until the next failing call on that thread.
//! - Panics never cross the boundary; they surface as `MSNP_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use msnp::predictor::{parse_context_set, parse_rules, read_records_csv};
use msnp::simnet::{run_model, Model};
use msnp::trust::{rating_similarity, trust_public, Scheme};
use msnp::{ContextValue, PeerId, PredictionModel, ReputationData, SemanticType, SimConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsnpStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// An input string was not UTF-8.
    InvalidUtf8 = 2,
    /// An input document (CSV, JSON, rules, config) did not parse.
    Parse = 3,
    /// Inputs parsed but the computation rejected them.
    Invalid = 4,
    /// No recommender or no informative context: nothing to report.
    NoResult = 5,
    Panic = 6,
}

/// A trained predictor. Opaque to C.
pub struct MsnpPredictor {
    model: PredictionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MsnpStatus, String);

impl Failure {
    fn parse(e: impl std::fmt::Display) -> Self {
        Failure(MsnpStatus::Parse, e.to_string())
    }

    fn invalid(e: impl std::fmt::Display) -> Self {
        Failure(MsnpStatus::Invalid, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording any failure or panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsnpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsnpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("panic: {msg}"));
            MsnpStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MsnpStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(MsnpStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// # Safety
/// `out` is null or valid for writes.
unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(MsnpStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(Failure::invalid)?;
    *out = c.into_raw();
    Ok(())
}

fn null_check<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(MsnpStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Builds a predictor from a records CSV (`qid,ctype=value;...` rows with a
/// header line).
///
/// # Safety
/// `records_csv` is a NUL-terminated string; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn msnp_predictor_from_records_csv(
    records_csv: *const c_char,
    out: *mut *mut MsnpPredictor,
) -> MsnpStatus {
    guard(|| {
        null_check(out, "out")?;
        let csv = text(records_csv, "records_csv")?;
        let records = read_records_csv(csv.as_bytes()).map_err(Failure::parse)?;
        let handle = Box::new(MsnpPredictor {
            model: PredictionModel::new(records),
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Replaces the predictor's importance, filter and override rules with the
/// ones in `rules_text`.
///
/// # Safety
/// `predictor` comes from [`msnp_predictor_from_records_csv`]; `rules_text`
/// is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn msnp_predictor_set_rules(
    predictor: *mut MsnpPredictor,
    rules_text: *const c_char,
) -> MsnpStatus {
    guard(|| {
        null_check(predictor, "predictor")?;
        let rules = parse_rules(text(rules_text, "rules_text")?).map_err(Failure::parse)?;
        let p = &mut *predictor;
        p.model = std::mem::take(&mut p.model).with_rules(rules);
        Ok(())
    })
}

/// Ranks candidate queries for `contexts` (`ctype=value;...`). Writes a JSON
/// array of `{"qid", "score"}` objects, best first.
///
/// # Safety
/// `predictor` is a live handle; `contexts` is a NUL-terminated string;
/// `ranking_json` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn msnp_predictor_predict(
    predictor: *const MsnpPredictor,
    contexts: *const c_char,
    ranking_json: *mut *mut c_char,
) -> MsnpStatus {
    guard(|| {
        null_check(predictor, "predictor")?;
        null_check(ranking_json, "ranking_json")?;
        let current: BTreeSet<ContextValue> =
            parse_context_set(text(contexts, "contexts")?).map_err(Failure::parse)?;
        let prediction = (*predictor)
            .model
            .predict(&current)
            .map_err(|e| Failure(MsnpStatus::NoResult, e.to_string()))?;
        let rows: Vec<serde_json::Value> = prediction
            .ranking
            .iter()
            .map(|(q, s)| serde_json::json!({ "qid": q.qid, "score": s }))
            .collect();
        put_string(ranking_json, serde_json::Value::Array(rows).to_string())
    })
}

/// Releases a predictor. Null is ignored.
///
/// # Safety
/// `predictor` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msnp_predictor_free(predictor: *mut MsnpPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Runs one discovery simulation. `config_text` holds `key = value` lines
/// (empty for defaults); `model` is `pull`, `push`, `prefpush` or
/// `hybrid<fraction>`. Writes the result as a JSON object.
///
/// # Safety
/// Both inputs are NUL-terminated strings; `result_json` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn msnp_simulate(
    config_text: *const c_char,
    model: *const c_char,
    result_json: *mut *mut c_char,
) -> MsnpStatus {
    guard(|| {
        null_check(result_json, "result_json")?;
        let cfg = SimConfig::parse(text(config_text, "config_text")?).map_err(Failure::parse)?;
        let model: Model = text(model, "model")?.parse().map_err(Failure::parse)?;
        let result = run_model(&cfg, model).map_err(Failure::invalid)?;
        put_string(
            result_json,
            serde_json::to_string(&result).map_err(Failure::invalid)?,
        )
    })
}

fn parse_rd(json: &str) -> Result<ReputationData, Failure> {
    ReputationData::from_json(json).map_err(Failure::parse)
}

/// Pearson similarity of two RDs given as JSON objects.
///
/// # Safety
/// Both inputs are NUL-terminated strings; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn msnp_rd_similarity(
    rd_a_json: *const c_char,
    rd_b_json: *const c_char,
    out: *mut f64,
) -> MsnpStatus {
    guard(|| {
        null_check(out, "out")?;
        let a = parse_rd(text(rd_a_json, "rd_a_json")?)?;
        let b = parse_rd(text(rd_b_json, "rd_b_json")?)?;
        *out = rating_similarity(&a, &b).map_err(|e| Failure(MsnpStatus::NoResult, e.to_string()))?;
        Ok(())
    })
}

/// Trust in `provider`'s service from proximal strangers. `proximal_json` is
/// a JSON array of RDs; `scheme` is `proposed`, `naive`, `exponly` or
/// `creditonly`. Writes the verdict as a JSON object.
///
/// # Safety
/// All string inputs are NUL-terminated; `verdict_json` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn msnp_trust_public(
    provider: *const c_char,
    sname: *const c_char,
    stype: *const c_char,
    proximal_json: *const c_char,
    scheme: *const c_char,
    verdict_json: *mut *mut c_char,
) -> MsnpStatus {
    guard(|| {
        null_check(verdict_json, "verdict_json")?;
        let provider = PeerId::new(text(provider, "provider")?).map_err(Failure::invalid)?;
        let sname = text(sname, "sname")?;
        let stype = SemanticType::new(text(stype, "stype")?);
        let rds: Vec<ReputationData> =
            serde_json::from_str(text(proximal_json, "proximal_json")?).map_err(Failure::parse)?;
        for rd in &rds {
            rd.validate().map_err(Failure::parse)?;
        }
        let scheme: Scheme = text(scheme, "scheme")?.parse().map_err(Failure::parse)?;
        let public = scheme
            .public()
            .ok_or_else(|| Failure::invalid(format!("{scheme} is not a public scheme")))?;
        let refs: Vec<&ReputationData> = rds.iter().collect();
        let verdict = trust_public(&provider, sname, &stype, &refs, public).map_err(|e| match e {
            msnp::TrustError::NoRecommender => Failure(MsnpStatus::NoResult, e.to_string()),
            _ => Failure::invalid(e),
        })?;
        put_string(
            verdict_json,
            serde_json::to_string(&verdict).map_err(Failure::invalid)?,
        )
    })
}

/// Message for the last failure on this thread, or null if none. Owned by
/// the library; do not free.
#[no_mangle]
pub extern "C" fn msnp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn msnp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

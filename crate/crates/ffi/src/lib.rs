//! C ABI for loading a trained model session, scoring and explaining pairs,
//! and reading embedding stores.
//!
//! Every function returns an [`AspreStatus`]; on failure the message is
//! available from [`aspre_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings handed out by the library are released with [`aspre_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use aspre_core::cli::{CliError, RunConfig, Session};
use aspre_core::embed::EmbeddingStore;
use aspre_core::interpret::{render, Format};

/// Outcome of a call. Values 1 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AspreStatus {
    Ok = 0,
    Runtime = 1,
    InvalidArgument = 2,
    MissingInput = 3,
    Schema = 4,
    Inconsistent = 5,
    Panic = 6,
}

/// Report layouts accepted by [`aspre_session_explain`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AspreFormat {
    Json = 0,
    Markdown = 1,
}

/// Score of one (user, item) pair and its additive parts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AsprePrediction {
    /// Clamped to the rating range.
    pub s_hat: f64,
    pub pre_clamp: f64,
    pub bias_term: f64,
    pub implicit_term: f64,
    pub explicit_term: f64,
    pub cold_user: bool,
    pub cold_item: bool,
}

/// A loaded model with the data it scores against.
pub struct AspreSession {
    inner: Session,
}

/// A read-only embedding store.
pub struct AspreStore {
    inner: EmbeddingStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AspreStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e.code {
            2 => AspreStatus::InvalidArgument,
            3 => AspreStatus::MissingInput,
            4 => AspreStatus::Schema,
            5 => AspreStatus::Inconsistent,
            _ => AspreStatus::Runtime,
        };
        Failure(status, e.message)
    }
}

impl From<aspre_core::Error> for Failure {
    fn from(e: aspre_core::Error) -> Self {
        CliError::from(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AspreStatus::InvalidArgument, message.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AspreStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AspreStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AspreStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(invalid(format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aspre_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn aspre_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn aspre_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a session from a run configuration file; relative paths in it are
/// resolved against the file's directory.
///
/// # Safety
/// `config_path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_session_open(config_path: *const c_char, out: *mut *mut AspreSession) -> AspreStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(text(config_path, "config_path")?);
        let session = Session::open(RunConfig::load(&path)?)?;
        *out = Box::into_raw(Box::new(AspreSession { inner: session }));
        Ok(())
    })
}

/// # Safety
/// `session` is null or a live handle from [`aspre_session_open`].
#[no_mangle]
pub unsafe extern "C" fn aspre_session_free(session: *mut AspreSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Number of aspects the session's model scores.
///
/// # Safety
/// `session` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_session_num_aspects(session: *const AspreSession, out: *mut usize) -> AspreStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| invalid("session is null"))?;
        out_ptr(out, "out")?;
        *out = s.inner.model.num_aspects();
        Ok(())
    })
}

/// Scores one pair. Unknown users or items are scored as cold start.
///
/// # Safety
/// `session` is a live handle, `user` and `item` NUL-terminated strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_session_predict(
    session: *const AspreSession,
    user: *const c_char,
    item: *const c_char,
    out: *mut AsprePrediction,
) -> AspreStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| invalid("session is null"))?;
        let (u, t) = (text(user, "user")?, text(item, "item")?);
        out_ptr(out, "out")?;
        let p = s.inner.predict(u, t)?;
        *out = AsprePrediction {
            s_hat: p.s_hat,
            pre_clamp: p.pre_clamp,
            bias_term: p.bias_term,
            implicit_term: p.implicit_term,
            explicit_term: p.explicit_term,
            cold_user: p.cold_user,
            cold_item: p.cold_item,
        };
        Ok(())
    })
}

/// Renders the per-aspect explanation of one pair; `format` is an [`AspreFormat`] value.
/// Free the result with [`aspre_string_free`].
///
/// # Safety
/// As for [`aspre_session_predict`]; `out` receives a new string.
#[no_mangle]
pub unsafe extern "C" fn aspre_session_explain(
    session: *const AspreSession,
    user: *const c_char,
    item: *const c_char,
    format: u32,
    out: *mut *mut c_char,
) -> AspreStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let s = session.as_ref().ok_or_else(|| invalid("session is null"))?;
        let (u, t) = (text(user, "user")?, text(item, "item")?);
        let report = s.inner.explain(u, t)?;
        let format = match format {
            f if f == AspreFormat::Json as u32 => Format::Json,
            f if f == AspreFormat::Markdown as u32 => Format::Markdown,
            f => return Err(invalid(format!("unknown format {f}"))),
        };
        let rendered = render(&report, format)?;
        *out = CString::new(rendered)
            .map_err(|_| Failure(AspreStatus::Runtime, "rendered report holds a NUL byte".into()))?
            .into_raw();
        Ok(())
    })
}

/// Opens an embedding store directory.
///
/// # Safety
/// `dir` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_store_open(dir: *const c_char, out: *mut *mut AspreStore) -> AspreStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let store = EmbeddingStore::open(text(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(AspreStore { inner: store }));
        Ok(())
    })
}

/// # Safety
/// `store` is null or a live handle from [`aspre_store_open`].
#[no_mangle]
pub unsafe extern "C" fn aspre_store_free(store: *mut AspreStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of reviews in the store.
///
/// # Safety
/// `store` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_store_len(store: *const AspreStore, out: *mut usize) -> AspreStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| invalid("store is null"))?;
        out_ptr(out, "out")?;
        *out = s.inner.len();
        Ok(())
    })
}

/// Row count (start and end markers included) and width of one review's embeddings.
///
/// # Safety
/// `store` is a live handle, `review_id` a NUL-terminated string, both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_store_shape(
    store: *const AspreStore,
    review_id: *const c_char,
    rows: *mut usize,
    dim: *mut usize,
) -> AspreStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| invalid("store is null"))?;
        let id = text(review_id, "review_id")?;
        out_ptr(rows, "rows")?;
        out_ptr(dim, "dim")?;
        let r = s.inner.get(id)?;
        *rows = r.sequence.rows;
        *dim = r.sequence.dim;
        Ok(())
    })
}

/// Checks stored row norms against the checksum sidecar; `checked` receives the review count.
///
/// # Safety
/// `store` is a live handle; `checked` is writable.
#[no_mangle]
pub unsafe extern "C" fn aspre_store_verify(store: *const AspreStore, tolerance: f64, checked: *mut usize) -> AspreStatus {
    guard(|| {
        let s = store.as_ref().ok_or_else(|| invalid("store is null"))?;
        out_ptr(checked, "checked")?;
        *checked = s.inner.verify_checksums(tolerance)?;
        Ok(())
    })
}

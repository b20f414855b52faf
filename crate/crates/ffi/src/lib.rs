//! C ABI over the pvminer codebook, completion parser and prompt renderer.
//!
//! Every function returns a `PvStatus`. On failure a message is available
//! from `pv_last_error` on the same thread until the next call. Strings
//! handed out by the library must be released with `pv_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pvminer::codebook::{Codebook, CodebookError, Direction};
use pvminer::corpus::Message;
use pvminer::parse::{validate_completion, Policy, ReportLine};
use pvminer::prompt::{render_prompt, PromptTemplate, TemplateKind};
use pvminer::sftprep::serialize_annotations;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    InvalidCodebook = 5,
    Internal = 6,
}

/// Opaque codebook handle.
pub struct PvCodebook {
    inner: Codebook,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult<T> = Result<T, (PvStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PvStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((PvStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (PvStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn codebook_arg<'a>(p: *const PvCodebook) -> FfiResult<&'a Codebook> {
    p.as_ref().map(|h| &h.inner).ok_or((PvStatus::NullArgument, "codebook is null".into()))
}

fn out_arg<T>(p: *mut T, name: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((PvStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn direction_arg(s: &str) -> FfiResult<Direction> {
    Direction::parse(s).ok_or((PvStatus::InvalidArgument, format!("direction must be Y or N, got `{s}`")))
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s).map(CString::into_raw).map_err(|_| (PvStatus::Internal, "output contains NUL".into()))
}

fn codebook_status(e: &CodebookError) -> PvStatus {
    match e {
        CodebookError::Io(_) => PvStatus::Io,
        _ => PvStatus::InvalidCodebook,
    }
}

fn new_handle(cb: Codebook) -> *mut PvCodebook {
    Box::into_raw(Box::new(PvCodebook { inner: cb }))
}

/// Message of the last failed call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn pv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a handle for the built-in codebook.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_default(out: *mut *mut PvCodebook) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = new_handle(Codebook::default_pvminer());
        Ok(())
    })
}

/// Loads a codebook from a TOML file.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_load(path: *const c_char, out: *mut *mut PvCodebook) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let cb = Codebook::load(path).map_err(|e| (codebook_status(&e), e.to_string()))?;
        *out = new_handle(cb);
        Ok(())
    })
}

/// Parses a codebook from TOML text.
///
/// # Safety
/// `source` must be null or a NUL-terminated string; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_from_toml(source: *const c_char, out: *mut *mut PvCodebook) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let source = str_arg(source, "source")?;
        let cb = Codebook::from_toml_str(source).map_err(|e| (codebook_status(&e), e.to_string()))?;
        *out = new_handle(cb);
        Ok(())
    })
}

/// Releases a codebook handle. Null is ignored.
///
/// # Safety
/// `cb` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_free(cb: *mut PvCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// Number of Codes in the codebook.
///
/// # Safety
/// `cb` must be null or a live handle; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_code_count(cb: *const PvCodebook, out: *mut usize) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = codebook_arg(cb)?.codes().len();
        Ok(())
    })
}

/// The codebook serialized as TOML.
///
/// # Safety
/// `cb` must be null or a live handle; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_to_toml(cb: *const PvCodebook, out: *mut *mut c_char) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = into_c_string(codebook_arg(cb)?.to_toml_string())?;
        Ok(())
    })
}

/// Whether `subcode` (or an alias of it) belongs to `code`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_is_valid_pair(
    cb: *const PvCodebook,
    code: *const c_char,
    subcode: *const c_char,
    out: *mut bool,
) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cb = codebook_arg(cb)?;
        *out = cb.is_valid_pair(str_arg(code, "code")?, str_arg(subcode, "subcode")?);
        Ok(())
    })
}

/// Whether `code` may be assigned to a message with `direction` ("Y" or "N").
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_codebook_is_direction_consistent(
    cb: *const PvCodebook,
    code: *const c_char,
    direction: *const c_char,
    out: *mut bool,
) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cb = codebook_arg(cb)?;
        let d = direction_arg(str_arg(direction, "direction")?)?;
        *out = cb.is_direction_consistent(str_arg(code, "code")?, d);
        Ok(())
    })
}

/// Validates a raw completion for a message. Writes a JSON object with
/// `outcome`, `failure_class`, `annotations` and `issues`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out_json` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_validate_completion(
    cb: *const PvCodebook,
    completion: *const c_char,
    message: *const c_char,
    direction: *const c_char,
    strict: bool,
    out_json: *mut *mut c_char,
) -> PvStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let cb = codebook_arg(cb)?;
        let m = Message::new("", str_arg(message, "message")?, direction_arg(str_arg(direction, "direction")?)?);
        let policy = if strict { Policy::Strict } else { Policy::Lenient };
        let report = validate_completion(str_arg(completion, "completion")?, &m, cb, policy);
        *out_json = into_c_string(ReportLine::new("", &report).to_json())?;
        Ok(())
    })
}

/// Validates a completion leniently and writes the accepted annotations in
/// canonical serialized form.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_canonicalize_completion(
    cb: *const PvCodebook,
    completion: *const c_char,
    message: *const c_char,
    direction: *const c_char,
    out: *mut *mut c_char,
) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cb = codebook_arg(cb)?;
        let m = Message::new("", str_arg(message, "message")?, direction_arg(str_arg(direction, "direction")?)?);
        let report = validate_completion(str_arg(completion, "completion")?, &m, cb, Policy::Lenient);
        *out = into_c_string(serialize_annotations(&report.annotations))?;
        Ok(())
    })
}

/// Renders a zero-shot prompt. `template` is "baseline" or "engineered".
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pv_render_prompt(
    cb: *const PvCodebook,
    template: *const c_char,
    message: *const c_char,
    direction: *const c_char,
    out: *mut *mut c_char,
) -> PvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cb = codebook_arg(cb)?;
        let kind: TemplateKind = str_arg(template, "template")?
            .parse()
            .map_err(|e| (PvStatus::InvalidArgument, format!("{e}")))?;
        let m = Message::new("", str_arg(message, "message")?, direction_arg(str_arg(direction, "direction")?)?);
        *out = into_c_string(render_prompt(&PromptTemplate::builtin(kind), cb, &m, &[]))?;
        Ok(())
    })
}

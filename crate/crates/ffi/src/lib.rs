//! C interface. Objects cross the boundary as opaque handles, every call
//! returns an [`HfStatus`], and the message of the last failure on the calling
//! thread is available from [`hf_last_error`].
//!
//! Label sequences are `int32_t` arrays of category codes in the chosen
//! [`HfView`]; `-1` marks an unlabelled sample.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use headfree::error::Error;
use headfree::features::Directions;
use headfree::forest::{classify_rf, ForestModel};
use headfree::io::{read_recording, Config};
use headfree::metrics::{elc_match, elc_symmetric, event_error_rate, sample_scores};
use headfree::model::{Recording, View};
use headfree::rnn::{classify_rnn, RnnModel};
use headfree::signal::{make_velocity_trace, FilterConfig, VelocityTrace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    LengthMismatch = 3,
    TooShort = 4,
    Parse = 5,
    SchemaMismatch = 6,
    Diverged = 7,
    Format = 8,
    Io = 9,
    Utf8 = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfView {
    /// F, P, S
    Collapsed = 0,
    /// F, P, S, B
    CollapsedWithBlink = 1,
    /// FS, FT, P, S
    Full = 2,
}

impl From<HfView> for View {
    fn from(v: HfView) -> View {
        match v {
            HfView::Collapsed => View::Collapsed,
            HfView::CollapsedWithBlink => View::CollapsedWithBlink,
            HfView::Full => View::Full,
        }
    }
}

pub struct HfRecording(Recording);

pub struct HfTrace(VelocityTrace);

pub enum HfModel {
    Forest(ForestModel),
    Rnn(RnnModel),
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HfStatus {
    match e {
        Error::InvalidInput(_) => HfStatus::InvalidInput,
        Error::LengthMismatch { .. } => HfStatus::LengthMismatch,
        Error::TooShort { .. } => HfStatus::TooShort,
        Error::Parse { .. } => HfStatus::Parse,
        Error::SchemaMismatch { .. } => HfStatus::SchemaMismatch,
        Error::Diverged { .. } => HfStatus::Diverged,
        Error::Format(_) => HfStatus::Format,
        Error::Io(_) => HfStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HfStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HfStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_error("string is not valid UTF-8".into());
            HfStatus::Utf8
        }
        Err(_) => {
            set_error("internal panic".into());
            HfStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn codes(p: *const i32, n: usize, what: &'static str) -> Result<Vec<Option<usize>>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&c| match c {
            -1 => Ok(None),
            c if c >= 0 => Ok(Some(c as usize)),
            c => Err(Fail::Core(Error::InvalidInput(format!("category code {c}")))),
        })
        .collect()
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

fn filter_config(toml: Option<&str>) -> Result<FilterConfig, Fail> {
    Ok(match toml {
        Some(t) => Config::from_toml(t)?.filter,
        None => FilterConfig::default(),
    })
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a recording file held in `csv`. `rate_hz <= 0` infers the rate
/// from the timestamps.
///
/// # Safety
/// `csv` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_recording_parse(csv: *const c_char, rate_hz: f64, out: *mut *mut HfRecording) -> HfStatus {
    guard(|| {
        let t = text(csv, "csv")?;
        let rec = read_recording(t, (rate_hz > 0.0).then_some(rate_hz))?;
        put(out, Box::into_raw(Box::new(HfRecording(rec))), "out")
    })
}

/// # Safety
/// `rec` must be null or a live handle from [`hf_recording_parse`].
#[no_mangle]
pub unsafe extern "C" fn hf_recording_free(rec: *mut HfRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// # Safety
/// `rec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_recording_len(rec: *const HfRecording) -> usize {
    rec.as_ref().map_or(0, |r| r.0.len())
}

/// Conditions a recording into velocity channels. `config_toml` may be null
/// for the default filter.
///
/// # Safety
/// `rec` must be a live handle, `config_toml` null or nul-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hf_trace_compute(
    rec: *const HfRecording,
    config_toml: *const c_char,
    out: *mut *mut HfTrace,
) -> HfStatus {
    guard(|| {
        let rec = handle(rec, "rec")?;
        let cfg = if config_toml.is_null() {
            filter_config(None)?
        } else {
            filter_config(Some(text(config_toml, "config_toml")?))?
        };
        let t = make_velocity_trace(&rec.0, &cfg)?;
        put(out, Box::into_raw(Box::new(HfTrace(t))), "out")
    })
}

/// # Safety
/// `trace` must be null or a live handle from [`hf_trace_compute`].
#[no_mangle]
pub unsafe extern "C" fn hf_trace_free(trace: *mut HfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hf_trace_len(trace: *const HfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// Copies channel `channel` (0 eye_abs, 1 head_abs, 2 eye_az, 3 head_az,
/// 4 eye_el, 5 head_el; °/s) into `out`, which holds `len` doubles.
///
/// # Safety
/// `trace` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hf_trace_channel(trace: *const HfTrace, channel: u32, out: *mut f64, len: usize) -> HfStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.0;
        let ch = t
            .channels()
            .get(channel as usize)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("channel {channel} outside 0..6")))?;
        if len != ch.len() {
            return Err(Error::LengthMismatch {
                what: "output buffer vs trace",
                left: len,
                right: ch.len(),
            }
            .into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(ch);
        Ok(())
    })
}

/// Loads a serialized forest or recurrent network.
///
/// # Safety
/// `bytes` must be valid for `len` reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_load(bytes: *const u8, len: usize, out: *mut *mut HfModel) -> HfStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(Fail::Null("bytes"));
        }
        let b = std::slice::from_raw_parts(bytes, len);
        let model = match headfree::container::read_header(b)?.kind {
            headfree::container::ModelKind::Forest => HfModel::Forest(ForestModel::from_bytes(b)?),
            headfree::container::ModelKind::Rnn => HfModel::Rnn(RnnModel::from_bytes(b)?),
        };
        put(out, Box::into_raw(Box::new(model)), "out")
    })
}

/// # Safety
/// `model` must be null or a live handle from [`hf_model_load`].
#[no_mangle]
pub unsafe extern "C" fn hf_model_free(model: *mut HfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classifies every sample of `trace` (computed from `rec`) into collapsed
/// codes (0 fixation, 1 pursuit, 2 saccade, -1 unlabelled).
///
/// # Safety
/// Handles must be live and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hf_model_classify(
    model: *const HfModel,
    rec: *const HfRecording,
    trace: *const HfTrace,
    out: *mut i32,
    len: usize,
) -> HfStatus {
    guard(|| {
        let (model, rec, trace) = (handle(model, "model")?, handle(rec, "rec")?, handle(trace, "trace")?);
        let labels = match model {
            HfModel::Forest(m) => {
                let (eye, head) = (rec.0.eye_dirs(), rec.0.head_dirs());
                classify_rf(m, &trace.0, &Directions { eye: &eye, head: &head })?
            }
            HfModel::Rnn(m) => classify_rnn(m, &trace.0)?,
        };
        let cats = labels.categories(View::Collapsed);
        if len != cats.len() {
            return Err(Error::LengthMismatch {
                what: "output buffer vs labels",
                left: len,
                right: cats.len(),
            }
            .into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, c) in dst.iter_mut().zip(cats) {
            *d = c.map_or(-1, |c| c as i32);
        }
        Ok(())
    })
}

/// Sample-level Cohen's kappa over samples labelled in both sequences.
///
/// # Safety
/// `reference` and `test` must be valid for `n` reads; `kappa` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_sample_kappa(
    reference: *const i32,
    test: *const i32,
    n: usize,
    view: HfView,
    kappa: *mut f64,
) -> HfStatus {
    guard(|| {
        let (r, t) = (codes(reference, n, "reference")?, codes(test, n, "test")?);
        let s = sample_scores(&r, &t, &View::from(view).taxonomy())?;
        put(kappa, s.kappa, "kappa")
    })
}

/// Length-normalized Levenshtein distance between the event strings.
///
/// # Safety
/// `reference` and `test` must be valid for `n` reads; `eer` writable.
#[no_mangle]
pub unsafe extern "C" fn hf_event_error_rate(reference: *const i32, test: *const i32, n: usize, eer: *mut f64) -> HfStatus {
    guard(|| {
        let (r, t) = (codes(reference, n, "reference")?, codes(test, n, "test")?);
        put(eer, event_error_rate(&r, &t)?, "eer")
    })
}

/// Event-linked comparison. Writes the kappa (NaN when undefined) and, when
/// `report_json` is non-null, the full report as a string to free with
/// [`hf_string_free`]. `symmetric` runs both directions.
///
/// # Safety
/// `reference` and `test` must be valid for `n` reads; `kappa` writable;
/// `report_json` null or writable.
#[no_mangle]
pub unsafe extern "C" fn hf_elc(
    reference: *const i32,
    test: *const i32,
    n: usize,
    view: HfView,
    rate_hz: f64,
    symmetric: bool,
    kappa: *mut f64,
    report_json: *mut *mut c_char,
) -> HfStatus {
    guard(|| {
        let (r, t) = (codes(reference, n, "reference")?, codes(test, n, "test")?);
        let tax = View::from(view).taxonomy();
        let cfg = Default::default();
        let (k, json) = if symmetric {
            let rep = elc_symmetric(&r, &t, &tax, rate_hz, &cfg)?;
            (rep.kappa, serde_json::to_string(&rep))
        } else {
            let rep = elc_match(&r, &t, &tax, rate_hz, &cfg)?;
            (rep.kappa, serde_json::to_string(&rep))
        };
        put(kappa, k.unwrap_or(f64::NAN), "kappa")?;
        if !report_json.is_null() {
            let s = json.map_err(|e| Error::Format(e.to_string()))?;
            let c = CString::new(s).map_err(|e| Error::Format(e.to_string()))?;
            report_json.write(c.into_raw());
        }
        Ok(())
    })
}

//! C ABI over the recitrack tracker.
//!
//! Every fallible function returns an `RtStatus`. On failure the message is
//! kept per thread and can be read with `rt_last_error`. Panics never cross
//! the boundary; they are reported as `RT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use recitrack::eval::compute_metrics;
use recitrack::geometry::BoundingBox;
use recitrack::model::Frame;
use recitrack::tracker::{Tracker, TrackerConfig};
use recitrack::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    InsufficientSamples = 4,
    NonFinite = 5,
    Io = 6,
    Internal = 7,
    Panic = 8,
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RtBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Per-frame tracking output.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RtFrameResult {
    /// Reported box, refined when regression applied.
    pub output: RtBox,
    /// Highest-scoring proposal before regression.
    pub predicted: RtBox,
    /// Positive-class probability of `predicted`.
    pub probability: f64,
    /// 1 when a model update ran after this frame.
    pub updated: i32,
}

/// Summary scores of a box sequence.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RtMetrics {
    pub cle: f64,
    pub dp20: f64,
    pub auc: f64,
    pub os50: f64,
}

/// Opaque tracker handle.
pub struct RtTracker {
    inner: Tracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RtStatus {
    match e {
        Error::Config(_) | Error::DegenerateBox { .. } => RtStatus::InvalidConfig,
        Error::InsufficientSamples { .. } => RtStatus::InsufficientSamples,
        Error::NonFinite(_) => RtStatus::NonFinite,
        Error::Io { .. } | Error::Image { .. } | Error::Format { .. } => RtStatus::Io,
        Error::Shape { .. } | Error::TensorSize { .. } => RtStatus::InvalidArgument,
        Error::Json(_) => RtStatus::InvalidConfig,
        _ => RtStatus::Internal,
    }
}

enum Failure {
    Status(RtStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(RtStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RtStatus::Ok
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            RtStatus::Panic
        }
    }
}

fn to_box(b: &RtBox) -> Result<BoundingBox, Failure> {
    Ok(BoundingBox::new(b.x, b.y, b.w, b.h)?)
}

fn from_box(b: BoundingBox) -> RtBox {
    RtBox {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
    }
}

/// # Safety
/// `pixels` must point to `width * height * channels` bytes.
unsafe fn frame_from(
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
) -> Result<Frame, Failure> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Failure::Status(RtStatus::InvalidArgument, "frame size overflows".into()))?;
    if n == 0 {
        return Err(Failure::Status(RtStatus::InvalidArgument, "empty frame".into()));
    }
    let data = slice::from_raw_parts(pixels, n).iter().map(|&v| v as f32).collect();
    Ok(Frame::new(width, height, channels, data)?)
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn rt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Intersection over union of two boxes; negative when either box is degenerate.
#[no_mangle]
pub extern "C" fn rt_iou(a: RtBox, b: RtBox) -> f64 {
    match (to_box(&a), to_box(&b)) {
        (Ok(a), Ok(b)) => a.iou(&b),
        _ => -1.0,
    }
}

/// Creates a tracker on the first frame.
///
/// `pixels` holds 8-bit row-major samples with `channels` (1 or 3) values per
/// pixel. `config_json` is a tracker configuration in JSON and may be null for
/// the defaults. On success `*out` owns a handle to release with
/// `rt_tracker_free`.
///
/// # Safety
/// Pointers must be valid for the sizes given; `config_json` must be
/// NUL-terminated when non-null.
#[no_mangle]
pub unsafe extern "C" fn rt_tracker_create(
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    init: RtBox,
    config_json: *const c_char,
    out: *mut *mut RtTracker,
) -> RtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg: TrackerConfig = if config_json.is_null() {
            TrackerConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|e| Failure::Status(RtStatus::InvalidArgument, e.to_string()))?;
            serde_json::from_str(text).map_err(Error::from)?
        };
        let frame = frame_from(pixels, width, height, channels)?;
        let tracker = Tracker::init(&frame, &to_box(&init)?, cfg)?;
        *out = Box::into_raw(Box::new(RtTracker { inner: tracker }));
        Ok(())
    })
}

/// Tracks the target into the next frame.
///
/// # Safety
/// `tracker` must come from `rt_tracker_create`; `pixels` as for creation.
#[no_mangle]
pub unsafe extern "C" fn rt_tracker_track(
    tracker: *mut RtTracker,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut RtFrameResult,
) -> RtStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let frame = frame_from(pixels, width, height, channels)?;
        let r = t.inner.track_frame(&frame)?;
        *out = RtFrameResult {
            output: from_box(r.output()),
            predicted: from_box(r.predicted),
            probability: r.probability,
            updated: r.updated as i32,
        };
        Ok(())
    })
}

/// Number of frames tracked since creation.
///
/// # Safety
/// `tracker` must come from `rt_tracker_create` or be null.
#[no_mangle]
pub unsafe extern "C" fn rt_tracker_frame_count(tracker: *const RtTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.inner.frame_count())
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tracker` must come from `rt_tracker_create` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rt_tracker_free(tracker: *mut RtTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Scores `n` predicted boxes against `n` ground-truth boxes.
///
/// # Safety
/// `predicted` and `truth` must point to `n` boxes each.
#[no_mangle]
pub unsafe extern "C" fn rt_compute_metrics(
    predicted: *const RtBox,
    truth: *const RtBox,
    n: usize,
    out: *mut RtMetrics,
) -> RtStatus {
    guard(|| {
        if predicted.is_null() {
            return Err(null("predicted"));
        }
        if truth.is_null() {
            return Err(null("truth"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = slice::from_raw_parts(predicted, n).iter().map(to_box).collect::<Result<Vec<_>, _>>()?;
        let t = slice::from_raw_parts(truth, n).iter().map(to_box).collect::<Result<Vec<_>, _>>()?;
        let r = compute_metrics(&p, &t)?;
        *out = RtMetrics {
            cle: r.cle,
            dp20: r.dp20,
            auc: r.auc,
            os50: r.os50,
        };
        Ok(())
    })
}

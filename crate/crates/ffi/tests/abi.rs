use std::ffi::{CStr, CString};
use std::ptr;

use recitrack_ffi::*;

fn last_error() -> String {
    let p = rt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn square_frame(w: usize, h: usize, b: &RtBox) -> Vec<u8> {
    let mut px = vec![30u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            if fx >= b.x && fx < b.x + b.w && fy >= b.y && fy < b.y + b.h {
                px[y * w + x] = if (x + y) % 4 < 2 { 220 } else { 160 };
            }
        }
    }
    px
}

const SMALL: &str = r#"{
    "init_sampler": {"count": 300, "translation": 0.5},
    "init_iterations": 3,
    "sampler": {"count": 32},
    "update_iterations": 1,
    "update_interval": 2,
    "horizon": 2,
    "batch_pos": 4,
    "batch_neg": 4,
    "hidden": [6],
    "patch": {"height": 8, "width": 8}
}"#;

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(rt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn iou_of_identical_and_degenerate_boxes() {
    let a = RtBox { x: 1.0, y: 2.0, w: 4.0, h: 4.0 };
    let b = RtBox { x: 3.0, y: 2.0, w: 4.0, h: 4.0 };
    assert_eq!(rt_iou(a, a), 1.0);
    assert!((rt_iou(a, b) - 8.0 / 24.0).abs() < 1e-12);
    assert_eq!(rt_iou(a, RtBox { w: 0.0, ..a }), -1.0);
}

#[test]
fn metrics_match_core_and_reject_mismatch() {
    let t = [RtBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 }; 2];
    let p = [t[0], RtBox { x: 3.0, y: 4.0, w: 10.0, h: 10.0 }];
    let mut m = RtMetrics { cle: 0.0, dp20: 0.0, auc: 0.0, os50: 0.0 };
    let s = unsafe { rt_compute_metrics(p.as_ptr(), t.as_ptr(), 2, &mut m) };
    assert_eq!(s, RtStatus::Ok);
    assert!(rt_last_error().is_null());
    assert_eq!(m.cle, 2.5);
    assert_eq!(m.dp20, 1.0);
    let s = unsafe { rt_compute_metrics(p.as_ptr(), t.as_ptr(), 0, &mut m) };
    assert_eq!(s, RtStatus::InvalidConfig);
    assert!(last_error().contains("non-empty"));
    let s = unsafe { rt_compute_metrics(ptr::null(), t.as_ptr(), 2, &mut m) };
    assert_eq!(s, RtStatus::NullPointer);
    assert!(last_error().contains("predicted"));
}

#[test]
fn tracker_lifecycle() {
    let (w, h) = (64, 48);
    let init = RtBox { x: 20.0, y: 14.0, w: 16.0, h: 14.0 };
    let px = square_frame(w, h, &init);
    let cfg = CString::new(SMALL).unwrap();
    let mut t: *mut RtTracker = ptr::null_mut();
    let s = unsafe { rt_tracker_create(px.as_ptr(), w, h, 1, init, cfg.as_ptr(), &mut t) };
    assert_eq!(s, RtStatus::Ok, "{}", if s == RtStatus::Ok { String::new() } else { last_error() });
    assert!(!t.is_null());
    let mut r = RtFrameResult {
        output: init,
        predicted: init,
        probability: 0.0,
        updated: 0,
    };
    let mut updates = 0;
    for _ in 0..4 {
        let s = unsafe { rt_tracker_track(t, px.as_ptr(), w, h, 1, &mut r) };
        assert_eq!(s, RtStatus::Ok);
        assert!((0.0..=1.0).contains(&r.probability));
        assert!(rt_iou(r.output, init) >= 0.0);
        updates += r.updated;
    }
    assert_eq!(updates, 2);
    assert_eq!(unsafe { rt_tracker_frame_count(t) }, 4);
    unsafe { rt_tracker_free(t) };
}

#[test]
fn create_reports_bad_inputs() {
    let init = RtBox { x: 2.0, y: 2.0, w: 4.0, h: 4.0 };
    let px = vec![0u8; 16 * 16];
    let mut t: *mut RtTracker = ptr::null_mut();
    let bad = CString::new("{\"no_such_field\": 1}").unwrap();
    let s = unsafe { rt_tracker_create(px.as_ptr(), 16, 16, 1, init, bad.as_ptr(), &mut t) };
    assert_eq!(s, RtStatus::InvalidConfig);
    assert!(t.is_null());
    assert!(last_error().contains("no_such_field"));
    let s = unsafe { rt_tracker_create(ptr::null(), 16, 16, 1, init, ptr::null(), &mut t) };
    assert_eq!(s, RtStatus::NullPointer);
    let s = unsafe { rt_tracker_create(px.as_ptr(), 16, 16, 2, init, ptr::null(), &mut t) };
    assert_eq!(s, RtStatus::InvalidConfig);
    let degenerate = RtBox { w: -1.0, ..init };
    let s = unsafe { rt_tracker_create(px.as_ptr(), 16, 16, 1, degenerate, ptr::null(), &mut t) };
    assert_eq!(s, RtStatus::InvalidConfig);
    let mut r = std::mem::MaybeUninit::<RtFrameResult>::uninit();
    let s = unsafe { rt_tracker_track(ptr::null_mut(), px.as_ptr(), 16, 16, 1, r.as_mut_ptr()) };
    assert_eq!(s, RtStatus::NullPointer);
    unsafe { rt_tracker_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/recitrack.h")).unwrap();
    for name in [
        "rt_tracker_create",
        "rt_tracker_track",
        "rt_tracker_free",
        "rt_compute_metrics",
        "rt_iou",
        "rt_last_error",
        "rt_version",
        "RT_STATUS_PANIC",
        "typedef struct RtTracker RtTracker",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

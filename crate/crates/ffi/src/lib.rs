//! C ABI over `facekit`.
//!
//! Every fallible call returns an [`FkStatus`]; on failure a message is kept
//! per thread and can be read with [`fk_last_error_message`]. Objects that
//! cross the boundary are opaque handles created by `*_new`/`*_parse` and
//! released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use facekit::anchors::{anchors_for, AnchorConfig, AnchorSet};
use facekit::eval::{pr_curve, MatchOutcome, ScoredMatch};
use facekit::geometry::{decode, encode, iou, BBox, EncodedDelta};
use facekit::loss::{sigmoid_focal_loss, smooth_l1, FocalParams};
use facekit::postprocess::{nms_indices, Detection};
use facekit::wider::{parse_annotations_str, read_annotations_file, ImageRecord};
use facekit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Parse = 4,
    Io = 5,
    Utf8 = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl From<FkBox> for BBox {
    fn from(b: FkBox) -> Self {
        BBox { x_min: b.x_min, y_min: b.y_min, x_max: b.x_max, y_max: b.y_max }
    }
}

impl From<BBox> for FkBox {
    fn from(b: BBox) -> Self {
        FkBox { x_min: b.x_min, y_min: b.y_min, x_max: b.x_max, y_max: b.y_max }
    }
}

/// Anchors of one input size, in level → row → column → slot order.
pub struct FkAnchorSet(AnchorSet);

/// Parsed WIDER FACE annotations.
pub struct FkAnnotations(Vec<ImageRecord>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: FkStatus, msg: impl Into<String>) -> FkStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> FkStatus {
    let status = match &err {
        Error::Parse { .. } | Error::Json(_) => FkStatus::Parse,
        Error::Io(_) => FkStatus::Io,
        _ => FkStatus::InvalidArgument,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> FkStatus) -> FkStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(FkStatus::Panic, "internal panic"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(FkStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Intersection over union; 0 when either box has zero area.
#[no_mangle]
pub extern "C" fn fk_iou(a: FkBox, b: FkBox) -> f64 {
    iou(&a.into(), &b.into())
}

/// Regression target of `gt` relative to `anchor`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `FkDelta`.
#[no_mangle]
pub unsafe extern "C" fn fk_encode(anchor: FkBox, gt: FkBox, out: *mut FkDelta) -> FkStatus {
    guard(|| {
        non_null!(out);
        match encode(&anchor.into(), &gt.into()) {
            Ok(d) => {
                *out = FkDelta { dx: d.dx, dy: d.dy, dw: d.dw, dh: d.dh };
                FkStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Inverse of [`fk_encode`].
#[no_mangle]
pub extern "C" fn fk_decode(anchor: FkBox, delta: FkDelta) -> FkBox {
    let d = EncodedDelta { dx: delta.dx, dy: delta.dy, dw: delta.dw, dh: delta.dh };
    decode(&anchor.into(), &d).into()
}

/// Builds the default anchor pyramid for a `width × height` input.
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_anchors_new(width: u32, height: u32, out: *mut *mut FkAnchorSet) -> FkStatus {
    guard(|| {
        non_null!(out);
        match anchors_for(&AnchorConfig::default(), width, height) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(FkAnchorSet(set)));
                FkStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Number of anchors; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle from [`fk_anchors_new`].
#[no_mangle]
pub unsafe extern "C" fn fk_anchors_len(set: *const FkAnchorSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Box and pyramid level index of anchor `index`.
///
/// # Safety
/// `set` must be a live handle; `out_box` and `out_level` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fk_anchors_get(
    set: *const FkAnchorSet,
    index: usize,
    out_box: *mut FkBox,
    out_level: *mut u32,
) -> FkStatus {
    guard(|| {
        non_null!(set, out_box, out_level);
        let s = &(*set).0;
        if index >= s.len() {
            return fail(FkStatus::OutOfRange, format!("anchor {index} of {}", s.len()));
        }
        *out_box = s.boxes[index].into();
        *out_level = s.level_of[index] as u32;
        FkStatus::Ok
    })
}

/// # Safety
/// `set` must be null or a handle from [`fk_anchors_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fk_anchors_free(set: *mut FkAnchorSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Greedy NMS. Writes the indices of the kept boxes, best first, to
/// `out_indices` (capacity `n`) and their number to `out_len`.
///
/// # Safety
/// `boxes` and `scores` must hold `n` elements and `out_indices` room for `n`
/// indices; all may be null only when `n == 0`.
#[no_mangle]
pub unsafe extern "C" fn fk_nms(
    boxes: *const FkBox,
    scores: *const f64,
    n: usize,
    iou_threshold: f64,
    max_keep: usize,
    out_indices: *mut usize,
    out_len: *mut usize,
) -> FkStatus {
    guard(|| {
        non_null!(out_len);
        if n > 0 {
            non_null!(boxes, scores, out_indices);
        }
        if !(0.0..=1.0).contains(&iou_threshold) {
            return fail(FkStatus::InvalidArgument, "iou_threshold must lie in [0, 1]");
        }
        let dets: Vec<Detection> = (0..n)
            .map(|i| Detection { bbox: (*boxes.add(i)).into(), score: *scores.add(i) })
            .collect();
        let keep = nms_indices(&dets, iou_threshold, max_keep);
        for (k, &i) in keep.iter().enumerate() {
            *out_indices.add(k) = i;
        }
        *out_len = keep.len();
        FkStatus::Ok
    })
}

/// Sigmoid focal loss of one logit and its derivative.
///
/// # Safety
/// `out_loss` and `out_grad` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn fk_focal_loss(
    logit: f64,
    label: u8,
    alpha: f64,
    gamma: f64,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> FkStatus {
    guard(|| {
        non_null!(out_loss, out_grad);
        if label > 1 {
            return fail(FkStatus::InvalidArgument, "label must be 0 or 1");
        }
        let (l, g) = sigmoid_focal_loss(logit, label, &FocalParams { alpha, gamma });
        *out_loss = l;
        *out_grad = g;
        FkStatus::Ok
    })
}

/// Smooth-L1 loss of one coordinate and its derivative.
///
/// # Safety
/// `out_loss` and `out_grad` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn fk_smooth_l1(pred: f64, target: f64, out_loss: *mut f64, out_grad: *mut f64) -> FkStatus {
    guard(|| {
        non_null!(out_loss, out_grad);
        let (l, g) = smooth_l1(pred, target);
        *out_loss = l;
        *out_grad = g;
        FkStatus::Ok
    })
}

fn finish_annotations(
    parsed: facekit::Result<Vec<ImageRecord>>,
    out: *mut *mut FkAnnotations,
) -> FkStatus {
    match parsed {
        Ok(records) => {
            // SAFETY: callers check `out` for null first.
            unsafe { *out = Box::into_raw(Box::new(FkAnnotations(records))) };
            FkStatus::Ok
        }
        Err(e) => from_core(e),
    }
}

/// Parses annotation text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_parse(text: *const c_char, out: *mut *mut FkAnnotations) -> FkStatus {
    guard(|| {
        non_null!(text, out);
        let Ok(s) = CStr::from_ptr(text).to_str() else {
            return fail(FkStatus::Utf8, "annotation text is not UTF-8");
        };
        finish_annotations(parse_annotations_str(s), out)
    })
}

/// Reads an annotation file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_read_file(path: *const c_char, out: *mut *mut FkAnnotations) -> FkStatus {
    guard(|| {
        non_null!(path, out);
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(FkStatus::Utf8, "path is not UTF-8");
        };
        finish_annotations(read_annotations_file(p), out)
    })
}

/// Number of images; 0 for a null handle.
///
/// # Safety
/// `ann` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_image_count(ann: *const FkAnnotations) -> usize {
    ann.as_ref().map_or(0, |a| a.0.len())
}

/// Number of faces of image `image`.
///
/// # Safety
/// `ann` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_face_count(
    ann: *const FkAnnotations,
    image: usize,
    out: *mut usize,
) -> FkStatus {
    guard(|| {
        non_null!(ann, out);
        let records = &(*ann).0;
        match records.get(image) {
            Some(r) => {
                *out = r.faces.len();
                FkStatus::Ok
            }
            None => fail(FkStatus::OutOfRange, format!("image {image} of {}", records.len())),
        }
    })
}

/// Box and invalid flag of face `face` of image `image`.
///
/// # Safety
/// `ann` must be a live handle; `out_box` and `out_invalid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_face(
    ann: *const FkAnnotations,
    image: usize,
    face: usize,
    out_box: *mut FkBox,
    out_invalid: *mut u8,
) -> FkStatus {
    guard(|| {
        non_null!(ann, out_box, out_invalid);
        let records = &(*ann).0;
        let Some(f) = records.get(image).and_then(|r| r.faces.get(face)) else {
            return fail(FkStatus::OutOfRange, format!("no face {face} in image {image}"));
        };
        *out_box = f.bbox.into();
        *out_invalid = u8::from(f.is_invalid());
        FkStatus::Ok
    })
}

/// Relative path of image `image` as a NUL-terminated string owned by the
/// handle; null when out of range.
///
/// # Safety
/// `ann` must be null or a live handle. The string is valid while the handle
/// lives.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_path(ann: *const FkAnnotations, image: usize) -> *mut c_char {
    match ann.as_ref().and_then(|a| a.0.get(image)) {
        Some(r) => CString::new(r.relative_path.clone()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// Frees a string returned by [`fk_annotations_path`].
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `ann` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fk_annotations_free(ann: *mut FkAnnotations) {
    if !ann.is_null() {
        drop(Box::from_raw(ann));
    }
}

/// Average precision of pooled, already matched detections: `is_tp[i]` is 1
/// for a true positive and 0 for a false positive.
///
/// # Safety
/// `scores` and `is_tp` must hold `n` elements (may be null when `n == 0`);
/// `out_ap` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_average_precision(
    scores: *const f64,
    is_tp: *const u8,
    n: usize,
    total_gt: usize,
    out_ap: *mut f64,
) -> FkStatus {
    guard(|| {
        non_null!(out_ap);
        if n > 0 {
            non_null!(scores, is_tp);
        }
        let matches: Vec<ScoredMatch> = (0..n)
            .map(|i| ScoredMatch {
                score: *scores.add(i),
                outcome: if *is_tp.add(i) != 0 {
                    MatchOutcome::TruePositive
                } else {
                    MatchOutcome::FalsePositive
                },
            })
            .collect();
        if matches.iter().filter(|m| m.outcome == MatchOutcome::TruePositive).count() > total_gt {
            return fail(FkStatus::InvalidArgument, "more true positives than ground truths");
        }
        *out_ap = pr_curve(&matches, total_gt, 1).ap;
        FkStatus::Ok
    })
}

//! C ABI over the groupwise label codec and the amodal mIoU accumulator.
//!
//! Every fallible call returns an [`AmodalStatus`]; on failure the message is
//! available from [`amodal_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use amodal_core::cityscapes::{AmodalMask, FrameId};
use amodal_core::codec::{
    decode_group_pixel, decode_occluded_pixel, decode_visible_pixel, encode_pixel, GroupingScheme,
};
use amodal_core::compositor::derive_frame_seed;
use amodal_core::metrics::{finalize, ConfusionAccumulator, MeanMode};
use amodal_core::raster::Raster;
use amodal_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmodalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidScheme = 3,
    ShapeMismatch = 4,
    Panic = 5,
}

/// A grouping of the 19 classes into K groups.
pub struct AmodalScheme(GroupingScheme);

/// Running TP/FP/FN counters for visible, invisible and total mIoU.
pub struct AmodalAccumulator(ConfusionAccumulator);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: AmodalStatus, msg: impl Into<String>) -> AmodalStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> AmodalStatus {
    match err {
        Error::InvalidScheme(_) | Error::Json(_) => AmodalStatus::InvalidScheme,
        Error::Eval(_) => AmodalStatus::ShapeMismatch,
        _ => AmodalStatus::InvalidArgument,
    }
}

fn guarded(f: impl FnOnce() -> AmodalStatus) -> AmodalStatus {
    catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|_| fail(AmodalStatus::Panic, "internal panic"))
}

fn pixels(height: usize, width: usize) -> Option<usize> {
    height.checked_mul(width)
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty when nothing failed.
#[no_mangle]
pub extern "C" fn amodal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn amodal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// One of the shipped schemes: `k` = 3 or 4. Returns NULL for any other `k`.
#[no_mangle]
pub extern "C" fn amodal_scheme_preset(k: u32) -> *mut AmodalScheme {
    let scheme = match k {
        3 => GroupingScheme::k3(),
        4 => GroupingScheme::k4(),
        _ => {
            set_error(format!("no preset scheme with {k} groups"));
            return ptr::null_mut();
        }
    };
    Box::into_raw(Box::new(AmodalScheme(scheme)))
}

/// Parses a scheme from JSON (`{"name": .., "groups": [{"name": .., "classes": [..]}, ..]}`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn amodal_scheme_from_json(
    json: *const c_char,
    out: *mut *mut AmodalScheme,
) -> AmodalStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            return fail(AmodalStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(AmodalStatus::InvalidArgument, "scheme JSON is not UTF-8");
        };
        match GroupingScheme::from_json(text) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(AmodalScheme(s)));
                AmodalStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `scheme` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amodal_scheme_free(scheme: *mut AmodalScheme) {
    if !scheme.is_null() {
        drop(Box::from_raw(scheme));
    }
}

/// Per-pixel vector length L, or 0 for NULL.
///
/// # Safety
/// `scheme` must be NULL or a live scheme handle.
#[no_mangle]
pub unsafe extern "C" fn amodal_scheme_vector_len(scheme: *const AmodalScheme) -> usize {
    scheme.as_ref().map_or(0, |s| s.0.vector_len())
}

/// Number of groups K, or 0 for NULL.
///
/// # Safety
/// `scheme` must be NULL or a live scheme handle.
#[no_mangle]
pub unsafe extern "C" fn amodal_scheme_num_groups(scheme: *const AmodalScheme) -> usize {
    scheme.as_ref().map_or(0, |s| s.0.num_groups())
}

/// Encodes `height*width` label pairs into `out` (`height*width*L` floats, row-major).
///
/// Returns the number of void visible pixels and of dropped same-group
/// occlusions through the optional `invalid` and `dropped` pointers.
///
/// # Safety
/// `visible` and `occluded` must hold `height*width` bytes; `out` must hold
/// `out_len` floats. `invalid` and `dropped` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn amodal_encode(
    scheme: *const AmodalScheme,
    visible: *const u8,
    occluded: *const u8,
    height: usize,
    width: usize,
    out: *mut f32,
    out_len: usize,
    invalid: *mut u64,
    dropped: *mut u64,
) -> AmodalStatus {
    guarded(|| {
        let Some(scheme) = scheme.as_ref() else {
            return fail(AmodalStatus::NullPointer, "null scheme");
        };
        if visible.is_null() || occluded.is_null() || out.is_null() {
            return fail(AmodalStatus::NullPointer, "null buffer");
        }
        let l = scheme.0.vector_len();
        let Some(n) = pixels(height, width) else {
            return fail(AmodalStatus::InvalidArgument, "frame size overflows");
        };
        if n.checked_mul(l) != Some(out_len) {
            return fail(
                AmodalStatus::ShapeMismatch,
                format!("output holds {out_len} floats, need {n} x {l}"),
            );
        }
        let vis = slice::from_raw_parts(visible, n);
        let occ = slice::from_raw_parts(occluded, n);
        let out = slice::from_raw_parts_mut(out, out_len);
        let (mut n_invalid, mut n_dropped) = (0u64, 0u64);
        for ((&v, &o), px) in vis.iter().zip(occ).zip(out.chunks_exact_mut(l)) {
            let (valid, drop) = encode_pixel(&scheme.0, v, o, px);
            n_invalid += u64::from(!valid);
            n_dropped += u64::from(drop);
        }
        if let Some(p) = invalid.as_mut() {
            *p = n_invalid;
        }
        if let Some(p) = dropped.as_mut() {
            *p = n_dropped;
        }
        AmodalStatus::Ok
    })
}

unsafe fn decode_with(
    scheme: *const AmodalScheme,
    tensor: *const f32,
    tensor_len: usize,
    height: usize,
    width: usize,
    out: *mut u8,
    f: impl Fn(&GroupingScheme, &[f32]) -> u8,
) -> AmodalStatus {
    guarded(|| {
        let Some(scheme) = scheme.as_ref() else {
            return fail(AmodalStatus::NullPointer, "null scheme");
        };
        if tensor.is_null() || out.is_null() {
            return fail(AmodalStatus::NullPointer, "null buffer");
        }
        let l = scheme.0.vector_len();
        let Some(n) = pixels(height, width) else {
            return fail(AmodalStatus::InvalidArgument, "frame size overflows");
        };
        if n.checked_mul(l) != Some(tensor_len) {
            return fail(
                AmodalStatus::ShapeMismatch,
                format!("tensor holds {tensor_len} floats, need {n} x {l}"),
            );
        }
        let t = slice::from_raw_parts(tensor, tensor_len);
        let out = slice::from_raw_parts_mut(out, n);
        for (px, o) in t.chunks_exact(l).zip(out.iter_mut()) {
            *o = f(&scheme.0, px);
        }
        AmodalStatus::Ok
    })
}

/// Visible trainIds of a `height*width*L` tensor into `out` (`height*width` bytes).
///
/// # Safety
/// Buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn amodal_decode_visible(
    scheme: *const AmodalScheme,
    tensor: *const f32,
    tensor_len: usize,
    height: usize,
    width: usize,
    out: *mut u8,
) -> AmodalStatus {
    decode_with(scheme, tensor, tensor_len, height, width, out, |s, v| {
        decode_visible_pixel(s, v).0
    })
}

/// Occluded trainIds (255 where no occluded class is present).
///
/// # Safety
/// Buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn amodal_decode_occluded(
    scheme: *const AmodalScheme,
    tensor: *const f32,
    tensor_len: usize,
    height: usize,
    width: usize,
    out: *mut u8,
) -> AmodalStatus {
    decode_with(scheme, tensor, tensor_len, height, width, out, decode_occluded_pixel)
}

/// Class of group `group` per pixel (255 where the group is absent).
///
/// # Safety
/// Buffers must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn amodal_decode_group(
    scheme: *const AmodalScheme,
    tensor: *const f32,
    tensor_len: usize,
    height: usize,
    width: usize,
    group: usize,
    out: *mut u8,
) -> AmodalStatus {
    let groups = amodal_scheme_num_groups(scheme);
    if !scheme.is_null() && group >= groups {
        return fail(
            AmodalStatus::InvalidArgument,
            format!("group {group} out of range for {groups} groups"),
        );
    }
    decode_with(scheme, tensor, tensor_len, height, width, out, |s, v| {
        decode_group_pixel(s, v, group)
    })
}

#[no_mangle]
pub extern "C" fn amodal_accumulator_new() -> *mut AmodalAccumulator {
    Box::into_raw(Box::new(AmodalAccumulator(ConfusionAccumulator::new())))
}

/// # Safety
/// `acc` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amodal_accumulator_free(acc: *mut AmodalAccumulator) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Adds one frame. All label buffers hold `height*width` trainIds (255 =
/// void). `region` marks pasted occluder pixels (nonzero = inside); NULL
/// means the whole frame.
///
/// # Safety
/// Non-NULL buffers must hold `height*width` bytes.
#[no_mangle]
pub unsafe extern "C" fn amodal_accumulate(
    acc: *mut AmodalAccumulator,
    gt_visible: *const u8,
    gt_occluded: *const u8,
    pred_visible: *const u8,
    pred_occluded: *const u8,
    region: *const u8,
    height: usize,
    width: usize,
) -> AmodalStatus {
    guarded(|| {
        let Some(acc) = acc.as_mut() else {
            return fail(AmodalStatus::NullPointer, "null accumulator");
        };
        if [gt_visible, gt_occluded, pred_visible, pred_occluded]
            .iter()
            .any(|p| p.is_null())
        {
            return fail(AmodalStatus::NullPointer, "null label buffer");
        }
        let Some(n) = pixels(height, width) else {
            return fail(AmodalStatus::InvalidArgument, "frame size overflows");
        };
        let map = |p: *const u8| {
            Raster::from_vec(height, width, slice::from_raw_parts(p, n).to_vec())
                .expect("length checked")
        };
        let gt = AmodalMask {
            visible: map(gt_visible),
            occluded: map(gt_occluded),
        };
        let pred = AmodalMask {
            visible: map(pred_visible),
            occluded: map(pred_occluded),
        };
        let region = if region.is_null() {
            Raster::filled(height, width, true)
        } else {
            map(region).map(|&v| v != 0)
        };
        match acc.0.accumulate_frame(&gt, &pred, &region) {
            Ok(()) => AmodalStatus::Ok,
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Adds the counters of `src` into `dst`.
///
/// # Safety
/// Both must be live accumulator handles.
#[no_mangle]
pub unsafe extern "C" fn amodal_accumulator_merge(
    dst: *mut AmodalAccumulator,
    src: *const AmodalAccumulator,
) -> AmodalStatus {
    match (dst.as_mut(), src.as_ref()) {
        (Some(d), Some(s)) => {
            d.0.merge(&s.0);
            AmodalStatus::Ok
        }
        _ => fail(AmodalStatus::NullPointer, "null accumulator"),
    }
}

/// Visible, invisible and total mIoU. A variant with no evaluated pixel is
/// reported as NaN. `strict` averages over all 19 classes.
///
/// # Safety
/// `acc` must be a live handle; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn amodal_accumulator_miou(
    acc: *const AmodalAccumulator,
    strict: bool,
    visible: *mut f64,
    invisible: *mut f64,
    total: *mut f64,
) -> AmodalStatus {
    let Some(acc) = acc.as_ref() else {
        return fail(AmodalStatus::NullPointer, "null accumulator");
    };
    let mode = if strict {
        MeanMode::Strict
    } else {
        MeanMode::Present
    };
    let report = finalize(&acc.0, mode);
    for (dst, value) in [
        (visible, report.miou_visible()),
        (invisible, report.miou_invisible()),
        (total, report.miou_total()),
    ] {
        if let Some(d) = dst.as_mut() {
            *d = value.unwrap_or(f64::NAN);
        }
    }
    AmodalStatus::Ok
}

/// Seed of one frame's random stream for a run seed. Returns 0 and sets the
/// last error for a NULL or non-UTF-8 frame id.
///
/// # Safety
/// `frame_id` must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn amodal_frame_seed(master_seed: u64, frame_id: *const c_char) -> u64 {
    if frame_id.is_null() {
        set_error("null frame id");
        return 0;
    }
    match CStr::from_ptr(frame_id).to_str() {
        Ok(id) => derive_frame_seed(master_seed, &FrameId::new(id)),
        Err(_) => {
            set_error("frame id is not UTF-8");
            0
        }
    }
}

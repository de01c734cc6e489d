//! C ABI over `imba-lens`.
//!
//! Every fallible function returns an [`ImbaStatus`]; on failure the message
//! is available from [`imba_last_error_message`] on the same thread until the
//! next call. Objects are opaque handles released with their `_free`
//! function; strings returned through `char **` out-parameters are released
//! with [`imba_string_free`]. Enum-valued parameters are passed as `uint32_t`
//! and validated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use imba_lens::alignment;
use imba_lens::cam::{image_heatmap, CamOrder, HeadWeights, Heatmap, Resolution};
use imba_lens::dissection::{self, Connectivity, DissectionConfig};
use imba_lens::losses::{self, ClassCounts, LossConfig, LossMethod, Reduction, SampleBatch};
use imba_lens::metrics::{self, ScoreKind, ScoredSamples};
use imba_lens::tensor_io::{self, AnnotationSet, BBox, FeatureMapStack, Manifest, Tensor};
use imba_lens::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Data = 6,
    Utf8 = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbaLossKind {
    Bce = 0,
    Wbce = 1,
    Focal = 2,
    CbFocal = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbaReduction {
    Sum = 0,
    Mean = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbaCamOrder {
    NormalizeFirst = 0,
    UpsampleFirst = 1,
}

/// Loss selection. `kind` holds an `ImbaLossKind` value; `alpha` is read by
/// Focal, `beta` by CBFocal, `gamma` by both.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImbaLossParams {
    pub kind: u32,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImbaClassCounts {
    pub n_plus: u64,
    pub n_minus: u64,
}

/// Box in image pixels covering `[x, x+w) x [y, y+h)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImbaBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ImbaAlignment {
    pub iobb: f64,
    pub ior: f64,
    pub total_mass: f64,
    pub box_area: usize,
    pub zero_mass: bool,
}

pub struct ImbaTensor(Tensor);
pub struct ImbaManifest(Manifest);
pub struct ImbaAnnotations(AnnotationSet);
pub struct ImbaHead(HeadWeights);

struct FfiError {
    status: ImbaStatus,
    message: String,
}

impl FfiError {
    fn new(status: ImbaStatus, message: impl Into<String>) -> Self {
        FfiError {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for FfiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => ImbaStatus::Io,
            Error::Format(_) | Error::Truncated { .. } | Error::Json(_) => ImbaStatus::Format,
            Error::Shape(_) => ImbaStatus::Shape,
            Error::InvalidArgument(_) => ImbaStatus::InvalidArgument,
            Error::Manifest(_) | Error::Annotation { .. } | Error::EmptyInput(_) => {
                ImbaStatus::Data
            }
        };
        FfiError::new(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, FfiError>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> FfiResult<()>) -> ImbaStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ImbaStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.message);
            e.status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {what}"));
            ImbaStatus::Panic
        }
    }
}

fn null(what: &str) -> FfiError {
    FfiError::new(ImbaStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| FfiError::new(ImbaStatus::Utf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn invalid(message: impl Into<String>) -> FfiError {
    FfiError::new(ImbaStatus::InvalidArgument, message)
}

fn loss_config(params: &ImbaLossParams, counts: &[ImbaClassCounts]) -> FfiResult<LossConfig> {
    let method = match params.kind {
        0 => LossMethod::Bce,
        1 => LossMethod::Wbce,
        2 => LossMethod::Focal {
            alpha: params.alpha,
            gamma: params.gamma,
        },
        3 => LossMethod::CbFocal {
            beta: params.beta,
            gamma: params.gamma,
        },
        k => return Err(invalid(format!("unknown loss kind {k}"))),
    };
    let counts = counts
        .iter()
        .map(|c| ClassCounts::new(c.n_plus, c.n_minus))
        .collect();
    Ok(LossConfig::new(method, counts)?)
}

fn reduction(value: u32) -> FfiResult<Reduction> {
    match value {
        0 => Ok(Reduction::Sum),
        1 => Ok(Reduction::Mean),
        r => Err(invalid(format!("unknown reduction {r}"))),
    }
}

fn cam_order(value: u32) -> FfiResult<CamOrder> {
    match value {
        0 => Ok(CamOrder::NormalizeFirst),
        1 => Ok(CamOrder::UpsampleFirst),
        o => Err(invalid(format!("unknown CAM order {o}"))),
    }
}

unsafe fn write_json<T: serde::Serialize>(value: &T, out: *mut *mut c_char) -> FfiResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    let c = CString::new(text).map_err(|_| invalid("report contains a NUL byte"))?;
    write_out(out, c.into_raw(), "out")
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn imba_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn imba_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imba_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a tensor by copying `len` floats laid out row-major over `dims`.
///
/// # Safety
/// `dims` must point to `ndim` values and `data` to `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_new(
    dims: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut ImbaTensor,
) -> ImbaStatus {
    guard(|| {
        let dims = slice_arg(dims, ndim, "dims")?.to_vec();
        let data = slice_arg(data, len, "data")?.to_vec();
        let t = Tensor::new(dims, data)?;
        write_out(out, boxed(ImbaTensor(t)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_read(
    path: *const c_char,
    out: *mut *mut ImbaTensor,
) -> ImbaStatus {
    guard(|| {
        let t = tensor_io::read_tensor(str_arg(path, "path")?)?;
        write_out(out, boxed(ImbaTensor(t)), "out")
    })
}

/// # Safety
/// `tensor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_write(
    tensor: *const ImbaTensor,
    path: *const c_char,
) -> ImbaStatus {
    guard(|| {
        let t = ref_arg(tensor, "tensor")?;
        Ok(tensor_io::write_tensor(&t.0, str_arg(path, "path")?)?)
    })
}

/// Rank of `tensor`, 0 for NULL.
///
/// # Safety
/// `tensor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_ndim(tensor: *const ImbaTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.0.ndim())
}

/// Extent of `axis`, 0 when out of range or NULL.
///
/// # Safety
/// `tensor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_dim(tensor: *const ImbaTensor, axis: usize) -> usize {
    tensor
        .as_ref()
        .and_then(|t| t.0.dims().get(axis).copied())
        .unwrap_or(0)
}

/// Number of elements, 0 for NULL.
///
/// # Safety
/// `tensor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_len(tensor: *const ImbaTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.0.len())
}

/// Borrowed row-major data, valid while the handle lives.
///
/// # Safety
/// `tensor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_data(tensor: *const ImbaTensor) -> *const f32 {
    tensor.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `tensor` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imba_tensor_free(tensor: *mut ImbaTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Loads and fully validates a manifest, including every referenced tensor.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_manifest_load(
    path: *const c_char,
    out: *mut *mut ImbaManifest,
) -> ImbaStatus {
    guard(|| {
        let m = Manifest::load(str_arg(path, "path")?)?;
        write_out(out, boxed(ImbaManifest(m)), "out")
    })
}

/// # Safety
/// `manifest` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_manifest_num_classes(manifest: *const ImbaManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.0.num_classes())
}

/// # Safety
/// `manifest` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_manifest_num_images(manifest: *const ImbaManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.0.entries.len())
}

/// # Safety
/// `manifest` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imba_manifest_free(manifest: *mut ImbaManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Parses a box CSV against the classes and image size of `manifest`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `manifest` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn imba_annotations_load(
    path: *const c_char,
    manifest: *const ImbaManifest,
    out: *mut *mut ImbaAnnotations,
) -> ImbaStatus {
    guard(|| {
        let m = ref_arg(manifest, "manifest")?;
        let set = tensor_io::load_annotations(str_arg(path, "path")?, &m.0)?;
        write_out(out, boxed(ImbaAnnotations(set)), "out")
    })
}

/// # Safety
/// `annotations` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn imba_annotations_num_boxes(annotations: *const ImbaAnnotations) -> usize {
    annotations.as_ref().map_or(0, |a| a.0.num_boxes())
}

/// # Safety
/// `annotations` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imba_annotations_free(annotations: *mut ImbaAnnotations) {
    if !annotations.is_null() {
        drop(Box::from_raw(annotations));
    }
}

/// Loads an `[M, C]` head tensor and an optional `[M]` bias (`bias_path` may be NULL).
///
/// # Safety
/// `path` must be a NUL-terminated string, `bias_path` NULL or one, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn imba_head_load(
    path: *const c_char,
    bias_path: *const c_char,
    out: *mut *mut ImbaHead,
) -> ImbaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let bias = if bias_path.is_null() {
            None
        } else {
            Some(Path::new(str_arg(bias_path, "bias_path")?))
        };
        let head = HeadWeights::load(path, bias)?;
        write_out(out, boxed(ImbaHead(head)), "out")
    })
}

/// # Safety
/// `head` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn imba_head_free(head: *mut ImbaHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Per-class weights `(w+, w-)` at probability `p`. `counts` may be NULL for
/// methods that do not use class counts.
///
/// # Safety
/// `params` must be valid, `counts` NULL or valid, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn imba_class_weights(
    params: *const ImbaLossParams,
    counts: *const ImbaClassCounts,
    p: f64,
    w_plus: *mut f64,
    w_minus: *mut f64,
) -> ImbaStatus {
    guard(|| {
        let counts = slice_arg(counts, usize::from(!counts.is_null()), "counts")?;
        let config = loss_config(ref_arg(params, "params")?, counts)?;
        let (wp, wm) = losses::class_weights(&config, 0, p)?;
        write_out(w_plus, wp, "w_plus")?;
        write_out(w_minus, wm, "w_minus")
    })
}

/// Loss over `n_samples x n_classes` probabilities and labels (row-major).
/// `counts` holds `n_classes` entries, or NULL to derive them from `labels`.
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_loss_value(
    params: *const ImbaLossParams,
    counts: *const ImbaClassCounts,
    probs: *const f64,
    labels: *const u8,
    n_samples: usize,
    n_classes: usize,
    reduction_kind: u32,
    out: *mut f64,
) -> ImbaStatus {
    guard(|| {
        let n = n_samples
            .checked_mul(n_classes)
            .ok_or_else(|| invalid("batch size overflows"))?;
        let probs = slice_arg(probs, n, "probs")?.to_vec();
        let labels = slice_arg(labels, n, "labels")?.to_vec();
        let batch = SampleBatch::from_probabilities(n_classes, probs, labels)?;
        let counts = slice_arg(
            counts,
            if counts.is_null() { 0 } else { n_classes },
            "counts",
        )?;
        let mut config = loss_config(ref_arg(params, "params")?, counts)?;
        if config.class_counts.is_empty() {
            config.class_counts = batch.class_counts();
        }
        let value = losses::loss_value(&batch, &config, reduction(reduction_kind)?)?;
        write_out(out, value, "out")
    })
}

/// Gradient of the loss with respect to each logit, written to `grad`
/// (`n_samples x n_classes`). `counts` as for [`imba_loss_value`].
///
/// # Safety
/// Arrays must hold the stated number of elements; `grad` must be writable for as many.
#[no_mangle]
pub unsafe extern "C" fn imba_loss_grad_logits(
    params: *const ImbaLossParams,
    counts: *const ImbaClassCounts,
    logits: *const f64,
    labels: *const u8,
    n_samples: usize,
    n_classes: usize,
    reduction_kind: u32,
    grad: *mut f64,
) -> ImbaStatus {
    guard(|| {
        let n = n_samples
            .checked_mul(n_classes)
            .ok_or_else(|| invalid("batch size overflows"))?;
        let logits = slice_arg(logits, n, "logits")?;
        let labels = slice_arg(labels, n, "labels")?;
        if n_classes == 0 {
            return Err(invalid("n_classes must be at least 1"));
        }
        let counts = slice_arg(
            counts,
            if counts.is_null() { 0 } else { n_classes },
            "counts",
        )?;
        let mut config = loss_config(ref_arg(params, "params")?, counts)?;
        if config.class_counts.is_empty() && config.method.needs_counts() {
            let probs = logits.iter().map(|&z| losses::sigmoid(z)).collect();
            config.class_counts =
                SampleBatch::from_probabilities(n_classes, probs, labels.to_vec())?.class_counts();
        }
        let g = losses::loss_grad_logits(
            logits,
            labels,
            n_classes,
            &config,
            reduction(reduction_kind)?,
        )?;
        if n > 0 && grad.is_null() {
            return Err(null("grad"));
        }
        ptr::copy_nonoverlapping(g.as_ptr(), grad, n);
        Ok(())
    })
}

unsafe fn scored(scores: *const f64, labels: *const u8, n: usize) -> FfiResult<ScoredSamples> {
    let scores = slice_arg(scores, n, "scores")?.to_vec();
    let labels = slice_arg(labels, n, "labels")?.to_vec();
    Ok(ScoredSamples::new("c", scores, labels, ScoreKind::Logit)?)
}

/// Tie-corrected AUROC of `n` scores (any real values) against 0/1 labels.
///
/// # Safety
/// Arrays must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_auroc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> ImbaStatus {
    guard(|| {
        let v = metrics::auroc(&scored(scores, labels, n)?)?;
        write_out(out, v, "out")
    })
}

/// Step-wise average precision, positives ranked last within ties.
///
/// # Safety
/// Arrays must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_average_precision(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> ImbaStatus {
    guard(|| {
        let v = metrics::average_precision(&scored(scores, labels, n)?)?;
        write_out(out, v, "out")
    })
}

/// Soft IoBB / IoR of a `height x width` heatmap with values in `[0, 1]`
/// against the union of `n_boxes` boxes.
///
/// # Safety
/// `map` must hold `height * width` values, `boxes` `n_boxes` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_soft_alignment(
    map: *const f64,
    height: usize,
    width: usize,
    boxes: *const ImbaBox,
    n_boxes: usize,
    out: *mut ImbaAlignment,
) -> ImbaStatus {
    guard(|| {
        let n = height
            .checked_mul(width)
            .ok_or_else(|| invalid("map size overflows"))?;
        let values = slice_arg(map, n, "map")?.to_vec();
        let heatmap = Heatmap::new(height, width, values, Resolution::ImagePixels)?;
        let boxes: Vec<BBox> = slice_arg(boxes, n_boxes, "boxes")?
            .iter()
            .map(|b| BBox::new("box", b.x, b.y, b.w, b.h))
            .collect();
        let s = alignment::score(&heatmap, &boxes)?;
        write_out(
            out,
            ImbaAlignment {
                iobb: s.iobb,
                ior: s.ior,
                total_mass: s.total_mass,
                box_area: s.box_area,
                zero_mass: s.zero_mass,
            },
            "out",
        )
    })
}

/// Normalized, upsampled CAM of class `class_index` for a `[C, H, W]`
/// feature tensor, returned as a new `[image_h, image_w]` tensor.
///
/// # Safety
/// `features` and `head` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imba_compute_cam(
    features: *const ImbaTensor,
    head: *const ImbaHead,
    class_index: usize,
    image_h: usize,
    image_w: usize,
    order: u32,
    out: *mut *mut ImbaTensor,
) -> ImbaStatus {
    guard(|| {
        let t = &ref_arg(features, "features")?.0;
        let &[c, h, w] = t.dims() else {
            return Err(FfiError::new(
                ImbaStatus::Shape,
                format!("features must be [C, H, W], got {:?}", t.dims()),
            ));
        };
        let stack = FeatureMapStack::new("features", (c, h, w), t.data().to_vec())?;
        let map = image_heatmap(
            &stack,
            &ref_arg(head, "head")?.0,
            class_index,
            image_h,
            image_w,
            cam_order(order)?,
        )?;
        write_out(out, boxed(ImbaTensor(map.to_tensor())), "out")
    })
}

/// Alignment report as JSON (the `align` command's output).
///
/// # Safety
/// Handles must be live; `out` must be writable. Free the string with [`imba_string_free`].
#[no_mangle]
pub unsafe extern "C" fn imba_alignment_report_json(
    manifest: *const ImbaManifest,
    annotations: *const ImbaAnnotations,
    head: *const ImbaHead,
    order: u32,
    out: *mut *mut c_char,
) -> ImbaStatus {
    guard(|| {
        let report = alignment::aggregate_alignment(
            &ref_arg(manifest, "manifest")?.0,
            &ref_arg(annotations, "annotations")?.0,
            &ref_arg(head, "head")?.0,
            cam_order(order)?,
        )?;
        write_json(&report, out)
    })
}

/// Concept report as JSON (the `dissect` command's output). `connectivity` is 4 or 8.
///
/// # Safety
/// Handles must be live; `out` must be writable. Free the string with [`imba_string_free`].
#[no_mangle]
pub unsafe extern "C" fn imba_concept_report_json(
    manifest: *const ImbaManifest,
    annotations: *const ImbaAnnotations,
    q: f64,
    connectivity: u32,
    out: *mut *mut c_char,
) -> ImbaStatus {
    guard(|| {
        let manifest = &ref_arg(manifest, "manifest")?.0;
        let conn = u8::try_from(connectivity)
            .map_err(|_| invalid(format!("connectivity must be 4 or 8, got {connectivity}")))
            .and_then(|c| Connectivity::try_from(c).map_err(FfiError::from))?;
        let config = DissectionConfig::new(q, conn)?;
        let thresholds = dissection::channel_thresholds(manifest, &config)?;
        let report = dissection::concept_report(
            manifest,
            &ref_arg(annotations, "annotations")?.0,
            &thresholds,
            &config,
        )?;
        write_json(&report, out)
    })
}

/// Metrics report as JSON (the `metrics` command's output).
///
/// # Safety
/// `manifest` must be live; `out` must be writable. Free the string with [`imba_string_free`].
#[no_mangle]
pub unsafe extern "C" fn imba_metrics_report_json(
    manifest: *const ImbaManifest,
    out: *mut *mut c_char,
) -> ImbaStatus {
    guard(|| {
        let report = metrics::manifest_metrics(&ref_arg(manifest, "manifest")?.0)?;
        write_json(&report, out)
    })
}

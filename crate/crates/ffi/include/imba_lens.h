/* C interface to imba-lens. */

#ifndef IMBA_LENS_H
#define IMBA_LENS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImbaStatus {
  ImbaStatus_Ok = 0,
  ImbaStatus_NullPointer = 1,
  ImbaStatus_InvalidArgument = 2,
  ImbaStatus_Io = 3,
  ImbaStatus_Format = 4,
  ImbaStatus_Shape = 5,
  ImbaStatus_Data = 6,
  ImbaStatus_Utf8 = 7,
  ImbaStatus_Panic = 8,
} ImbaStatus;

typedef enum ImbaLossKind {
  ImbaLossKind_Bce = 0,
  ImbaLossKind_Wbce = 1,
  ImbaLossKind_Focal = 2,
  ImbaLossKind_CbFocal = 3,
} ImbaLossKind;

typedef enum ImbaReduction {
  ImbaReduction_Sum = 0,
  ImbaReduction_Mean = 1,
} ImbaReduction;

typedef enum ImbaCamOrder {
  ImbaCamOrder_NormalizeFirst = 0,
  ImbaCamOrder_UpsampleFirst = 1,
} ImbaCamOrder;

typedef struct ImbaAnnotations ImbaAnnotations;

typedef struct ImbaHead ImbaHead;

typedef struct ImbaManifest ImbaManifest;

typedef struct ImbaTensor ImbaTensor;

/**
 * Loss selection. `kind` holds an `ImbaLossKind` value; `alpha` is read by
 * Focal, `beta` by CBFocal, `gamma` by both.
 */
typedef struct ImbaLossParams {
  uint32_t kind;
  double alpha;
  double gamma;
  double beta;
} ImbaLossParams;

typedef struct ImbaClassCounts {
  uint64_t n_plus;
  uint64_t n_minus;
} ImbaClassCounts;

/**
 * Box in image pixels covering `[x, x+w) x [y, y+h)`.
 */
typedef struct ImbaBox {
  double x;
  double y;
  double w;
  double h;
} ImbaBox;

typedef struct ImbaAlignment {
  double iobb;
  double ior;
  double total_mass;
  size_t box_area;
  bool zero_mass;
} ImbaAlignment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *imba_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *imba_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void imba_string_free(char *s);

/**
 * Creates a tensor by copying `len` floats laid out row-major over `dims`.
 *
 * # Safety
 * `dims` must point to `ndim` values and `data` to `len` floats; `out` must be writable.
 */
enum ImbaStatus imba_tensor_new(const size_t *dims,
                                size_t ndim,
                                const float *data,
                                size_t len,
                                struct ImbaTensor **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ImbaStatus imba_tensor_read(const char *path, struct ImbaTensor **out);

/**
 * # Safety
 * `tensor` must be a live handle and `path` a NUL-terminated string.
 */
enum ImbaStatus imba_tensor_write(const struct ImbaTensor *tensor, const char *path);

/**
 * Rank of `tensor`, 0 for NULL.
 *
 * # Safety
 * `tensor` must be NULL or a live handle.
 */
size_t imba_tensor_ndim(const struct ImbaTensor *tensor);

/**
 * Extent of `axis`, 0 when out of range or NULL.
 *
 * # Safety
 * `tensor` must be NULL or a live handle.
 */
size_t imba_tensor_dim(const struct ImbaTensor *tensor, size_t axis);

/**
 * Number of elements, 0 for NULL.
 *
 * # Safety
 * `tensor` must be NULL or a live handle.
 */
size_t imba_tensor_len(const struct ImbaTensor *tensor);

/**
 * Borrowed row-major data, valid while the handle lives.
 *
 * # Safety
 * `tensor` must be NULL or a live handle.
 */
const float *imba_tensor_data(const struct ImbaTensor *tensor);

/**
 * # Safety
 * `tensor` must be NULL or a handle not yet freed.
 */
void imba_tensor_free(struct ImbaTensor *tensor);

/**
 * Loads and fully validates a manifest, including every referenced tensor.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ImbaStatus imba_manifest_load(const char *path, struct ImbaManifest **out);

/**
 * # Safety
 * `manifest` must be NULL or a live handle.
 */
size_t imba_manifest_num_classes(const struct ImbaManifest *manifest);

/**
 * # Safety
 * `manifest` must be NULL or a live handle.
 */
size_t imba_manifest_num_images(const struct ImbaManifest *manifest);

/**
 * # Safety
 * `manifest` must be NULL or a handle not yet freed.
 */
void imba_manifest_free(struct ImbaManifest *manifest);

/**
 * Parses a box CSV against the classes and image size of `manifest`.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `manifest` a live handle, `out` writable.
 */
enum ImbaStatus imba_annotations_load(const char *path,
                                      const struct ImbaManifest *manifest,
                                      struct ImbaAnnotations **out);

/**
 * # Safety
 * `annotations` must be NULL or a live handle.
 */
size_t imba_annotations_num_boxes(const struct ImbaAnnotations *annotations);

/**
 * # Safety
 * `annotations` must be NULL or a handle not yet freed.
 */
void imba_annotations_free(struct ImbaAnnotations *annotations);

/**
 * Loads an `[M, C]` head tensor and an optional `[M]` bias (`bias_path` may be NULL).
 *
 * # Safety
 * `path` must be a NUL-terminated string, `bias_path` NULL or one, `out` writable.
 */
enum ImbaStatus imba_head_load(const char *path, const char *bias_path, struct ImbaHead **out);

/**
 * # Safety
 * `head` must be NULL or a handle not yet freed.
 */
void imba_head_free(struct ImbaHead *head);

/**
 * Per-class weights `(w+, w-)` at probability `p`. `counts` may be NULL for
 * methods that do not use class counts.
 *
 * # Safety
 * `params` must be valid, `counts` NULL or valid, outputs writable.
 */
enum ImbaStatus imba_class_weights(const struct ImbaLossParams *params,
                                   const struct ImbaClassCounts *counts,
                                   double p,
                                   double *w_plus,
                                   double *w_minus);

/**
 * Loss over `n_samples x n_classes` probabilities and labels (row-major).
 * `counts` holds `n_classes` entries, or NULL to derive them from `labels`.
 *
 * # Safety
 * Arrays must hold the stated number of elements; `out` must be writable.
 */
enum ImbaStatus imba_loss_value(const struct ImbaLossParams *params,
                                const struct ImbaClassCounts *counts,
                                const double *probs,
                                const uint8_t *labels,
                                size_t n_samples,
                                size_t n_classes,
                                uint32_t reduction_kind,
                                double *out);

/**
 * Gradient of the loss with respect to each logit, written to `grad`
 * (`n_samples x n_classes`). `counts` as for [`imba_loss_value`].
 *
 * # Safety
 * Arrays must hold the stated number of elements; `grad` must be writable for as many.
 */
enum ImbaStatus imba_loss_grad_logits(const struct ImbaLossParams *params,
                                      const struct ImbaClassCounts *counts,
                                      const double *logits,
                                      const uint8_t *labels,
                                      size_t n_samples,
                                      size_t n_classes,
                                      uint32_t reduction_kind,
                                      double *grad);

/**
 * Tie-corrected AUROC of `n` scores (any real values) against 0/1 labels.
 *
 * # Safety
 * Arrays must hold `n` elements; `out` must be writable.
 */
enum ImbaStatus imba_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Step-wise average precision, positives ranked last within ties.
 *
 * # Safety
 * Arrays must hold `n` elements; `out` must be writable.
 */
enum ImbaStatus imba_average_precision(const double *scores,
                                       const uint8_t *labels,
                                       size_t n,
                                       double *out);

/**
 * Soft IoBB / IoR of a `height x width` heatmap with values in `[0, 1]`
 * against the union of `n_boxes` boxes.
 *
 * # Safety
 * `map` must hold `height * width` values, `boxes` `n_boxes` entries; `out` must be writable.
 */
enum ImbaStatus imba_soft_alignment(const double *map,
                                    size_t height,
                                    size_t width,
                                    const struct ImbaBox *boxes,
                                    size_t n_boxes,
                                    struct ImbaAlignment *out);

/**
 * Normalized, upsampled CAM of class `class_index` for a `[C, H, W]`
 * feature tensor, returned as a new `[image_h, image_w]` tensor.
 *
 * # Safety
 * `features` and `head` must be live handles; `out` must be writable.
 */
enum ImbaStatus imba_compute_cam(const struct ImbaTensor *features,
                                 const struct ImbaHead *head,
                                 size_t class_index,
                                 size_t image_h,
                                 size_t image_w,
                                 uint32_t order,
                                 struct ImbaTensor **out);

/**
 * Alignment report as JSON (the `align` command's output).
 *
 * # Safety
 * Handles must be live; `out` must be writable. Free the string with [`imba_string_free`].
 */
enum ImbaStatus imba_alignment_report_json(const struct ImbaManifest *manifest,
                                           const struct ImbaAnnotations *annotations,
                                           const struct ImbaHead *head,
                                           uint32_t order,
                                           char **out);

/**
 * Concept report as JSON (the `dissect` command's output). `connectivity` is 4 or 8.
 *
 * # Safety
 * Handles must be live; `out` must be writable. Free the string with [`imba_string_free`].
 */
enum ImbaStatus imba_concept_report_json(const struct ImbaManifest *manifest,
                                         const struct ImbaAnnotations *annotations,
                                         double q,
                                         uint32_t connectivity,
                                         char **out);

/**
 * Metrics report as JSON (the `metrics` command's output).
 *
 * # Safety
 * `manifest` must be live; `out` must be writable. Free the string with [`imba_string_free`].
 */
enum ImbaStatus imba_metrics_report_json(const struct ImbaManifest *manifest, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMBA_LENS_H */

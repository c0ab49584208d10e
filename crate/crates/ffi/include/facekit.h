#ifndef FACEKIT_H
#define FACEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FkStatus {
  FK_STATUS_OK = 0,
  FK_STATUS_NULL_POINTER = 1,
  FK_STATUS_INVALID_ARGUMENT = 2,
  FK_STATUS_OUT_OF_RANGE = 3,
  FK_STATUS_PARSE = 4,
  FK_STATUS_IO = 5,
  FK_STATUS_UTF8 = 6,
  FK_STATUS_PANIC = 7,
} FkStatus;

/**
 * Anchors of one input size, in level → row → column → slot order.
 */
typedef struct FkAnchorSet FkAnchorSet;

/**
 * Parsed WIDER FACE annotations.
 */
typedef struct FkAnnotations FkAnnotations;

typedef struct FkBox {
  double x_min;
  double y_min;
  double x_max;
  double y_max;
} FkBox;

typedef struct FkDelta {
  double dx;
  double dy;
  double dw;
  double dh;
} FkDelta;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *fk_last_error_message(void);

/**
 * Intersection over union; 0 when either box has zero area.
 */
double fk_iou(struct FkBox a, struct FkBox b);

/**
 * Regression target of `gt` relative to `anchor`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `FkDelta`.
 */
enum FkStatus fk_encode(struct FkBox anchor, struct FkBox gt, struct FkDelta *out);

/**
 * Inverse of [`fk_encode`].
 */
struct FkBox fk_decode(struct FkBox anchor, struct FkDelta delta);

/**
 * Builds the default anchor pyramid for a `width × height` input.
 *
 * # Safety
 * `out` must be null or point to writable memory for one pointer.
 */
enum FkStatus fk_anchors_new(uint32_t width, uint32_t height, struct FkAnchorSet **out);

/**
 * Number of anchors; 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle from [`fk_anchors_new`].
 */
size_t fk_anchors_len(const struct FkAnchorSet *set);

/**
 * Box and pyramid level index of anchor `index`.
 *
 * # Safety
 * `set` must be a live handle; `out_box` and `out_level` must be null or
 * writable.
 */
enum FkStatus fk_anchors_get(const struct FkAnchorSet *set,
                             size_t index,
                             struct FkBox *out_box,
                             uint32_t *out_level);

/**
 * # Safety
 * `set` must be null or a handle from [`fk_anchors_new`] not yet freed.
 */
void fk_anchors_free(struct FkAnchorSet *set);

/**
 * Greedy NMS. Writes the indices of the kept boxes, best first, to
 * `out_indices` (capacity `n`) and their number to `out_len`.
 *
 * # Safety
 * `boxes` and `scores` must hold `n` elements and `out_indices` room for `n`
 * indices; all may be null only when `n == 0`.
 */
enum FkStatus fk_nms(const struct FkBox *boxes,
                     const double *scores,
                     size_t n,
                     double iou_threshold,
                     size_t max_keep,
                     size_t *out_indices,
                     size_t *out_len);

/**
 * Sigmoid focal loss of one logit and its derivative.
 *
 * # Safety
 * `out_loss` and `out_grad` must be null or writable.
 */
enum FkStatus fk_focal_loss(double logit,
                            uint8_t label,
                            double alpha,
                            double gamma,
                            double *out_loss,
                            double *out_grad);

/**
 * Smooth-L1 loss of one coordinate and its derivative.
 *
 * # Safety
 * `out_loss` and `out_grad` must be null or writable.
 */
enum FkStatus fk_smooth_l1(double pred, double target, double *out_loss, double *out_grad);

/**
 * Parses annotation text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum FkStatus fk_annotations_parse(const char *text, struct FkAnnotations **out);

/**
 * Reads an annotation file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FkStatus fk_annotations_read_file(const char *path, struct FkAnnotations **out);

/**
 * Number of images; 0 for a null handle.
 *
 * # Safety
 * `ann` must be null or a live handle.
 */
size_t fk_annotations_image_count(const struct FkAnnotations *ann);

/**
 * Number of faces of image `image`.
 *
 * # Safety
 * `ann` must be a live handle; `out` must be writable.
 */
enum FkStatus fk_annotations_face_count(const struct FkAnnotations *ann, size_t image, size_t *out);

/**
 * Box and invalid flag of face `face` of image `image`.
 *
 * # Safety
 * `ann` must be a live handle; `out_box` and `out_invalid` must be writable.
 */
enum FkStatus fk_annotations_face(const struct FkAnnotations *ann,
                                  size_t image,
                                  size_t face,
                                  struct FkBox *out_box,
                                  uint8_t *out_invalid);

/**
 * Relative path of image `image` as a NUL-terminated string owned by the
 * handle; null when out of range.
 *
 * # Safety
 * `ann` must be null or a live handle. The string is valid while the handle
 * lives.
 */
char *fk_annotations_path(const struct FkAnnotations *ann, size_t image);

/**
 * Frees a string returned by [`fk_annotations_path`].
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void fk_string_free(char *s);

/**
 * # Safety
 * `ann` must be null or a handle not yet freed.
 */
void fk_annotations_free(struct FkAnnotations *ann);

/**
 * Average precision of pooled, already matched detections: `is_tp[i]` is 1
 * for a true positive and 0 for a false positive.
 *
 * # Safety
 * `scores` and `is_tp` must hold `n` elements (may be null when `n == 0`);
 * `out_ap` must be writable.
 */
enum FkStatus fk_average_precision(const double *scores,
                                   const uint8_t *is_tp,
                                   size_t n,
                                   size_t total_gt,
                                   double *out_ap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACEKIT_H */

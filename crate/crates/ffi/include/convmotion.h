#ifndef CONVMOTION_H
#define CONVMOTION_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_IO = 3,
  CM_STATUS_PARSE = 4,
  CM_STATUS_SHAPE = 5,
  CM_STATUS_FINGERPRINT = 6,
  CM_STATUS_NUMERIC = 7,
  CM_STATUS_PANIC = 8,
} CmStatus;

// A checkpoint paired with the statistics it was trained with.
typedef struct CmModel CmModel;

// Load a checkpoint and the statistics file it was trained with. On
// success `*out` owns a model that must be released with
// [`cm_model_free`].
//
// # Safety
// `checkpoint_path` and `stats_path` must be NUL-terminated strings and
// `out` must point to writable storage for one pointer.
enum CmStatus cm_model_load(const char *checkpoint_path,
                            const char *stats_path,
                            struct CmModel **out);

// Release a model from [`cm_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a pointer from [`cm_model_load`] not yet freed.
void cm_model_free(struct CmModel *model);

// Seed frames the model consumes; 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t cm_model_seed_len(const struct CmModel *model);

// Frames one prediction produces; 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t cm_model_target_len(const struct CmModel *model);

// Width of raw input and output frames; 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t cm_model_raw_dim(const struct CmModel *model);

// Width of the normalized frames the network sees; 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t cm_model_pose_dim(const struct CmModel *model);

// Continue `frames` raw frames of width `width` (row-major) by
// `target_len` frames written row-major to `out`, which holds `out_len`
// values. The last `seed_len` input frames seed the model.
//
// # Safety
// `model` must be a live model, `seed` must point to `frames * width`
// readable values and `out` to `out_len` writable values.
enum CmStatus cm_model_predict(const struct CmModel *model,
                               const double *seed,
                               size_t frames,
                               size_t width,
                               double *out,
                               size_t out_len);

// Rotation matrix (row-major, 9 values) of an exponential map (3 values).
//
// # Safety
// `r` must point to 3 readable values and `out` to 9 writable values.
enum CmStatus cm_expmap_to_rotmat(const double *r, double *out);

// Euler angles (3 values) of a row-major rotation matrix (9 values).
//
// # Safety
// `m` must point to 9 readable values and `out` to 3 writable values.
enum CmStatus cm_rotmat_to_euler(const double *m, double *out);

// Euler-angle distance between two raw exponential-map frames of `len`
// values. `include` holds `len` flags, nonzero meaning the dimension
// counts; null includes every dimension.
//
// # Safety
// `pred` and `truth` must point to `len` readable values, `include` must
// be null or point to `len` readable bytes, and `out` must be writable.
enum CmStatus cm_euler_error(const double *pred,
                             const double *truth,
                             const uint8_t *include,
                             size_t len,
                             double *out);

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on this thread.
const char *cm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *cm_version(void);

#endif  /* CONVMOTION_H */

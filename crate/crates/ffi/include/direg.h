#ifndef DIREG_H
#define DIREG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DiregStatus {
  DIREG_STATUS_OK = 0,
  DIREG_STATUS_NULL_POINTER = 1,
  DIREG_STATUS_INVALID_ARGUMENT = 2,
  DIREG_STATUS_IO = 3,
  DIREG_STATUS_FORMAT = 4,
  DIREG_STATUS_NUMERICAL = 5,
  DIREG_STATUS_UNSUPPORTED = 6,
  DIREG_STATUS_PANIC = 7,
} DiregStatus;

// Opaque point cloud.
typedef struct DiregCloud DiregCloud;

// Opaque descriptor network checkpoint.
typedef struct DiregModel DiregModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. Valid until the next
// failing call on the same thread; empty when none failed.
const char *direg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *direg_version(void);

// Builds a cloud from `n` points of `dim` (2 or 3) coordinates and `k`
// features per point. `features` may be null when `k` is 0.
//
// # Safety
// `coords` must hold `n * dim` doubles, `features` `n * k` doubles, and
// `out` must be writable.
enum DiregStatus direg_cloud_new(size_t dim,
                                 const double *coords,
                                 size_t n,
                                 size_t k,
                                 const double *features,
                                 struct DiregCloud **out);

// Reads a PLY cloud written by the library.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum DiregStatus direg_cloud_load(const char *path, struct DiregCloud **out);

// Number of points, 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t direg_cloud_len(const struct DiregCloud *cloud);

// Spatial dimension, 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t direg_cloud_dim(const struct DiregCloud *cloud);

// # Safety
// `cloud` must be null or a handle not yet freed.
void direg_cloud_free(struct DiregCloud *cloud);

// Loads a checkpoint written by `direg train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum DiregStatus direg_model_load(const char *path, struct DiregModel **out);

// # Safety
// `model` must be null or a handle not yet freed.
void direg_model_free(struct DiregModel *model);

// Estimates the transform mapping `a` onto `b`. With a null `model` FPFH
// descriptors are used (3D only). `voxel_size <= 0` picks the model's
// voxel size, or 0.1 (3D) / 0.5 (2D) without a model. Writes a row-major
// 4×4 matrix to `out_matrix` and, when non-null, the inlier ratio.
//
// # Safety
// Handles must be live, `out_matrix` must hold 16 doubles and
// `out_inlier_ratio` must be null or writable.
enum DiregStatus direg_register(const struct DiregModel *model,
                                const struct DiregCloud *a,
                                const struct DiregCloud *b,
                                double voxel_size,
                                size_t ransac_iterations,
                                uint64_t seed,
                                double *out_matrix,
                                double *out_inlier_ratio);

// Least-squares rigid transform taking `src[i]` onto `dst[i]` for `n`
// points of `dim` coordinates. Writes a row-major 4×4 matrix.
//
// # Safety
// `src` and `dst` must hold `n * dim` doubles; `out_matrix` 16 doubles.
enum DiregStatus direg_kabsch(size_t dim,
                              const double *src,
                              const double *dst,
                              size_t n,
                              double *out_matrix);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIREG_H */

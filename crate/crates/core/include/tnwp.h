/*
 * tnwp.h - flat C interface to the tnwp inference and adjoint library.
 *
 * All multi-dimensional buffers are COLUMN-MAJOR (first index fastest), as
 * produced natively by Fortran arrays. Extents are passed as int64_t arrays
 * plus a rank. Every function returns one of the TNWP_STATUS_* codes; after
 * a non-zero code, tnwp_last_error_detail() describes the failure for the
 * calling thread.
 */
#ifndef TNWP_H
#define TNWP_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef uint64_t tnwp_handle;

#define TNWP_STATUS_OK                 0
#define TNWP_STATUS_BAD_HANDLE         1
#define TNWP_STATUS_SHAPE_MISMATCH     2
#define TNWP_STATUS_IO_ERROR           3
#define TNWP_STATUS_DEVICE_UNAVAILABLE 4
#define TNWP_STATUS_INVALID_ARGUMENT   5
#define TNWP_STATUS_INTERNAL_ERROR     6

/* Load a model container. device is "cpu" or "gpu" ("gpu" currently returns
 * TNWP_STATUS_DEVICE_UNAVAILABLE). out_handle is written only on success. */
int32_t tnwp_model_new(const char *path, const char *device, tnwp_handle *out_handle);

/* y = M(x) */
int32_t tnwp_model_forward(tnwp_handle handle,
                           const double *x, const int64_t *x_extents, int64_t x_rank,
                           double *y, const int64_t *y_extents, int64_t y_rank);

/* dy = J(x) * dx */
int32_t tnwp_model_tangent(tnwp_handle handle,
                           const double *x, const int64_t *x_extents, int64_t x_rank,
                           const double *dx, const int64_t *dx_extents, int64_t dx_rank,
                           double *dy, const int64_t *dy_extents, int64_t dy_rank);

/* xstar = J(x)^T * ystar */
int32_t tnwp_model_adjoint(tnwp_handle handle,
                           const double *x, const int64_t *x_extents, int64_t x_rank,
                           const double *ystar, const int64_t *ystar_extents, int64_t ystar_rank,
                           double *xstar, const int64_t *xstar_extents, int64_t xstar_rank);

/* Batched forward. The batch is the last extent of xs and ys, so each
 * sample is contiguous. Samples are processed chunk at a time; the output
 * does not depend on chunk. batch == 0 is a no-op. */
int32_t tnwp_model_forward_batch(tnwp_handle handle,
                                 const double *xs, const int64_t *xs_extents, int64_t xs_rank,
                                 double *ys, const int64_t *ys_extents, int64_t ys_rank,
                                 int64_t batch, int64_t chunk);

/* Release a model immediately. A second delete returns TNWP_STATUS_BAD_HANDLE. */
int32_t tnwp_model_delete(tnwp_handle handle);

/* Copy the calling thread's last error detail (empty after success) into
 * buffer, truncated and NUL-terminated within capacity bytes. Returns 0. */
int32_t tnwp_last_error_detail(char *buffer, int64_t capacity);

#ifdef __cplusplus
}
#endif

#endif /* TNWP_H */

#ifndef CODED_QR_H
#define CODED_QR_H

#pragma once

/* Generated by cbindgen from coded-qr-ffi; do not edit by hand. */

#include <stdint.h>
#include <stddef.h>
#include <stdbool.h>

/**
 * Fault-injection pattern applied at every iteration boundary.
 */
typedef enum {
  CQR_INJECT_NONE = 0,
  CQR_INJECT_REVERSE_DIAGONAL = 1,
  CQR_INJECT_RANDOM = 2,
} CqrInject;

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  CQR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CQR_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid configuration or dimensions.
   */
  CQR_STATUS_CONFIG_ERROR = 2,
  /**
   * Numerical failure (rank deficiency, singular system).
   */
  CQR_STATUS_NUMERIC_ERROR = 3,
  /**
   * More failures than the code tolerates.
   */
  CQR_STATUS_FAULT_ERROR = 4,
} CqrStatus;

/**
 * Checksum storage placement.
 */
typedef enum {
  CQR_STORAGE_OUT_OF_NODE = 0,
  CQR_STORAGE_IN_NODE = 1,
} CqrStorage;

/**
 * Opaque dense matrix handle.
 */
typedef struct CqrMatrix CqrMatrix;

/**
 * Grid, code, and cost-model options for one run.
 */
typedef struct {
  /**
   * Matrix order; must be divisible by `p`.
   */
  size_t n;
  /**
   * Grid dimension (the grid is `p x p`).
   */
  size_t p;
  /**
   * Failure budget per grid row and column; at most `p / 2`.
   */
  size_t f;
  CqrStorage storage;
  CqrInject inject;
  uint64_t seed;
  double alpha;
  double beta;
  double gamma;
} CqrOptions;

/**
 * Analytic overhead report, mirroring the cost-model closed forms.
 */
typedef struct {
  double t_qr_lower_bound;
  double t_enc;
  double t_post;
  double t_recov;
  double t_coding;
  double ratio_coding;
} CqrOverheads;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cqr_last_error(void);

/**
 * Creates a matrix from a row-major buffer of `rows * cols` doubles.
 * Returns null if the buffer is null or contains non-finite values.
 *
 * # Safety
 * `data` must point to at least `rows * cols` readable doubles.
 */
CqrMatrix *cqr_matrix_create(size_t rows, size_t cols, const double *data);

/**
 * Matrix with entries iid Unif(0,1) drawn from the seed.
 */
CqrMatrix *cqr_matrix_random(size_t rows, size_t cols, uint64_t seed);

/**
 * # Safety
 * `m` must be a live handle from this library or null.
 */
size_t cqr_matrix_rows(const CqrMatrix *m);

/**
 * # Safety
 * `m` must be a live handle from this library or null.
 */
size_t cqr_matrix_cols(const CqrMatrix *m);

/**
 * Copies the matrix out row-major. `len` is the capacity of `out` in
 * doubles and must be at least `rows * cols`.
 *
 * # Safety
 * `m` must be a live handle; `out` must point to `len` writable doubles.
 */
CqrStatus cqr_matrix_copy_data(const CqrMatrix *m, double *out, size_t len);

/**
 * Frees a matrix handle; null is a no-op.
 *
 * # Safety
 * `m` must be a handle previously returned by this library, not yet
 * freed.
 */
void cqr_matrix_free(CqrMatrix *m);

/**
 * Solves `A x = b` through the coded pipeline under the configured fault
 * schedule. On success writes a new handle holding the `n x 1` solution
 * to `x_out` and, when non-null, the relative residual to
 * `residual_out`.
 *
 * # Safety
 * `opts`, `a`, `b`, and `x_out` must be valid pointers; `a` and `b` must
 * be live handles.
 */
CqrStatus cqr_solve(const CqrOptions *opts,
                    const CqrMatrix *a,
                    const CqrMatrix *b,
                    CqrMatrix **x_out,
                    double *residual_out);

/**
 * Coded factorization `A = Q1 R1`. Writes new handles for the retrieved
 * factors; both are `n x n`, `R1` upper triangular.
 *
 * # Safety
 * `opts`, `a`, `q1_out`, and `r1_out` must be valid pointers; `a` must
 * be a live handle.
 */
CqrStatus cqr_factorize(const CqrOptions *opts,
                        const CqrMatrix *a,
                        CqrMatrix **q1_out,
                        CqrMatrix **r1_out);

/**
 * Empirical MDS check of the structured Q-factor generator for one seed:
 * whether every square submatrix is full-rank, the least |det|, and the
 * largest condition number.
 *
 * # Safety
 * Non-null out-pointers must be writable.
 */
CqrStatus cqr_mds_check(size_t p,
                        size_t f,
                        uint64_t seed,
                        bool *is_mds_out,
                        double *min_det_out,
                        double *max_cond_out);

/**
 * The minimum number of in-node checksum blocks tolerating `f` of `p`
 * node failures with `l` data blocks.
 *
 * # Safety
 * `k_out` must be null or writable.
 */
CqrStatus cqr_innode_min_checksums(size_t l, size_t p, size_t f, size_t *k_out);

/**
 * Closed-form overhead report for a configuration.
 *
 * # Safety
 * `opts` and `out` must be valid pointers.
 */
CqrStatus cqr_analytic_overheads(const CqrOptions *opts, CqrOverheads *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CODED_QR_H */

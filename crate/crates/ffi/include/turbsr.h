#ifndef TURBSR_H
#define TURBSR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 1..=18 match the CLI exit codes.
 */
typedef enum TsrStatus {
  TSR_STATUS_OK = 0,
  TSR_STATUS_INVALID_GRID = 1,
  TSR_STATUS_GRID_MISMATCH = 2,
  TSR_STATUS_INVALID_AXIS = 3,
  TSR_STATUS_NON_FINITE = 4,
  TSR_STATUS_NON_POSITIVE_DENSITY = 5,
  TSR_STATUS_INVALID_STATS = 6,
  TSR_STATUS_EMPTY_INPUT = 7,
  TSR_STATUS_SIZE_MISMATCH = 8,
  TSR_STATUS_IO = 9,
  TSR_STATUS_METADATA = 10,
  TSR_STATUS_MISSING_CHANNEL = 11,
  TSR_STATUS_MANIFEST = 12,
  TSR_STATUS_INVALID_FACTOR = 13,
  TSR_STATUS_DOMAIN_TOO_SMALL = 14,
  TSR_STATUS_OUT_OF_CELL = 15,
  TSR_STATUS_ZERO_TRUTH = 16,
  TSR_STATUS_NON_CUBIC = 17,
  TSR_STATUS_INVALID_ARGUMENT = 18,
  TSR_STATUS_NULL_POINTER = 100,
  TSR_STATUS_PANIC = 101,
} TsrStatus;

/**
 * Opaque flow state handle.
 */
typedef struct TsrFlowState TsrFlowState;

typedef struct TsrChannelStats {
  double rho_mean;
  double rho_std;
  double vel_mean;
  double vel_std;
} TsrChannelStats;

typedef struct TsrSsimConfig {
  size_t window;
  double c1;
  double c2;
} TsrSsimConfig;

/**
 * Scalar metrics of one pair. Subgrid entries are NaN when the coarse grid
 * is too small to evaluate them.
 */
typedef struct TsrMetricReport {
  double ssim_rho_u;
  double ssim_sgs;
  double nrmse_rho_u;
  double nrmse_sgs;
  double nrmse_ek;
  double nrmse_eps;
  double ek_true;
  double ek_pred;
  double eps_true;
  double eps_pred;
} TsrMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tsr_last_error_message(void);

/**
 * Static name of a status code, e.g. `"E_SIZE_MISMATCH"`; `"E_UNKNOWN"` for
 * values outside [`TsrStatus`].
 */
const char *tsr_status_name(int32_t status);

/**
 * Builds a state from four caller-owned buffers (copied).
 *
 * # Safety
 * Each buffer must hold `nx * ny * nz` readable doubles; `out` must be writable.
 */
enum TsrStatus tsr_flow_state_create(size_t nx,
                                     size_t ny,
                                     size_t nz,
                                     double dx,
                                     const double *rho,
                                     const double *u,
                                     const double *v,
                                     const double *w,
                                     struct TsrFlowState **out);

/**
 * Reads `<VAR>_id<hash>.dat` channel files from `dir`.
 *
 * # Safety
 * `dir` and `hash` must be NUL-terminated strings; `out` must be writable.
 */
enum TsrStatus tsr_flow_state_load(const char *dir,
                                   const char *hash,
                                   size_t nx,
                                   size_t ny,
                                   size_t nz,
                                   double dx,
                                   struct TsrFlowState **out);

/**
 * Writes the four channels of `state` into `dir` (created if missing).
 *
 * # Safety
 * `state` must be a live handle; `dir` and `hash` NUL-terminated strings.
 */
enum TsrStatus tsr_flow_state_save(const struct TsrFlowState *state,
                                   const char *dir,
                                   const char *hash);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `state` must be NULL or a handle not yet freed.
 */
void tsr_flow_state_free(struct TsrFlowState *state);

/**
 * Extents into `dims[0..3]` and spacing into `dx` (either may be NULL).
 *
 * # Safety
 * `state` must be a live handle; non-NULL outputs must be writable.
 */
enum TsrStatus tsr_flow_state_dims(const struct TsrFlowState *state, size_t *dims, double *dx);

/**
 * Copies channel `channel` (0 = density, 1..=3 = velocity) into `buf`.
 *
 * # Safety
 * `state` must be a live handle; `buf` must hold `len` writable doubles.
 */
enum TsrStatus tsr_flow_state_channel(const struct TsrFlowState *state,
                                      uint32_t channel,
                                      double *buf,
                                      size_t len);

/**
 * Favre-filtered coarse state.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum TsrStatus tsr_favre_coarsen(const struct TsrFlowState *state,
                                 size_t factor,
                                 struct TsrFlowState **out);

/**
 * Tricubic upsampling of every channel by `factor`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum TsrStatus tsr_tricubic_upsample(const struct TsrFlowState *state,
                                     size_t factor,
                                     struct TsrFlowState **out);

/**
 * Pooled normalization statistics over `n` states.
 *
 * # Safety
 * `states` must point to `n` live handles; `out` must be writable.
 */
enum TsrStatus tsr_compute_stats(const struct TsrFlowState *const *states,
                                 size_t n,
                                 struct TsrChannelStats *out);

struct TsrSsimConfig tsr_ssim_config_default(void);

/**
 * Full metric report. `stats` NULL normalizes with statistics of `truth`;
 * `ssim` NULL uses the default window and constants.
 *
 * # Safety
 * Handles must be live; non-NULL pointers must be valid; `out` writable.
 */
enum TsrStatus tsr_evaluate(const struct TsrFlowState *pred,
                            const struct TsrFlowState *truth,
                            size_t factor,
                            const struct TsrChannelStats *stats,
                            const struct TsrSsimConfig *ssim,
                            struct TsrMetricReport *out);

/**
 * SSIM of two `nx * ny * nz` buffers.
 *
 * # Safety
 * `a` and `b` must hold `nx * ny * nz` doubles; `cfg` may be NULL; `out` writable.
 */
enum TsrStatus tsr_ssim3d(const double *a,
                          const double *b,
                          size_t nx,
                          size_t ny,
                          size_t nz,
                          const struct TsrSsimConfig *cfg,
                          double *out);

/**
 * `sum (truth - pred)^2 / sum truth^2`, square-rooted when `sqrt` is true.
 *
 * # Safety
 * `pred` and `truth` must hold `len` doubles; `out` must be writable.
 */
enum TsrStatus tsr_nrmse(const double *pred,
                         const double *truth,
                         size_t len,
                         bool sqrt,
                         double *out);

/**
 * Tricubic reconstruction cost of an `nx * ny * nz` output; 0 for an invalid grid.
 */
uint64_t tsr_flops(size_t nx, size_t ny, size_t nz, size_t n_channels, bool dense);

/**
 * Zero entries of the integer tricubic coefficient matrix.
 */
size_t tsr_tricubic_zero_count(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TURBSR_H */

#ifndef MFBANK_H
#define MFBANK_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfbMfgField {
  // Value function, row-major by time level.
  MFB_MFG_FIELD_VALUE = 0,
  // Density, row-major by time level.
  MFB_MFG_FIELD_DENSITY = 1,
  // Default rate per time level.
  MFB_MFG_FIELD_DEFAULT_RATE = 2,
  // Mean reserve per time level.
  MFB_MFG_FIELD_MEAN = 3,
} MfbMfgField;

// Status codes returned by every fallible call.
typedef enum MfbStatus {
  MFB_STATUS_OK = 0,
  MFB_STATUS_NULL_POINTER = 1,
  MFB_STATUS_INVALID_PARAMETER = 2,
  MFB_STATUS_INVALID_INPUT = 3,
  // A solver failed: no bracket, singular system, Newton or quadrature failure.
  MFB_STATUS_NUMERICAL = 4,
  MFB_STATUS_BUFFER_TOO_SMALL = 5,
  MFB_STATUS_PANIC = 6,
} MfbStatus;

// Opaque mean-field game solution handle.
typedef struct MfbMfgSolution MfbMfgSolution;

// Opaque stationary-density handle.
typedef struct MfbStationary MfbStationary;

// Model constants; mirrors the library's parameter set.
typedef struct MfbModelParams {
  double a;
  double x0;
  double sigma;
  double alpha;
  double gamma;
  double q;
  double epsilon;
  double r;
} MfbModelParams;

// Grid and iteration controls for the mean-field game solver.
typedef struct MfbMfgOptions {
  double domain;
  double horizon;
  size_t n_space;
  size_t n_time;
  double outer_tol;
  size_t outer_max;
  double newton_tol;
  size_t newton_max;
  // Initial density: Gaussian bump centered here, shifted to vanish at 0.
  double m0_center;
  double m0_std;
  // Nonzero: use the quadratic exit cost and boundary data with the
  // compatible damping weight instead of a zero exit cost.
  int32_t lq_exit_cost;
} MfbMfgOptions;

// Coefficients of the quadratic stationary value function.
typedef struct MfbLqCoefficients {
  double curvature;
  double slope;
  double offset;
  double gamma_star;
  double exit_cost;
  double a_eff;
  double e0_eff;
  double mbar;
} MfbLqCoefficients;

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL, or
// 0 when there is no error.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t mfb_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *mfb_version(void);

// Default model constants.
struct MfbModelParams mfb_model_params_default(void);

// Default solver controls: `[0, 10] x [0, 10]`, 200 x 100 cells, bump at 2.
struct MfbMfgOptions mfb_mfg_options_default(void);

// Stationary default rate for unit volatility.
//
// # Safety
// `out` must be null or valid for one write.
enum MfbStatus mfb_solve_e0(double a, double x0, double tol, double *out);

// Builds the stationary density for the given constants.
//
// # Safety
// `out` must be null or valid for one write. The handle is released with
// [`mfb_stationary_free`].
enum MfbStatus mfb_stationary_new(double a, double x0, double sigma, struct MfbStationary **out);

// # Safety
// `h` must be null or a handle from [`mfb_stationary_new`] not yet freed.
void mfb_stationary_free(struct MfbStationary *h);

// Default rate of the stationary law.
//
// # Safety
// `h` must be a live handle; `out` valid for one write.
enum MfbStatus mfb_stationary_e0(const struct MfbStationary *h, double *out);

// Evaluates the density at `n` points.
//
// # Safety
// `h` must be a live handle; `x` and `out` must each hold `n` doubles.
enum MfbStatus mfb_stationary_pdf(const struct MfbStationary *h,
                                  const double *x,
                                  size_t n,
                                  double *out);

// Closed-form linear-quadratic coefficients.
//
// # Safety
// `params` must be readable and `out` writable.
enum MfbStatus mfb_lq_coefficients(const struct MfbModelParams *params,
                                   struct MfbLqCoefficients *out);

// Solves the finite-difference mean-field game.
//
// # Safety
// `params` and `opts` must be readable, `out` writable. The handle is
// released with [`mfb_mfg_free`].
enum MfbStatus mfb_mfg_solve(const struct MfbModelParams *params,
                             const struct MfbMfgOptions *opts,
                             struct MfbMfgSolution **out);

// # Safety
// `h` must be null or a handle from [`mfb_mfg_solve`] not yet freed.
void mfb_mfg_free(struct MfbMfgSolution *h);

// Number of time levels and of space nodes per level.
//
// # Safety
// `h` must be a live handle; the outputs writable.
enum MfbStatus mfb_mfg_shape(const struct MfbMfgSolution *h, size_t *times, size_t *nodes);

// Outer iterations used and whether the tolerance was met (1) or not (0).
//
// # Safety
// `h` must be a live handle; the outputs writable.
enum MfbStatus mfb_mfg_status(const struct MfbMfgSolution *h,
                              size_t *iterations,
                              int32_t *converged);

// Copies one output field (an [`MfbMfgField`] value) into `buf`, which must hold at least `len`
// doubles. The required size is written to `needed` when non-null, also on
// [`MfbStatus::BufferTooSmall`].
//
// # Safety
// `h` must be a live handle; `buf` must be valid for `len` writes.
enum MfbStatus mfb_mfg_copy(const struct MfbMfgSolution *h,
                            int32_t field,
                            double *buf,
                            size_t len,
                            size_t *needed);

#endif  /* MFBANK_H */

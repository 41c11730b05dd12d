#ifndef SICMIMO_H
#define SICMIMO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_DIMENSION = 3,
  SM_STATUS_NUMERICAL = 4,
  SM_STATUS_DIVERGED = 5,
  SM_STATUS_IO = 6,
  SM_STATUS_PANIC = 7,
} SmStatus;

// QAM constellation handle.
typedef struct SmConstellation SmConstellation;

// Complex matrix handle.
typedef struct SmMatrix SmMatrix;

// Channel prior handle.
typedef struct SmPrior SmPrior;

// Tunable subset of the Langevin engine settings. Fields not listed keep the
// library defaults.
typedef struct {
  size_t n_levels;
  double sigma_max;
  double sigma_min;
  size_t steps_per_level;
  double step_scale;
  size_t n_outer;
  // 0 runs annealed gradient ascent, 1 samples the posterior.
  double temperature;
  double step_clamp;
  double convergence_tol;
} SmLangevinParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into the library.
const char *sm_last_error(void);

// Creates a `rows` x `cols` matrix from column-major parts. `im` may be null
// for a real matrix.
//
// # Safety
// `re` (and `im` when non-null) must point to `rows * cols` doubles.
SmStatus sm_matrix_new(size_t rows,
                       size_t cols,
                       const double *re,
                       const double *im,
                       SmMatrix **out);

// Row count, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t sm_matrix_rows(const SmMatrix *m);

// Column count, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t sm_matrix_cols(const SmMatrix *m);

// Copies the entries out column-major. `len` must equal rows * cols; `im`
// may be null to skip the imaginary parts.
//
// # Safety
// `re` (and `im` when non-null) must have room for `len` doubles.
SmStatus sm_matrix_read(const SmMatrix *m, double *re, double *im, size_t len);

// # Safety
// `m` must be null or a handle not yet freed.
void sm_matrix_free(SmMatrix *m);

// Unit-energy square QAM of `order` 4, 16 or 64.
//
// # Safety
// `out` must be valid for writes.
SmStatus sm_constellation_qam(size_t order, SmConstellation **out);

// # Safety
// `c` must be null or a handle not yet freed.
void sm_constellation_free(SmConstellation *c);

// Prior with i.i.d. zero-mean complex Gaussian entries.
//
// # Safety
// `out` must be valid for writes.
SmStatus sm_prior_gaussian(double variance, SmPrior **out);

// Loads a GMM prior file written by `sicmimo fit-prior`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
SmStatus sm_prior_gmm_load(const char *path, SmPrior **out);

// # Safety
// `p` must be null or a handle not yet freed.
void sm_prior_free(SmPrior *p);

SmLangevinParams sm_langevin_params_default(void);

// Per-entry noise variance for `n_u` unit-power users at `snr_db`.
double sm_noise_variance(size_t n_u, double snr_db);

// Ridge-regularized least-squares channel estimate from pilots.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
SmStatus sm_ls_estimate(const SmMatrix *y_p, const SmMatrix *x_p, double ridge, SmMatrix **out);

// Pilot LMMSE channel estimate under an i.i.d. CN(0, prior_var) prior.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
SmStatus sm_lmmse_estimate(const SmMatrix *y_p,
                           const SmMatrix *x_p,
                           double sigma0_sq,
                           double prior_var,
                           SmMatrix **out);

// LMMSE equalization of `y_d` through `h_hat` followed by hard decisions.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
SmStatus sm_lmmse_detect(const SmMatrix *y_d,
                         const SmMatrix *h_hat,
                         double sigma0_sq,
                         const SmConstellation *constellation,
                         SmMatrix **out);

// Joint channel estimation and data detection from the full frame `y`
// (pilot columns first). `full` selects the single-block joint variant
// instead of SIC ordering. `params` may be null for the defaults. The
// channel estimate goes to `out_h` and hard data decisions to `out_x_d`.
//
// # Safety
// Handles must be live; output pointers must be valid for writes.
SmStatus sm_joint_estimate(const SmMatrix *y,
                           const SmMatrix *x_p,
                           const SmConstellation *constellation,
                           const SmPrior *prior,
                           double sigma0_sq,
                           const SmLangevinParams *params,
                           bool full,
                           uint64_t seed,
                           SmMatrix **out_h,
                           SmMatrix **out_x_d);

// `‖ĥ − h‖² / ‖h‖²`.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
SmStatus sm_nmse(const SmMatrix *h_hat, const SmMatrix *h, double *out);

// Fraction of symbols in `x_hat` that differ from `x`.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
SmStatus sm_ser(const SmMatrix *x_hat,
                const SmMatrix *x,
                const SmConstellation *constellation,
                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SICMIMO_H */

#ifndef CVQST_H
#define CVQST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvqstStatus {
  CVQST_STATUS_OK = 0,
  CVQST_STATUS_NULL_POINTER = 1,
  CVQST_STATUS_INVALID_ARGUMENT = 2,
  CVQST_STATUS_DIMENSION_MISMATCH = 3,
  CVQST_STATUS_NON_FINITE = 4,
  CVQST_STATUS_NUMERICAL = 5,
  CVQST_STATUS_IO = 6,
  CVQST_STATUS_BUFFER_TOO_SMALL = 7,
  CVQST_STATUS_PANIC = 8,
} CvqstStatus;

/**
 * How `data` passed to [`cvqst_reconstruct`] is normalized.
 */
typedef enum CvqstDataKind {
  CVQST_DATA_KIND_PROBABILITIES = 0,
  /**
   * Histogram counts; `total_samples` 0 means "sum of the counts".
   */
  CVQST_DATA_KIND_COUNTS = 1,
  /**
   * Phase-space densities, multiplied by the cell area.
   */
  CVQST_DATA_KIND_DENSITIES = 2,
  CVQST_DATA_KIND_WIGNER_VALUES = 3,
} CvqstDataKind;

/**
 * Design matrix together with the operators it was built from.
 */
typedef struct CvqstDesign CvqstDesign;

/**
 * Measurement operators with their settings.
 */
typedef struct CvqstPovm CvqstPovm;

typedef struct CvqstResult CvqstResult;

/**
 * Density matrix.
 */
typedef struct CvqstState CvqstState;

typedef struct CvqstSolverOptions {
  size_t max_iters;
  double eps_rel;
  double eps_feas;
  double eps_abs;
  bool polish;
} CvqstSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `cvqst_*` call on the same thread.
 */
const char *cvqst_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cvqst_version(void);

struct CvqstSolverOptions cvqst_solver_options_default(void);

/**
 * Named test state (`vac02`, `cat`, `fock04`, `squeezed`, `fock1`).
 * `param` is the cat amplitude or squeezing parameter; NaN selects the
 * default.
 */
enum CvqstStatus cvqst_state_new_test(const char *name,
                                      double param,
                                      size_t dim_n,
                                      struct CvqstState **out);

/**
 * Density matrix from row-major real and imaginary parts (`dim * dim`
 * entries each). Fails unless the matrix is Hermitian, PSD and unit trace.
 */
enum CvqstStatus cvqst_state_from_entries(size_t dim_n,
                                          const double *re,
                                          const double *im,
                                          struct CvqstState **out);

/**
 * Fock dimension, or 0 for a null handle.
 */
size_t cvqst_state_dim(const struct CvqstState *state);

/**
 * Copies row-major entries into `re` and `im`, each of length `len >= dim * dim`.
 */
enum CvqstStatus cvqst_state_entries(const struct CvqstState *state,
                                     double *re,
                                     double *im,
                                     size_t len);

void cvqst_state_free(struct CvqstState *state);

/**
 * Uhlmann fidelity between two states of equal dimension.
 */
enum CvqstStatus cvqst_fidelity(const struct CvqstState *a,
                                const struct CvqstState *b,
                                double *out);

/**
 * Heterodyne operators on a `cells x cells` grid over `[-alpha_max, alpha_max]^2`,
 * compensated for thermal noise `n_th` (0 for ideal detection).
 */
enum CvqstStatus cvqst_povm_heterodyne(size_t cells,
                                       double alpha_max,
                                       double n_th,
                                       size_t dim_n,
                                       struct CvqstPovm **out);

/**
 * Homodyne operators for `n_angles` phases and `n_bins` bins (two of them
 * unbounded), corrected for detector efficiency `eta`.
 */
enum CvqstStatus cvqst_povm_homodyne(size_t n_angles,
                                     size_t n_bins,
                                     double x_max,
                                     double eta,
                                     size_t dim_n,
                                     struct CvqstPovm **out);

/**
 * Displaced-parity operators on a `cells x cells` grid.
 */
enum CvqstStatus cvqst_povm_wigner(size_t cells,
                                   double alpha_max,
                                   size_t dim_n,
                                   struct CvqstPovm **out);

/**
 * Number of outcomes, or 0 for a null handle.
 */
size_t cvqst_povm_len(const struct CvqstPovm *povm);

void cvqst_povm_free(struct CvqstPovm *povm);

enum CvqstStatus cvqst_design_build(const struct CvqstPovm *povm, struct CvqstDesign **out);

size_t cvqst_design_rows(const struct CvqstDesign *design);

/**
 * Outcome probabilities `A vec(rho)` written to `out` (length `len >= rows`).
 */
enum CvqstStatus cvqst_design_predict(const struct CvqstDesign *design,
                                      const struct CvqstState *state,
                                      double *out,
                                      size_t len);

void cvqst_design_free(struct CvqstDesign *design);

/**
 * Solves for the density matrix. `options` may be null for defaults.
 */
enum CvqstStatus cvqst_reconstruct(const struct CvqstDesign *design,
                                   const double *data,
                                   size_t len,
                                   enum CvqstDataKind kind,
                                   uint64_t total_samples,
                                   const struct CvqstSolverOptions *options,
                                   struct CvqstResult **out);

/**
 * Copy of the reconstructed state; free it with [`cvqst_state_free`].
 */
enum CvqstStatus cvqst_result_state(const struct CvqstResult *result, struct CvqstState **out);

/**
 * Final objective, NaN for a null handle.
 */
double cvqst_result_objective(const struct CvqstResult *result);

size_t cvqst_result_iterations(const struct CvqstResult *result);

bool cvqst_result_converged(const struct CvqstResult *result);

/**
 * Solver wall time in seconds, NaN for a null handle.
 */
double cvqst_result_solve_time(const struct CvqstResult *result);

/**
 * Result as JSON; free with [`cvqst_string_free`]. Null on failure.
 */
char *cvqst_result_to_json(const struct CvqstResult *result);

void cvqst_result_free(struct CvqstResult *result);

void cvqst_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVQST_H */

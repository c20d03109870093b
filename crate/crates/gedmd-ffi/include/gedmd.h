/* C interface to the gedmd transfer-operator estimation library. */

#ifndef GEDMD_H
#define GEDMD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status of a fallible call. Zero is success; everything else corresponds
// to one failure class of the underlying library.
typedef enum GedmdStatus {
  GEDMD_STATUS_OK = 0,
  GEDMD_STATUS_INVALID_ARGUMENT = 1,
  GEDMD_STATUS_UNSUPPORTED = 2,
  GEDMD_STATUS_VALIDITY = 3,
  GEDMD_STATUS_NUMERICAL = 4,
  GEDMD_STATUS_NON_FINITE = 5,
  GEDMD_STATUS_CONFIG = 6,
  GEDMD_STATUS_IO = 7,
  GEDMD_STATUS_NULL_POINTER = 8,
  GEDMD_STATUS_PANIC = 9,
} GedmdStatus;

// Which operator the data rows sample.
typedef enum GedmdOperatorKind {
  GEDMD_OPERATOR_KIND_KOOPMAN_GENERATOR = 0,
  GEDMD_OPERATOR_KIND_PF_GENERATOR = 1,
  GEDMD_OPERATOR_KIND_KOOPMAN_T = 2,
} GedmdOperatorKind;

// A basis family over a system's state space (opaque).
typedef struct GedmdDictionary GedmdDictionary;

// One of the built-in benchmark systems (opaque).
typedef struct GedmdSystem GedmdSystem;

// Operator selector. `t`, `h` and `n_realizations` only apply to the
// finite-time kind; `h <= 0` and `n_realizations == 0` fall back to the
// defaults (1e-3 and 1).
typedef struct GedmdOperatorSpec {
  enum GedmdOperatorKind kind;
  double t;
  double h;
  size_t n_realizations;
} GedmdOperatorSpec;

// The constants a sample-size certificate is stated in terms of: reference
// matrix norms and the sup-bound `gamma` on the squared evaluation norms.
typedef struct GedmdConstants {
  size_t n;
  double norm_g;
  double norm_g_inv;
  double norm_c;
  double norm_t;
  double gamma;
} GedmdConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the message of the most recent failure on this thread into `buf`
// (NUL-terminated, truncated to `cap`). Returns the full length the
// message needs including the NUL, or 0 when there is no pending error.
// Call with `cap = 0` to query the size.
size_t gedmd_last_error(char *buf, size_t cap);

// 1D Ornstein-Uhlenbeck process on [-2, 2].
struct GedmdSystem *gedmd_system_ou(void);

// 2D polynomial ODE benchmark on [-2, 2] x [-1, 1] (deterministic).
struct GedmdSystem *gedmd_system_ode1(void);

// 2D double-well diffusion on [-2, 2] x [-1, 1].
struct GedmdSystem *gedmd_system_double_well(void);

// State dimension, or 0 for a null handle.
size_t gedmd_system_dim(const struct GedmdSystem *sys);

void gedmd_system_free(struct GedmdSystem *sys);

// Monomials of total degree <= `degree` in `dim` variables.
struct GedmdDictionary *gedmd_dictionary_monomials(size_t dim, size_t degree);

// Gaussian bumps of bandwidth `theta` at `n` centers, passed row-major as
// `n * dim` doubles. Null on error (duplicate centers, bad bandwidth).
struct GedmdDictionary *gedmd_dictionary_gaussians(const double *centers,
                                                   size_t n,
                                                   size_t dim,
                                                   double theta);

// Piecewise-linear hat functions on a uniform mesh over the system's
// domain, with `interior_per_axis[i]` interior vertices along axis `i`
// (`len` must equal the state dimension). Null on error.
struct GedmdDictionary *gedmd_dictionary_fem(const struct GedmdSystem *sys,
                                             const size_t *interior_per_axis,
                                             size_t len);

// Number of basis functions, or 0 for a null handle.
size_t gedmd_dictionary_len(const struct GedmdDictionary *dict);

void gedmd_dictionary_free(struct GedmdDictionary *dict);

// Estimate the operator matrix from `m` uniform samples and write it into
// `a_out` (row-major, `a_len` must equal N*N for N basis functions).
// Optional evaluation noise of level `noise_sigma` is applied to every
// scalar evaluation. `rank_out` (nullable) receives the numerical rank of
// the empirical Gram matrix.
enum GedmdStatus gedmd_estimate(const struct GedmdDictionary *dict,
                                const struct GedmdSystem *sys,
                                const struct GedmdOperatorSpec *op,
                                size_t m,
                                uint64_t seed,
                                double noise_sigma,
                                double *a_out,
                                size_t a_len,
                                size_t *rank_out);

// Estimate the operator and return its spectrum: eigenvalues (descending
// real part) with Gram-weighted residuals. All three buffers must hold N
// doubles (`len == N`).
enum GedmdStatus gedmd_spectrum(const struct GedmdDictionary *dict,
                                const struct GedmdSystem *sys,
                                const struct GedmdOperatorSpec *op,
                                size_t m,
                                uint64_t seed,
                                double *re_out,
                                double *im_out,
                                double *residual_out,
                                size_t len);

// Compute certificate constants from a Monte Carlo reference of `m_ref`
// samples: reference norms plus the exact sup-bound over the domain.
enum GedmdStatus gedmd_operator_constants(const struct GedmdDictionary *dict,
                                          const struct GedmdSystem *sys,
                                          const struct GedmdOperatorSpec *op,
                                          size_t m_ref,
                                          uint64_t seed,
                                          struct GedmdConstants *out);

// Samples sufficient for the estimate to sit within the returned
// operator-norm radius of the projected operator with probability `p`,
// stated at matrix deviation `delta`. Fails with the validity status
// outside the certificate's deviation window.
enum GedmdStatus gedmd_projection_certificate(const struct GedmdConstants *consts,
                                              double delta,
                                              double p,
                                              uint64_t *m_out,
                                              double *radius_out);

// Samples sufficient for operator-norm error at most `epsilon` with
// probability `p`; also reports the matrix deviation the schedule is
// stated at.
enum GedmdStatus gedmd_sample_schedule(const struct GedmdConstants *consts,
                                       double epsilon,
                                       double p,
                                       uint64_t *m_out,
                                       double *delta_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEDMD_H */

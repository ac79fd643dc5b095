#ifndef DENSBRANCH_H
#define DENSBRANCH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DbStatus {
  DB_STATUS_OK = 0,
  DB_STATUS_NULL_POINTER = 1,
  DB_STATUS_INVALID_ARGUMENT = 2,
  DB_STATUS_OVERFLOW = 3,
  DB_STATUS_OUT_OF_RANGE = 4,
  DB_STATUS_NO_CONVERGENCE = 5,
  DB_STATUS_BUFFER_TOO_SMALL = 6,
  DB_STATUS_IO = 7,
  DB_STATUS_PANIC = 8,
} DbStatus;

/**
 * A tabulated limit function `h`.
 */
typedef struct DbHTable DbHTable;

/**
 * An offspring law.
 */
typedef struct DbLaw DbLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *db_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *db_version(void);

/**
 * Binary splitting: one or two offspring, two with probability
 * `p0 (1 - kappa/sqrt(K)) / (1 + beta x)`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum DbStatus db_law_binary_split(double p0, double beta, double kappa, struct DbLaw **out);

/**
 * Poisson offspring with mean `a (1 - kappa/sqrt(K)) / (1 + b x)`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum DbStatus db_law_beverton_holt(double a, double b, double kappa, struct DbLaw **out);

/**
 * Any law from its JSON form, e.g. `{"family":"binary_split","p0":0.5,"beta":1}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum DbStatus db_law_from_json(const char *json, struct DbLaw **out);

/**
 * # Safety
 * `law` must come from a `db_law_*` constructor and not be freed twice.
 */
void db_law_free(struct DbLaw *law);

/**
 * Growth rate `a = m(0)` of the limiting law.
 *
 * # Safety
 * `law` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_law_growth(const struct DbLaw *law, double *out);

/**
 * Offspring mean at density `x` and capacity `k` (`k = INFINITY` for the limit).
 *
 * # Safety
 * `law` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_law_mean(const struct DbLaw *law, double x, double k, double *out);

/**
 * # Safety
 * `law` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_law_variance(const struct DbLaw *law, double x, double k, double *out);

/**
 * Offspring count at quantile `u` in (0, 1].
 *
 * # Safety
 * `law` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_law_sample(const struct DbLaw *law, double x, double k, double u, uint64_t *out);

/**
 * `f^K` applied `n` times to `x0`.
 *
 * # Safety
 * `law` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_iterate_f(const struct DbLaw *law, double k, double x0, size_t n, double *out);

/**
 * Tabulate `h` on `[0, x_max]` with `knots` uniform knots to tolerance `tol`.
 *
 * # Safety
 * `law` must be a live handle; `out` valid for a pointer write.
 */
enum DbStatus db_h_compute(const struct DbLaw *law,
                           double x_max,
                           size_t knots,
                           double tol,
                           struct DbHTable **out);

/**
 * Load a table written by the command-line `compute-h`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum DbStatus db_h_import(const char *path, struct DbHTable **out);

/**
 * # Safety
 * `h` must come from `db_h_compute` or `db_h_import` and not be freed twice.
 */
void db_h_free(struct DbHTable *h);

/**
 * # Safety
 * `h` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_h_eval(const struct DbHTable *h, double x, double *out);

/**
 * # Safety
 * `h` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_h_inverse(const struct DbHTable *h, double y, double *out);

/**
 * Upper end of the tabulated range.
 *
 * # Safety
 * `h` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_h_x_max(const struct DbHTable *h, double *out);

/**
 * Mean and variance of the martingale limit `W(z0)`.
 *
 * # Safety
 * `law` must be a live handle; `mean` and `variance` valid for writes.
 */
enum DbStatus db_w_moments(const struct DbLaw *law, uint64_t z0, double *mean, double *variance);

/**
 * Extinction probability of the comparison process from one individual.
 *
 * # Safety
 * `law` must be a live handle; `out` valid for a write.
 */
enum DbStatus db_extinction_probability(const struct DbLaw *law, double *out);

/**
 * Counts `Z_0..Z_n` of replicate `replicate` into `buf`, `n = len - 1`.
 * `exact` selects the per-individual construction; otherwise aggregate
 * draws are used.
 *
 * # Safety
 * `law` must be a live handle; `buf` valid for `len` writes.
 */
enum DbStatus db_simulate_path(const struct DbLaw *law,
                               double capacity,
                               uint64_t z0,
                               uint64_t seed,
                               uint64_t replicate,
                               bool exact,
                               uint64_t *buf,
                               size_t len);

/**
 * `len` samples of `W(z0)` truncated at generation `n_trunc`.
 *
 * # Safety
 * `law` must be a live handle; `buf` valid for `len` writes.
 */
enum DbStatus db_sample_w(const struct DbLaw *law,
                          uint64_t z0,
                          uint32_t n_trunc,
                          uint64_t seed,
                          double *buf,
                          size_t len);

/**
 * Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
 *
 * # Safety
 * `a` and `b` valid for `na` and `nb` reads; outputs valid for writes.
 */
enum DbStatus db_ks_two_sample(const double *a,
                               size_t na,
                               const double *b,
                               size_t nb,
                               double *statistic,
                               double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSBRANCH_H */

#ifndef CONJLOGIT_H
#define CONJLOGIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConjlogitStatus {
  CONJLOGIT_STATUS_OK = 0,
  CONJLOGIT_STATUS_NULL_ARGUMENT = 1,
  CONJLOGIT_STATUS_INVALID_UTF8 = 2,
  // Malformed input file or JSON.
  CONJLOGIT_STATUS_PARSE = 3,
  CONJLOGIT_STATUS_INVALID_DATA = 4,
  CONJLOGIT_STATUS_INVALID_SPEC = 5,
  CONJLOGIT_STATUS_DOMAIN = 6,
  // Admission limit exceeded while building caches.
  CONJLOGIT_STATUS_BUDGET_EXCEEDED = 7,
  CONJLOGIT_STATUS_CACHE = 8,
  // Truncation failure, singular Hessian or every grid point failed.
  CONJLOGIT_STATUS_NUMERICAL = 9,
  CONJLOGIT_STATUS_IO = 10,
  CONJLOGIT_STATUS_CONFIG = 11,
  CONJLOGIT_STATUS_PANIC = 12,
} ConjlogitStatus;

// A validated panel dataset.
typedef struct ConjlogitDataset ConjlogitDataset;

// A heterogeneity distribution.
typedef struct ConjlogitSpec ConjlogitSpec;

// A dataset grouped for repeated evaluation, with its caches.
typedef struct ConjlogitWorkspace ConjlogitWorkspace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a success.
//
// The pointer stays valid until the next call into this library on the same thread.
const char *conjlogit_last_error(void);

// Library version as a static NUL-terminated string.
const char *conjlogit_version(void);

// Loads and validates a dataset CSV.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ConjlogitStatus conjlogit_dataset_load(const char *path, struct ConjlogitDataset **out);

// Number of households, or 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t conjlogit_dataset_households(const struct ConjlogitDataset *ds);

// Number of attributes, or 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live dataset handle.
size_t conjlogit_dataset_attributes(const struct ConjlogitDataset *ds);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void conjlogit_dataset_free(struct ConjlogitDataset *ds);

// Parses and validates a heterogeneity spec from JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum ConjlogitStatus conjlogit_spec_from_json(const char *json, struct ConjlogitSpec **out);

// Independent Gammas with scales `b` and shapes `n`, `len` attributes each.
//
// # Safety
// `b` and `n` must point to `len` doubles; `out` must be writable.
enum ConjlogitStatus conjlogit_spec_gamma(const double *b,
                                          const double *n,
                                          size_t len,
                                          double epsilon,
                                          struct ConjlogitSpec **out);

// # Safety
// `spec` must be NULL or a handle not yet freed.
void conjlogit_spec_free(struct ConjlogitSpec *spec);

// Groups `ds` and builds every cache needed at truncation budget `budget`.
//
// The workspace does not borrow `ds`; either may be freed first.
//
// # Safety
// `ds` must be a live dataset handle; `out` must be writable.
enum ConjlogitStatus conjlogit_workspace_new(const struct ConjlogitDataset *ds,
                                             uint32_t budget,
                                             struct ConjlogitWorkspace **out);

// # Safety
// `ws` must be NULL or a handle not yet freed.
void conjlogit_workspace_free(struct ConjlogitWorkspace *ws);

// `log L` at `spec`. `parity_spread` may be NULL; it receives NaN when unavailable.
//
// # Safety
// Handles must be live; `loglik` must be writable; `parity_spread` NULL or writable.
enum ConjlogitStatus conjlogit_log_marginal(const struct ConjlogitWorkspace *ws,
                                            const struct ConjlogitSpec *spec,
                                            double *loglik,
                                            double *parity_spread);

// `E[exp(-d beta)]` for `beta ~ Gamma(scale b, shape n)`, i.e. `(1 + b d)^(-n)`.
//
// # Safety
// `out` must be writable.
enum ConjlogitStatus conjlogit_exp_vs_gamma(double d, double b, double n, double *out);

// Grid search over independent-Gamma parameters `(b_1, n_1, ..., b_P, n_P)`.
//
// `centers`, `counts` and `spacing` each hold `2P` entries. The maximiser is written to
// `best` (`2P` doubles) and its `log L` to `loglik`.
//
// # Safety
// `ws` must be live; array arguments must hold `n_axes` elements; outputs writable.
enum ConjlogitStatus conjlogit_grid_fit_gamma(const struct ConjlogitWorkspace *ws,
                                              const double *centers,
                                              const size_t *counts,
                                              const double *spacing,
                                              size_t n_axes,
                                              double *best,
                                              double *loglik);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONJLOGIT_H */

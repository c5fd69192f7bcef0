#ifndef RLA_H
#define RLA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RlaStatus {
  RLA_STATUS_OK = 0,
  RLA_STATUS_NULL_POINTER = 1,
  RLA_STATUS_INVALID_ARGUMENT = 2,
  RLA_STATUS_PARSE_ERROR = 3,
  RLA_STATUS_IO_ERROR = 4,
  RLA_STATUS_NOT_FOUND = 5,
  RLA_STATUS_CONFLICT = 6,
  RLA_STATUS_PANIC = 7,
} RlaStatus;

typedef enum RlaTestKind {
  /**
   * Kaplan-Kolmogorov product test; takes a shift.
   */
  RLA_TEST_KIND_KK = 0,
  /**
   * Kaplan-martingale integral test; ignores the shift.
   */
  RLA_TEST_KIND_KM = 1,
} RlaTestKind;

typedef enum RlaDecision {
  RLA_DECISION_IN_PROGRESS = 0,
  RLA_DECISION_CERTIFIED = 1,
  RLA_DECISION_FULL_HAND_COUNT = 2,
} RlaDecision;

/**
 * An audit loaded from its state file.
 */
typedef struct RlaAudit RlaAudit;

/**
 * Sequential test fed one value at a time.
 */
typedef struct RlaTest RlaTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Free with
 * [`rla_string_free`].
 */
char *rla_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void rla_string_free(char *s);

/**
 * Kaplan-Kolmogorov p-value for "mean <= null_mean" from `len` draws.
 * `population` 0 means sampling with replacement.
 *
 * # Safety
 * `values` must point to `len` doubles and `out_p` to a writable double.
 */
enum RlaStatus rla_kk_pvalue(const double *values,
                             size_t len,
                             uint64_t population,
                             double null_mean,
                             double shift,
                             double *out_p);

/**
 * Kaplan-martingale p-value for "mean <= null_mean" from `len` draws.
 * `population` 0 means sampling with replacement.
 *
 * # Safety
 * `values` must point to `len` doubles and `out_p` to a writable double.
 */
enum RlaStatus rla_km_pvalue(const double *values,
                             size_t len,
                             uint64_t population,
                             double null_mean,
                             double *out_p);

/**
 * Starts a sequential test of "mean <= null_mean".
 *
 * # Safety
 * `out` must point to writable storage for a handle.
 */
enum RlaStatus rla_test_new(enum RlaTestKind kind,
                            double shift,
                            uint64_t population,
                            double null_mean,
                            struct RlaTest **out);

/**
 * Feeds the next draw.
 *
 * # Safety
 * `test` must be a live handle from [`rla_test_new`].
 */
enum RlaStatus rla_test_push(struct RlaTest *test, double x);

/**
 * Current p-value (max-so-far rule).
 *
 * # Safety
 * `test` must be a live handle and `out_p` writable.
 */
enum RlaStatus rla_test_pvalue(const struct RlaTest *test, double *out_p);

/**
 * Number of draws consumed so far; 0 for a null handle.
 *
 * # Safety
 * `test` must be null or a live handle.
 */
uint64_t rla_test_draws(const struct RlaTest *test);

/**
 * # Safety
 * `test` must be null or a handle not yet freed.
 */
void rla_test_free(struct RlaTest *test);

/**
 * Loads an audit from the state file at `path` (UTF-8).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RlaStatus rla_audit_open(const char *path, struct RlaAudit **out);

/**
 * Overall decision of the audit.
 *
 * # Safety
 * `audit` must be a live handle and `out` writable.
 */
enum RlaStatus rla_audit_decision(const struct RlaAudit *audit, enum RlaDecision *out);

/**
 * Status report as JSON: decision, per-contest measured risk and
 * per-assertion p-values. Free with [`rla_string_free`].
 *
 * # Safety
 * `audit` must be a live handle and `out` writable.
 */
enum RlaStatus rla_audit_status_json(const struct RlaAudit *audit, char **out);

/**
 * # Safety
 * `audit` must be null or a handle not yet freed.
 */
void rla_audit_free(struct RlaAudit *audit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLA_H */

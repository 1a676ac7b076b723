#ifndef LOGOPT_H
#define LOGOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LogoptStatus {
  LOGOPT_STATUS_OK = 0,
  LOGOPT_STATUS_NULL_POINTER = 1,
  LOGOPT_STATUS_INVALID_UTF8 = 2,
  LOGOPT_STATUS_INVALID_INPUT = 3,
  LOGOPT_STATUS_PARSE = 4,
  LOGOPT_STATUS_ENUMERATION_CAP = 5,
  LOGOPT_STATUS_SUPPORT_VIOLATION = 6,
  LOGOPT_STATUS_DEGENERATE_TRAINING = 7,
  LOGOPT_STATUS_INFEASIBLE = 8,
  LOGOPT_STATUS_IO = 9,
  LOGOPT_STATUS_OUT_OF_RANGE = 10,
  LOGOPT_STATUS_PANIC = 11,
} LogoptStatus;

/**
 * Comparison methods, numbered as in the harness configuration.
 */
typedef enum LogoptMethod {
  LOGOPT_METHOD_AB = 0,
  LOGOPT_METHOD_TDI = 1,
  LOGOPT_METHOD_PI = 2,
  LOGOPT_METHOD_OI = 3,
  LOGOPT_METHOD_IPS_UNIFORM = 4,
  LOGOPT_METHOD_IPS_AB = 5,
  LOGOPT_METHOD_IPS_LOGOPT = 6,
  LOGOPT_METHOD_IPS_ORACLE_LOGOPT = 7,
} LogoptMethod;

/**
 * Methods the enumeration oracle can evaluate on a small instance.
 */
typedef enum LogoptOracleMethod {
  /**
   * A/B split with equal assignment.
   */
  LOGOPT_ORACLE_METHOD_AB = 0,
  LOGOPT_ORACLE_METHOD_TDI = 1,
  /**
   * Probabilistic interleaving with τ = 4.
   */
  LOGOPT_ORACLE_METHOD_PI = 2,
  LOGOPT_ORACLE_METHOD_OI = 3,
  /**
   * IPS with uniformly random logging.
   */
  LOGOPT_ORACLE_METHOD_IPS_UNIFORM = 4,
} LogoptOracleMethod;

/**
 * Experiment configuration handle.
 */
typedef struct LogoptConfig LogoptConfig;

/**
 * Rows of a finished experiment.
 */
typedef struct LogoptResults LogoptResults;

/**
 * One result row. Metric fields are NaN when `is_error` is set.
 */
typedef struct LogoptRow {
  uint64_t pair;
  enum LogoptMethod method;
  uint64_t queries;
  double binary_error;
  double absolute_error;
  double mse;
  double true_delta;
  double delta_hat;
  double wall_clock;
  bool is_error;
} LogoptRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread; do not free.
 */
const char *logopt_last_error(void);

/**
 * Default configuration.
 */
struct LogoptConfig *logopt_config_new(void);

/**
 * Parses line-oriented `key = value` text into a new configuration.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a valid pointer.
 */
enum LogoptStatus logopt_config_parse(const char *text, struct LogoptConfig **out);

/**
 * Sets one configuration key.
 *
 * # Safety
 * `config` must come from this library; `key` and `value` must be
 * nul-terminated strings.
 */
enum LogoptStatus logopt_config_set(struct LogoptConfig *config,
                                    const char *key,
                                    const char *value);

/**
 * The configuration as `key = value` text. Free with [`logopt_string_free`].
 *
 * # Safety
 * `config` must come from this library or be null.
 */
char *logopt_config_to_text(const struct LogoptConfig *config);

/**
 * # Safety
 * `config` must come from this library or be null, and not be used again.
 */
void logopt_config_free(struct LogoptConfig *config);

/**
 * Runs the configured experiment. A failing (pair, method) cell becomes an
 * error row; only an invalid configuration fails the call.
 *
 * # Safety
 * `config` must come from this library and `out` must be a valid pointer.
 */
enum LogoptStatus logopt_run(const struct LogoptConfig *config, struct LogoptResults **out);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `results` must come from this library or be null.
 */
size_t logopt_results_len(const struct LogoptResults *results);

/**
 * Copies row `index` into `out`.
 *
 * # Safety
 * `results` must come from this library and `out` must be a valid pointer.
 */
enum LogoptStatus logopt_results_get(const struct LogoptResults *results,
                                     size_t index,
                                     struct LogoptRow *out);

/**
 * Error message of row `index`, or null when the row succeeded. Free with
 * [`logopt_string_free`].
 *
 * # Safety
 * `results` must come from this library or be null.
 */
char *logopt_results_error(const struct LogoptResults *results, size_t index);

/**
 * The rows as `results.csv` text. Free with [`logopt_string_free`].
 *
 * # Safety
 * `results` must come from this library or be null.
 */
char *logopt_results_csv(const struct LogoptResults *results);

/**
 * Per-method summary as `summary.csv` text, or null on empty results.
 * Free with [`logopt_string_free`].
 *
 * # Safety
 * `results` must come from this library or be null.
 */
char *logopt_results_summary_csv(const struct LogoptResults *results);

/**
 * # Safety
 * `results` must come from this library or be null, and not be used again.
 */
void logopt_results_free(struct LogoptResults *results);

/**
 * # Safety
 * `s` must be a string returned by this library or null.
 */
void logopt_string_free(char *s);

/**
 * Exact expected per-interaction outcome of `method` on a small instance:
 * `num_docs` documents (at most five) with attractions `zeta`, examination
 * `theta` over `display_length` ranks, and two complete rankers given as
 * document permutations.
 *
 * # Safety
 * `theta` must point to `display_length` values, `zeta`, `ranker1` and
 * `ranker2` to `num_docs` values each, and `out` must be valid.
 */
enum LogoptStatus logopt_oracle_expected_outcome(enum LogoptOracleMethod method,
                                                 const double *theta,
                                                 size_t display_length,
                                                 const double *zeta,
                                                 const size_t *ranker1,
                                                 const size_t *ranker2,
                                                 size_t num_docs,
                                                 double *out);

/**
 * True CTR difference of the same small instance.
 *
 * # Safety
 * As for [`logopt_oracle_expected_outcome`].
 */
enum LogoptStatus logopt_oracle_delta(const double *theta,
                                      size_t display_length,
                                      const double *zeta,
                                      const size_t *ranker1,
                                      const size_t *ranker2,
                                      size_t num_docs,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOGOPT_H */

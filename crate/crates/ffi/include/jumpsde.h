#ifndef JUMPSDE_H
#define JUMPSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Which distance a fit refers to.
 */
typedef enum JsdeDistance {
  JSDE_DISTANCE_W1 = 0,
  JSDE_DISTANCE_TV = 1,
} JsdeDistance;

/*
 Result codes.
 */
typedef enum JsdeStatus {
  JSDE_STATUS_OK = 0,
  JSDE_STATUS_NULL_POINTER = 1,
  JSDE_STATUS_INVALID_ARGUMENT = 2,
  JSDE_STATUS_CONFIG = 3,
  JSDE_STATUS_NUMERICAL = 4,
  JSDE_STATUS_INSUFFICIENT_DATA = 5,
  JSDE_STATUS_BUFFER_TOO_SMALL = 6,
  JSDE_STATUS_NO_FIT = 7,
  JSDE_STATUS_IO = 8,
  JSDE_STATUS_PANIC = 9,
} JsdeStatus;

/*
 A parsed experiment config.
 */
typedef struct JsdeConfig JsdeConfig;

/*
 A finished convergence study.
 */
typedef struct JsdeConvergence JsdeConvergence;

/*
 A jump-SDE model built from a preset string.
 */
typedef struct JsdeModel JsdeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length including the NUL,
 or 0 when there is no message.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t jsde_last_error(char *buf, size_t len);

/*
 Builds a model from a preset string such as `"exp-decay(1, 1, 1, 1)"`.

 # Safety
 `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum JsdeStatus jsde_model_new(const char *preset, struct JsdeModel **out);

/*
 # Safety
 `model` must be null or a handle from [`jsde_model_new`] not yet freed.
 */
void jsde_model_free(struct JsdeModel *model);

/*
 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_model_dim(const struct JsdeModel *model, size_t *out);

/*
 Contraction rate of the model; may be non-positive.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_model_theta(const struct JsdeModel *model, double *out);

/*
 Tail error `epsilon_m`.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_model_epsilon(const struct JsdeModel *model, size_t m, double *out);

/*
 Truncation level `M(gamma)`: the least `m` with `epsilon_m <= gamma^2`.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_model_truncation_level(const struct JsdeModel *model,
                                            double gamma,
                                            size_t *out);

/*
 Parses a TOML (or JSON) experiment config.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum JsdeStatus jsde_config_parse(const char *text, struct JsdeConfig **out);

/*
 Reads an experiment config from a file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum JsdeStatus jsde_config_load(const char *path, struct JsdeConfig **out);

/*
 # Safety
 `config` must be null or a live config handle.
 */
void jsde_config_free(struct JsdeConfig *config);

/*
 # Safety
 `config` must be a live config handle.
 */
enum JsdeStatus jsde_config_set_seed(struct JsdeConfig *config, uint64_t seed);

/*
 # Safety
 `config` must be a live config handle.
 */
enum JsdeStatus jsde_config_set_paths(struct JsdeConfig *config, size_t paths);

/*
 Number of paths and state dimension, i.e. the shape of [`jsde_simulate`]'s output.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_config_shape(const struct JsdeConfig *config, size_t *paths, size_t *dim);

/*
 Runs the `[simulate]` scheme and writes terminal states row-major
 (`paths x dim`) into `out`, which holds `len` doubles.

 # Safety
 `out` must point to `len` writable doubles.
 */
enum JsdeStatus jsde_simulate(const struct JsdeConfig *config,
                              size_t threads,
                              double *out,
                              size_t len);

/*
 Runs a convergence study.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_converge(const struct JsdeConfig *config,
                              size_t threads,
                              struct JsdeConvergence **out);

/*
 # Safety
 `run` must be null or a live handle from [`jsde_converge`].
 */
void jsde_convergence_free(struct JsdeConvergence *run);

/*
 Number of checkpoint rows.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_convergence_rows(const struct JsdeConvergence *run, size_t *out);

/*
 Fitted rate and its bootstrap interval for `which` (a [`JsdeDistance`]).
 Returns [`JsdeStatus::NoFit`] when the window rule left too few rows.

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_convergence_slope(const struct JsdeConvergence *run,
                                       uint32_t which,
                                       double *slope,
                                       double *ci_lo,
                                       double *ci_hi);

/*
 Writes `report.json`, `rows.csv`, `reference.csv` and `seeds.csv` into `dir`.

 # Safety
 `dir` must be a NUL-terminated string.
 */
enum JsdeStatus jsde_convergence_write(const struct JsdeConvergence *run, const char *dir);

/*
 The report as a JSON string; free it with [`jsde_string_free`].

 # Safety
 Pointers must be valid.
 */
enum JsdeStatus jsde_convergence_json(const struct JsdeConvergence *run, char **out);

/*
 # Safety
 `s` must be null or a string returned by this library.
 */
void jsde_string_free(char *s);

/*
 Exact 1-D Wasserstein-1 distance between two uniform samples.

 # Safety
 `a` and `b` must point to `na` and `nb` doubles.
 */
enum JsdeStatus jsde_w1_1d(const double *a, size_t na, const double *b, size_t nb, double *out);

/*
 Log-log rate fit of `distance` against `gamma`. `stderr` may be null.

 # Safety
 Arrays must hold `n` doubles.
 */
enum JsdeStatus jsde_rate_fit(const double *gamma,
                              const double *distance,
                              const double *stderr,
                              size_t n,
                              double *slope,
                              double *ci_lo,
                              double *ci_hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JUMPSDE_H */

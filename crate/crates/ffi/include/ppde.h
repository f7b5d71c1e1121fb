#ifndef PPDE_H
#define PPDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PpdeStatus {
  PPDE_STATUS_OK = 0,
  PPDE_STATUS_NULL_POINTER = 1,
  PPDE_STATUS_VALIDATION = 2,
  PPDE_STATUS_NUMERICAL = 3,
  PPDE_STATUS_INVALID_UTF8 = 4,
  PPDE_STATUS_PANIC = 5,
} PpdeStatus;

// Opaque experiment: a config tree plus its parsed form.
typedef struct PpdeExperiment PpdeExperiment;

// Opaque sampled path.
typedef struct PpdePath PpdePath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Free with
// `ppde_string_free`.
char *ppde_last_error(void);

// # Safety
// `s` must come from this library or be null.
void ppde_string_free(char *s);

// Builds a path on a uniform grid of `steps` steps over `[0, horizon]`.
// `values` holds `(steps + 1) * dim` numbers, node by node.
//
// # Safety
// `values` must point to `len` readable doubles; `out_path` must be
// writable.
enum PpdeStatus ppde_path_new(double horizon,
                              uintptr_t steps,
                              uintptr_t dim,
                              const double *values,
                              uintptr_t len,
                              struct PpdePath **out_path);

// # Safety
// `path` must come from `ppde_path_new` or be null.
void ppde_path_free(struct PpdePath *path);

// Coordinate `coord` (zero based) at time `t`.
//
// # Safety
// `path` must be a live handle and `out_value` writable.
enum PpdeStatus ppde_path_value_at(const struct PpdePath *path,
                                   double t,
                                   uintptr_t coord,
                                   double *out_value);

// Sup norm of the path stopped at `t`.
//
// # Safety
// `path` must be a live handle and `out_value` writable.
enum PpdeStatus ppde_path_sup_norm(const struct PpdePath *path, double t, double *out_value);

// Evaluates a functional expression such as `"x^2 + int_x"` at `(t, path)`.
//
// # Safety
// `path` must be a live handle, `expr` a C string and `out_value` writable.
enum PpdeStatus ppde_path_eval(const struct PpdePath *path,
                               const char *expr,
                               double t,
                               double *out_value);

// Parses an experiment from TOML or JSON text.
//
// # Safety
// `config` must be a C string and `out_experiment` writable.
enum PpdeStatus ppde_experiment_new(const char *config, struct PpdeExperiment **out_experiment);

// Applies a `key.path=value` override. The experiment is unchanged on
// failure.
//
// # Safety
// `experiment` must be a live handle and `assignment` a C string.
enum PpdeStatus ppde_experiment_set(struct PpdeExperiment *experiment, const char *assignment);

// # Safety
// `experiment` must come from `ppde_experiment_new` or be null.
void ppde_experiment_free(struct PpdeExperiment *experiment);

// Runs a subcommand (`"solve"`, `"fk"`, ...). Any of the out pointers may
// be null. `out_json` receives the full result document.
//
// # Safety
// `experiment` must be a live handle, `subcommand` a C string, and each
// non-null out pointer writable.
enum PpdeStatus ppde_experiment_run(const struct PpdeExperiment *experiment,
                                    const char *subcommand,
                                    bool unsafe_u,
                                    double *out_value,
                                    double *out_std_error,
                                    char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPDE_H */

#ifndef POPHARVEST_H
#define POPHARVEST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PhStatus {
  PH_STATUS_OK = 0,
  PH_STATUS_NULL_POINTER = 1,
  PH_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A model assumption (price gap, absorbing origin, ...) does not hold.
   */
  PH_STATUS_ASSUMPTION = 3,
  /**
   * The approximating chain could not be built on the requested grid.
   */
  PH_STATUS_NUMERICAL = 4,
  /**
   * A simulated policy kept acting without letting time pass.
   */
  PH_STATUS_RUNAWAY_POLICY = 5,
  /**
   * The output buffer is too small; nothing was written.
   */
  PH_STATUS_BUFFER_TOO_SMALL = 6,
  PH_STATUS_PANIC = 7,
} PhStatus;

/**
 * Opaque model handle.
 */
typedef struct PhModel PhModel;

/**
 * Opaque handle to a solved value function and policy.
 */
typedef struct PhSolution PhSolution;

/**
 * Monte Carlo payoff estimate.
 */
typedef struct PhEstimate {
  double mean;
  double std_error;
  size_t paths;
  double truncation_bound;
} PhEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap - 1` bytes. Returns the full
 * message length without the terminator; an empty message means the last
 * call succeeded.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t ph_last_error(char *buf, size_t cap);

/**
 * Builds a preset with its default parameters. `preset` is one of
 * `"logistic_1d"`, `"competition_2d"`, `"predator_prey_2d"`.
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
enum PhStatus ph_model_preset(const char *preset, struct PhModel **out);

/**
 * Builds the model of a scenario document (the JSON accepted by the
 * command-line tool). Model assumptions are checked on the scenario grid.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum PhStatus ph_model_from_scenario(const char *json, struct PhModel **out);

/**
 * # Safety
 * `model` must be null or a handle from a `ph_model_*` constructor that has
 * not been freed.
 */
void ph_model_free(struct PhModel *model);

/**
 * Number of species, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ph_model_dim(const struct PhModel *model);

/**
 * Solves on the lattice `{0, h, ..., upper}^d` with the given stopping
 * tolerance and iteration cap. A run that hits the cap still yields a
 * solution; check [`ph_solution_converged`].
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum PhStatus ph_solve(const struct PhModel *model,
                       double h,
                       double upper,
                       double tolerance,
                       size_t max_iters,
                       struct PhSolution **out);

/**
 * Solves with the grid and solver settings of the scenario the model was
 * built from.
 *
 * # Safety
 * `model` must be a live handle from [`ph_model_from_scenario`]; `out` must
 * be writable.
 */
enum PhStatus ph_solve_scenario(const struct PhModel *model, struct PhSolution **out);

/**
 * # Safety
 * `solution` must be null or a live handle from a `ph_solve*` call.
 */
void ph_solution_free(struct PhSolution *solution);

/**
 * Number of lattice states, or 0 for a null handle. States are ordered
 * row-major with the last species varying fastest.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t ph_solution_len(const struct PhSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t ph_solution_iterations(const struct PhSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
bool ph_solution_converged(const struct PhSolution *solution);

/**
 * Copies the value function into `out`, which must hold
 * [`ph_solution_len`] doubles.
 *
 * # Safety
 * `solution` must be a live handle; `out` must be valid for `cap` doubles.
 */
enum PhStatus ph_solution_values(const struct PhSolution *solution, double *out, size_t cap);

/**
 * Copies the policy as signed action codes: `i` harvests species `i`,
 * `-i` seeds it, `0` lets the population diffuse.
 *
 * # Safety
 * `solution` must be a live handle; `out` must be valid for `cap` ints.
 */
enum PhStatus ph_solution_policy(const struct PhSolution *solution, int32_t *out, size_t cap);

/**
 * Value at the lattice state nearest to `x` (`dim` coordinates).
 *
 * # Safety
 * `solution` must be a live handle; `x` valid for `dim` doubles; `out`
 * writable.
 */
enum PhStatus ph_solution_value_at(const struct PhSolution *solution,
                                   const double *x,
                                   size_t dim,
                                   double *out);

/**
 * Barrier levels of a one-species policy: seed below `lower`, harvest from
 * `upper`; `contiguous` tells whether the policy has exactly that shape.
 *
 * # Safety
 * `solution` must be a live handle; the outputs must be writable.
 */
enum PhStatus ph_thresholds_1d(const struct PhSolution *solution,
                               double *lower,
                               double *upper,
                               bool *contiguous);

/**
 * Monte Carlo estimate of the solved policy's discounted payoff from `x0`.
 * Path `k` is seeded with `seed + k`.
 *
 * # Safety
 * Handles must be live; `x0` valid for `dim` doubles; `out` writable.
 */
enum PhStatus ph_estimate_value(const struct PhModel *model,
                                const struct PhSolution *solution,
                                const double *x0,
                                size_t dim,
                                size_t paths,
                                double horizon,
                                double dt,
                                uint64_t seed,
                                struct PhEstimate *out);

/**
 * Runs the structural audit and writes whether every check passed. The
 * JSON report is copied into `json` when it is non-null; `json_len`
 * receives its length without the terminator, so a first call with a null
 * buffer sizes the second.
 *
 * # Safety
 * Handles must be live; `passed` writable; `json` null or valid for `cap`
 * bytes; `json_len` null or writable.
 */
enum PhStatus ph_audit(const struct PhModel *model,
                       const struct PhSolution *solution,
                       size_t pairs,
                       uint64_t seed,
                       bool *passed,
                       char *json,
                       size_t cap,
                       size_t *json_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POPHARVEST_H */

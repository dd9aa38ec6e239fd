#ifndef QEPI_H
#define QEPI_H

/* Generated from the Rust sources in crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * QUBO backend selector for [`QepiRunConfig`].
 */
typedef enum QepiSolver {
  QEPI_SOLVER_SIMULATED = 0,
  QEPI_SOLVER_BRUTE_FORCE = 1,
  QEPI_SOLVER_REMOTE = 2,
} QepiSolver;

/**
 * Result of every fallible call in this interface.
 */
typedef enum QepiStatus {
  QEPI_STATUS_OK = 0,
  QEPI_STATUS_NULL_POINTER = 1,
  QEPI_STATUS_INVALID_ARGUMENT = 2,
  QEPI_STATUS_CAPACITY_EXCEEDED = 3,
  QEPI_STATUS_SOLVER_FAILURE = 4,
  QEPI_STATUS_REMOTE_FAILURE = 5,
  QEPI_STATUS_IO_FAILURE = 6,
  QEPI_STATUS_PARSE_FAILURE = 7,
  QEPI_STATUS_PANIC = 8,
} QepiStatus;

/**
 * Discretized mountain-car model plus the grid it lives on.
 */
typedef struct QepiModel QepiModel;

/**
 * Parameters for [`qepi_run`]. Obtain defaults from
 * [`qepi_run_config_default`] and override selectively.
 */
typedef struct QepiRunConfig {
  /**
   * Discount factor in [0, 1).
   */
  double gamma;
  /**
   * Bits per encoded state value.
   */
  size_t bits_per_value;
  /**
   * Most negative representable value.
   */
  double x_min;
  /**
   * Independent anneal restarts per solve.
   */
  size_t num_anneals;
  /**
   * Sweeps per anneal.
   */
  size_t duration_steps;
  /**
   * Master seed.
   */
  uint64_t seed;
  /**
   * Policy-update budget.
   */
  size_t max_policy_updates;
  /**
   * QUBO backend.
   */
  enum QepiSolver solver;
  /**
   * Endpoint for `Remote`; ignored otherwise. May be null for
   * non-remote solvers.
   */
  const char *remote_url;
} QepiRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message from the most recent failing call on this thread.
 *
 * # Safety
 * The pointer is valid until the next failing call on the same thread;
 * do not free it.
 */
const char *qepi_last_error(void);

/**
 * Builds the model for an `n_pos` x `n_vel` grid with the standard
 * mountain-car physics and writes a handle to `out`.
 *
 * # Safety
 * `out` must point to writable storage for one pointer. The handle
 * must be released with [`qepi_model_free`].
 */
enum QepiStatus qepi_model_build(size_t n_pos, size_t n_vel, struct QepiModel **out);

/**
 * Reads a model previously written by [`qepi_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable
 * storage for one pointer. The handle must be released with
 * [`qepi_model_free`].
 */
enum QepiStatus qepi_model_load(const char *path, struct QepiModel **out);

/**
 * Writes the model as line-oriented text readable by
 * [`qepi_model_load`].
 *
 * # Safety
 * `model` must be a live handle from this library; `path` must be a
 * NUL-terminated string.
 */
enum QepiStatus qepi_model_save(const struct QepiModel *model, const char *path);

/**
 * Releases a handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be null or a live handle from this library; the handle
 * must not be used afterwards.
 */
void qepi_model_free(struct QepiModel *model);

/**
 * Number of grid states; the length of every per-state buffer below.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage
 * for one `usize`.
 */
enum QepiStatus qepi_model_num_states(const struct QepiModel *model, size_t *out);

/**
 * Number of actions (always 3 for mountain car).
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage
 * for one `usize`.
 */
enum QepiStatus qepi_model_action_count(const struct QepiModel *model, size_t *out);

/**
 * Largest per-axis cell distance any transition covers.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage
 * for one `usize`.
 */
enum QepiStatus qepi_model_bandwidth(const struct QepiModel *model, size_t *out);

/**
 * Runs value iteration and optionally extracts the greedy policy.
 *
 * `values_out` receives one `double` per state. `policy_out`, when
 * non-null, receives one action index per state. `converged_out`, when
 * non-null, reports whether the sweep tolerance was met.
 *
 * # Safety
 * `model` must be a live handle; `values_out` must hold
 * `qepi_model_num_states` doubles; `policy_out` null or the same count
 * of `uint32_t`; `converged_out` null or one `bool`.
 */
enum QepiStatus qepi_value_iteration(const struct QepiModel *model,
                                     double gamma,
                                     size_t max_sweeps,
                                     double tol,
                                     double *values_out,
                                     uint32_t *policy_out,
                                     bool *converged_out);

/**
 * Fills `out` with the library defaults: gamma 0.99, 10 bits from
 * -100, 100 anneals of 1280 sweeps, seed 0, 10 policy updates, the
 * built-in annealer.
 *
 * # Safety
 * `out` must point to writable storage for one `QepiRunConfig`.
 */
enum QepiStatus qepi_run_config_default(struct QepiRunConfig *out);

/**
 * Runs annealed policy iteration to convergence or the update budget.
 *
 * `values_out` receives the final decoded value per state and
 * `policy_out` the final action per state. `updates_out` and
 * `converged_out`, when non-null, receive the number of policy updates
 * performed and whether the policy reached a fixed point.
 *
 * # Safety
 * `model` must be a live handle; `config` must point to one
 * `QepiRunConfig` whose `remote_url`, when used, is NUL-terminated;
 * `values_out` must hold `qepi_model_num_states` doubles and
 * `policy_out` the same count of `uint32_t`; `updates_out` null or one
 * `usize`; `converged_out` null or one `bool`.
 */
enum QepiStatus qepi_run(const struct QepiModel *model,
                         const struct QepiRunConfig *config,
                         double *values_out,
                         uint32_t *policy_out,
                         size_t *updates_out,
                         bool *converged_out);

/**
 * Cell index of a continuous state, for policy lookups during
 * rollouts.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage
 * for one `usize`.
 */
enum QepiStatus qepi_model_state_index(const struct QepiModel *model,
                                       double position,
                                       double velocity,
                                       size_t *out);

/**
 * Advances the continuous dynamics one step under `action`, writing
 * the successor, reward, and terminal flag.
 *
 * # Safety
 * `model` must be a live handle; the four out-pointers must each point
 * to writable storage of the indicated type.
 */
enum QepiStatus qepi_env_step(const struct QepiModel *model,
                              double position,
                              double velocity,
                              uint32_t action,
                              double *position_out,
                              double *velocity_out,
                              double *reward_out,
                              bool *terminal_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* QEPI_H */

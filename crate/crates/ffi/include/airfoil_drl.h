#ifndef AIRFOIL_DRL_H
#define AIRFOIL_DRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of every parameter, observation and action array.
 */
#define AFD_N_PARAMS 18

typedef enum AfdStatus {
  AFD_STATUS_OK = 0,
  AFD_STATUS_NULL_POINTER = 1,
  AFD_STATUS_INVALID_ARGUMENT = 2,
  AFD_STATUS_IO = 3,
  /**
   * The solver did not converge or the geometry was rejected.
   */
  AFD_STATUS_SOLVER = 4,
  /**
   * Call out of order, e.g. stepping before reset.
   */
  AFD_STATUS_CONTRACT = 5,
  AFD_STATUS_PANIC = 6,
} AfdStatus;

typedef enum AfdTermination {
  AFD_TERMINATION_RUNNING = 0,
  AFD_TERMINATION_MAX_STEPS = 1,
  AFD_TERMINATION_SOLVER_FAILURE = 2,
  AFD_TERMINATION_INVALID_GEOMETRY = 3,
} AfdTermination;

typedef enum AfdFidelity {
  AFD_FIDELITY_HIGH = 0,
  AFD_FIDELITY_LOW = 1,
} AfdFidelity;

/**
 * Opaque agent handle.
 */
typedef struct AfdAgent AfdAgent;

/**
 * Opaque environment handle.
 */
typedef struct AfdEnv AfdEnv;

/**
 * Outcome of one environment step. Lift and drag are NaN when the step failed.
 */
typedef struct AfdStep {
  double reward;
  bool terminated;
  enum AfdTermination reason;
  double cl;
  double cd;
  double kappa;
  double lambda;
  double max_thickness;
} AfdStep;

typedef struct AfdAero {
  double cl;
  double cd;
  double confidence;
  double max_thickness;
} AfdAero;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *afd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *afd_version(void);

/**
 * Create an environment. `config_toml` may be NULL for defaults; otherwise
 * it holds environment settings in TOML (`sigma = 15.0`, `fidelity = "high"`, ...).
 * The reset pool is fitted from `data_dir`, or the bundled airfoils when NULL.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum AfdStatus afd_env_new(const char *config_toml,
                           const char *data_dir,
                           uint64_t seed,
                           struct AfdEnv **out);

/**
 * # Safety
 * `env` must come from `afd_env_new` and not be used afterwards. NULL is ignored.
 */
void afd_env_free(struct AfdEnv *env);

/**
 * Start an episode from a random pool airfoil; writes the normalized
 * observation to `obs_out`.
 *
 * # Safety
 * `env` must be a live handle; `obs_out` must hold `AFD_N_PARAMS` doubles.
 */
enum AfdStatus afd_env_reset(struct AfdEnv *env, double *obs_out);

/**
 * Start an episode from the given CST parameters.
 *
 * # Safety
 * `env` must be a live handle; both arrays must hold `AFD_N_PARAMS` doubles.
 */
enum AfdStatus afd_env_reset_to(struct AfdEnv *env, const double *params, double *obs_out);

/**
 * Apply one action. `obs_out` and `params_out` may be NULL.
 *
 * # Safety
 * `env` must be a live handle; non-NULL arrays must hold `AFD_N_PARAMS`
 * doubles; `step_out` must be writable.
 */
enum AfdStatus afd_env_step(struct AfdEnv *env,
                            const double *action,
                            double *obs_out,
                            double *params_out,
                            struct AfdStep *step_out);

/**
 * Current CST parameters of the running episode.
 *
 * # Safety
 * `env` must be a live handle; `params_out` must hold `AFD_N_PARAMS` doubles.
 */
enum AfdStatus afd_env_params(const struct AfdEnv *env, double *params_out);

/**
 * Load an agent from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum AfdStatus afd_agent_load(const char *path, struct AfdAgent **out);

/**
 * # Safety
 * `agent` must come from `afd_agent_load` and not be used afterwards. NULL is ignored.
 */
void afd_agent_free(struct AfdAgent *agent);

/**
 * Deterministic action (the policy mean) for a normalized observation.
 *
 * # Safety
 * `agent` must be a live handle; both arrays must hold `AFD_N_PARAMS` doubles.
 */
enum AfdStatus afd_agent_act(const struct AfdAgent *agent, const double *obs, double *action_out);

/**
 * Fit CST parameters to a Selig or Lednicer `.dat` file. `residual_out` may be NULL.
 *
 * # Safety
 * `path` must be NUL-terminated; `params_out` must hold `AFD_N_PARAMS` doubles.
 */
enum AfdStatus afd_fit_dat(const char *path, double *params_out, double *residual_out);

/**
 * Solve one design at the default flow conditions (2°, Re 1e6, Ma 0.5).
 *
 * # Safety
 * `params` must hold `AFD_N_PARAMS` doubles; `out` must be writable.
 */
enum AfdStatus afd_solve(const double *params, enum AfdFidelity fidelity, struct AfdAero *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIRFOIL_DRL_H */

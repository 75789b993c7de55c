#ifndef CDAL_ARX_H
#define CDAL_ARX_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  CDAL_STATUS_OK = 0,
  CDAL_STATUS_NULL_POINTER = 1,
  CDAL_STATUS_INVALID_ARGUMENT = 2,
  CDAL_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * The solve stopped at `n_out`; outputs hold the last iterate.
   */
  CDAL_STATUS_NOT_CONVERGED = 4,
  CDAL_STATUS_PARSE = 5,
  CDAL_STATUS_PANIC = 6,
} CdalStatus;

typedef struct CdalModel CdalModel;

typedef struct CdalProblem CdalProblem;

typedef struct CdalSolver CdalSolver;

typedef struct {
  double rho;
  size_t n_out;
  size_t n_in;
  double eps_out;
  double eps_in;
  bool use_coupled;
  bool use_acceleration;
  bool accelerate_gamma;
  /**
   * Start each solve from the shifted previous solution.
   */
  bool warm_start;
} CdalSolverConfig;

typedef struct {
  size_t outer_iters;
  size_t inner_passes;
  double outer_residual;
  bool converged;
} CdalSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call on the same thread.
 */
const char *cdal_last_error_message(void);

/**
 * Creates a model from `n_a` row-major `n_y x n_y` matrices in `a` (lag 1
 * first) and `n_b` row-major `n_y x n_u` matrices in `b`.
 *
 * # Safety
 * `a` must hold `n_a * n_y * n_y` doubles and `b` `n_b * n_y * n_u`.
 */
CdalStatus cdal_model_new(size_t n_y,
                          size_t n_u,
                          size_t n_a,
                          size_t n_b,
                          const double *a,
                          const double *b,
                          CdalModel **out);

/**
 * # Safety
 * `model` must come from `cdal_model_new` and not be used afterwards.
 */
void cdal_model_free(CdalModel *model);

/**
 * Creates a problem with zero history and zero references. Each vector
 * argument has `n_y` (output quantities) or `n_u` (input quantities)
 * entries.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `model` must be live.
 */
CdalStatus cdal_problem_new(const CdalModel *model,
                            size_t horizon,
                            const double *w_y,
                            const double *w_du,
                            const double *y_min,
                            const double *y_max,
                            const double *u_min,
                            const double *u_max,
                            const double *du_min,
                            const double *du_max,
                            CdalProblem **out);

/**
 * Parses a problem from its JSON form (settings, model, history, refs).
 *
 * # Safety
 * `json` must be a NUL-terminated string.
 */
CdalStatus cdal_problem_from_json(const char *json, CdalProblem **out);

/**
 * # Safety
 * `problem` must come from this library and not be used afterwards.
 */
void cdal_problem_free(CdalProblem *problem);

/**
 * Writes the horizon and the output/input dimensions.
 *
 * # Safety
 * `problem` must be live; output pointers may be null.
 */
CdalStatus cdal_problem_dims(const CdalProblem *problem, size_t *horizon, size_t *n_y, size_t *n_u);

/**
 * Replaces the prediction model. The history window is truncated or
 * zero-padded when the orders change.
 *
 * # Safety
 * Both handles must be live.
 */
CdalStatus cdal_problem_set_model(CdalProblem *problem, const CdalModel *model);

/**
 * Sets the history newest-first: `past_y = [y_0, y_-1, ..]` with `n_a * n_y`
 * values and `past_u = [u_-1, u_-2, ..]` with `n_b * n_u` values.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
CdalStatus cdal_problem_set_history(CdalProblem *problem,
                                    const double *past_y,
                                    size_t past_y_len,
                                    const double *past_u,
                                    size_t past_u_len);

/**
 * Shifts the history after `u` was applied and `y` measured.
 *
 * # Safety
 * `y` must hold `n_y` values and `u` `n_u` values.
 */
CdalStatus cdal_problem_push_measurement(CdalProblem *problem, const double *y, const double *u);

/**
 * Sets the references `r_1 .. r_T` (`T * n_y` values), or one `n_y`
 * vector held over the whole horizon.
 *
 * # Safety
 * `refs` must hold `len` values.
 */
CdalStatus cdal_problem_set_references(CdalProblem *problem, const double *refs, size_t len);

/**
 * Default configuration: `rho = 1`, `n_out = 5000`, `n_in = 100`,
 * `eps_out = eps_in = 1e-6`, coupled passes, acceleration and warm starts on.
 */
CdalSolverConfig cdal_solver_config_default(void);

/**
 * Creates a solver; a null `config` selects the defaults.
 *
 * # Safety
 * `config` must be null or point to a valid struct.
 */
CdalStatus cdal_solver_new(const CdalSolverConfig *config, CdalSolver **out);

/**
 * # Safety
 * `solver` must come from `cdal_solver_new` and not be used afterwards.
 */
void cdal_solver_free(CdalSolver *solver);

/**
 * Drops the stored warm start so the next solve starts cold.
 *
 * # Safety
 * `solver` must be live.
 */
CdalStatus cdal_solver_reset(CdalSolver *solver);

/**
 * Solves `problem` and writes the first input `u_0` (`n_u` values). Returns
 * `CDAL_STATUS_NOT_CONVERGED` with the last iterate written when `n_out` is
 * exhausted. `info` may be null.
 *
 * # Safety
 * Handles must be live; `u0` must hold `u0_len` doubles.
 */
CdalStatus cdal_solver_solve(CdalSolver *solver,
                             const CdalProblem *problem,
                             double *u0,
                             size_t u0_len,
                             CdalSolveInfo *info);

/**
 * Copies the last solution: `y` gets `y_1 .. y_T` (`T * n_y` values), `u`
 * gets `u_0 .. u_(T-1)` and `du` the increments (`T * n_u` each). Any
 * output pointer may be null with length 0 to skip it.
 *
 * # Safety
 * Each non-null pointer must hold its stated length.
 */
CdalStatus cdal_solver_solution(const CdalSolver *solver,
                                double *y,
                                size_t y_len,
                                double *u,
                                size_t u_len,
                                double *du,
                                size_t du_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDAL_ARX_H */

#ifndef MANIFOLD_REACH_H
#define MANIFOLD_REACH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_INPUT = 2,
  MR_STATUS_PRECONDITION = 3,
  MR_STATUS_SINGULARITY = 4,
  MR_STATUS_RETRACTION_FAILURE = 5,
  MR_STATUS_CONFIG = 6,
  MR_STATUS_MODEL = 7,
  MR_STATUS_IO = 8,
  MR_STATUS_RUNTIME = 9,
  MR_STATUS_PANIC = 10,
  MR_STATUS_BUFFER_TOO_SMALL = 11,
} MrStatus;

/**
 * Plan outcome reported by [`mr_plan_step`].
 */
typedef enum MrPlanStatus {
  MR_PLAN_STATUS_OPTIMAL = 0,
  MR_PLAN_STATUS_FEASIBLE = 1,
  MR_PLAN_STATUS_FAIL_SAFE = 2,
} MrPlanStatus;

/**
 * Opaque equality-constraint manifold.
 */
typedef struct MrConstraint MrConstraint;

/**
 * Opaque reachability problem.
 */
typedef struct MrProblem MrProblem;

/**
 * Opaque trained value network.
 */
typedef struct MrValueNetwork MrValueNetwork;

/**
 * Planner settings; obtain defaults from [`mr_plan_config_default`].
 */
typedef struct MrPlanConfig {
  double t_plan;
  double dt;
  /**
   * Negative selects `t_plan + 0.2`.
   */
  double t_safe;
  double epsilon;
  uint32_t max_iterations;
  double goal_tolerance;
  bool safety;
} MrPlanConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the next call.
 */
const char *mr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mr_version(void);

/**
 * Circle `‖x - c‖ - r = 0` in the plane.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum MrStatus mr_constraint_circle(double radius, double cx, double cy, struct MrConstraint **out);

/**
 * Sphere `‖x - c‖ - r = 0` in `dim` dimensions.
 *
 * # Safety
 * `center` must point to `dim` doubles; `out` must be valid for one pointer write.
 */
enum MrStatus mr_constraint_sphere(double radius,
                                   const double *center,
                                   size_t dim,
                                   struct MrConstraint **out);

/**
 * Releases a constraint handle; null is ignored.
 *
 * # Safety
 * `c` must come from an `mr_constraint_*` constructor and not be used afterwards.
 */
void mr_constraint_free(struct MrConstraint *c);

/**
 * Ambient dimension, or 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
size_t mr_constraint_ambient_dim(const struct MrConstraint *c);

/**
 * Number of scalar constraints, or 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
size_t mr_constraint_count(const struct MrConstraint *c);

/**
 * Writes `C(x)` into `out` (length = constraint count).
 *
 * # Safety
 * `x` must hold `n` doubles and `out` room for `out_len`.
 */
enum MrStatus mr_constraint_evaluate(const struct MrConstraint *c,
                                     const double *x,
                                     size_t n,
                                     double *out,
                                     size_t out_len);

/**
 * Writes the `n × n` tangent projector at `x` (row-major) into `out`.
 *
 * # Safety
 * `x` must hold `n` doubles and `out` room for `n * n`.
 */
enum MrStatus mr_constraint_tangent_projection(const struct MrConstraint *c,
                                               const double *x,
                                               size_t n,
                                               double *out);

/**
 * Pulls `x` back onto the manifold; result written to `out` (length `n`).
 *
 * # Safety
 * `x` and `out` must each hold `n` doubles.
 */
enum MrStatus mr_constraint_retract(const struct MrConstraint *c,
                                    const double *x,
                                    size_t n,
                                    double *out);

/**
 * Loads a model file written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for one pointer write.
 */
enum MrStatus mr_value_network_load(const char *path, struct MrValueNetwork **out);

/**
 * Releases a network handle; null is ignored.
 *
 * # Safety
 * `net` must come from [`mr_value_network_load`] and not be used afterwards.
 */
void mr_value_network_free(struct MrValueNetwork *net);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t mr_value_network_state_dim(const struct MrValueNetwork *net);

/**
 * Horizon `T`, or NaN for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
double mr_value_network_horizon(const struct MrValueNetwork *net);

/**
 * `V(t, x)`.
 *
 * # Safety
 * `x` must hold `n` doubles; `value` valid for one write.
 */
enum MrStatus mr_value_network_evaluate(const struct MrValueNetwork *net,
                                        double t,
                                        const double *x,
                                        size_t n,
                                        double *value);

/**
 * `V`, `∂V/∂t` and `∇ₓV` (length `n`) at `(t, x)`.
 *
 * # Safety
 * `x` and `dv_dx` must hold `n` doubles; `value`, `dv_dt` valid for one write.
 */
enum MrStatus mr_value_network_gradient(const struct MrValueNetwork *net,
                                        double t,
                                        const double *x,
                                        size_t n,
                                        double *value,
                                        double *dv_dt,
                                        double *dv_dx);

/**
 * Circle reach problem with goal `(0.5, 0)` on the radius-0.5 circle.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum MrStatus mr_problem_circle_reach(double horizon, bool constrained, struct MrProblem **out);

/**
 * Two agents sharing one circle.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum MrStatus mr_problem_circle_pair_game(double radius,
                                          double agent_radius,
                                          double horizon,
                                          struct MrProblem **out);

/**
 * Releases a problem handle; null is ignored.
 *
 * # Safety
 * `p` must come from an `mr_problem_*` constructor and not be used afterwards.
 */
void mr_problem_free(struct MrProblem *p);

/**
 * Constrained reach Hamiltonian `-ū‖P∇V‖` and its minimizing control at `x`.
 *
 * # Safety
 * `x`, `grad` and `control` must each hold `n` doubles; `h` valid for one write.
 */
enum MrStatus mr_hamiltonian_reach(const struct MrConstraint *c,
                                   const double *x,
                                   const double *grad,
                                   size_t n,
                                   double u_max,
                                   double *h,
                                   double *control);

/**
 * Analytic circle reach value `2r sin(max(0, φ - (ū/r)(T - t))/2)` at an on-circle point.
 *
 * # Safety
 * `value` must be valid for one write.
 */
enum MrStatus mr_circle_geodesic_value(double horizon,
                                       double t,
                                       double x0,
                                       double x1,
                                       double *value);

struct MrPlanConfig mr_plan_config_default(void);

/**
 * One receding-horizon solve for the ego agent of a pairwise game problem.
 *
 * `others` holds `n_others` states of length `n` back to back. `net` may be
 * null when there are no others or `config.safety` is false. Controls are
 * written to `controls` (`capacity` doubles, at least `steps * n`), the step
 * count to `steps`, the smallest predicted safety value to `min_value` (NaN
 * without others).
 *
 * # Safety
 * All pointers must be valid for the stated lengths; `problem` and `net` must
 * be live handles (or `net` null).
 */
enum MrStatus mr_plan_step(const struct MrProblem *problem,
                           const struct MrValueNetwork *net,
                           const struct MrPlanConfig *config,
                           const double *ego,
                           const double *others,
                           size_t n_others,
                           const double *goal,
                           size_t n,
                           double u_max,
                           double *controls,
                           size_t capacity,
                           size_t *steps,
                           enum MrPlanStatus *status,
                           double *min_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANIFOLD_REACH_H */

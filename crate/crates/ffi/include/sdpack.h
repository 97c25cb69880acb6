#ifndef SDPACK_H
#define SDPACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2 to 5 match the `sdpack` command
 * line exit codes.
 */
typedef enum SdpackCode {
  SDPACK_CODE_OK = 0,
  SDPACK_CODE_NULL_POINTER = 1,
  SDPACK_CODE_INPUT = 2,
  SDPACK_CODE_UNBOUNDED = 3,
  SDPACK_CODE_INFEASIBLE = 4,
  SDPACK_CODE_NUMERICAL = 5,
  SDPACK_CODE_BUFFER_TOO_SMALL = 6,
  SDPACK_CODE_WRONG_KIND = 7,
  SDPACK_CODE_PANIC = 8,
} SdpackCode;

typedef enum SdpackStatus {
  SDPACK_STATUS_OPTIMAL = 0,
  SDPACK_STATUS_UNBOUNDED = 1,
  SDPACK_STATUS_INFEASIBLE = 2,
  SDPACK_STATUS_ASYMPTOTIC_SUP = 3,
  SDPACK_STATUS_NEAR_UNATTAINED = 4,
  SDPACK_STATUS_NON_CERTIFIED = 5,
} SdpackStatus;

typedef enum SdpackRoute {
  SDPACK_ROUTE_AUTO = 0,
  SDPACK_ROUTE_SOCP = 1,
  SDPACK_ROUTE_EPS_PATH = 2,
  SDPACK_ROUTE_BM = 3,
} SdpackRoute;

/**
 * A parsed packing, combined or design problem.
 */
typedef struct SdpackProblem SdpackProblem;

/**
 * A solve result.
 */
typedef struct SdpackSolution SdpackSolution;

typedef struct SdpackOptions {
  /**
   * Duality-gap target.
   */
  double tol;
  size_t max_iter;
  /**
   * Relative eigenvalue cutoff for numerical rank.
   */
  double rank_threshold;
  /**
   * One of the [`SdpackRoute`] values.
   */
  int32_t route;
} SdpackOptions;

typedef struct SdpackKkt {
  double primal;
  double dual;
  double complementarity;
  bool pass;
} SdpackKkt;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, as a static string.
 */
const char *sdpack_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call on this thread.
 */
const char *sdpack_last_error(void);

void sdpack_string_free(char *s);

struct SdpackOptions sdpack_options_default(void);

/**
 * Parses a JSON problem document (packing, combined or design).
 */
enum SdpackCode sdpack_problem_from_json(const char *json, struct SdpackProblem **out);

/**
 * Builds a packing problem from `C` (`n × n`), the `M_i` stacked as `l`
 * consecutive `n × n` blocks, and `b` (length `l`).
 */
enum SdpackCode sdpack_problem_packing(size_t n,
                                       size_t l,
                                       const double *c,
                                       const double *m,
                                       const double *b,
                                       struct SdpackProblem **out);

void sdpack_problem_free(struct SdpackProblem *p);

/**
 * Matrix size `n` and number of constraints `l`.
 */
enum SdpackCode sdpack_problem_dims(const struct SdpackProblem *p, size_t *n, size_t *l);

enum SdpackCode sdpack_problem_to_json(const struct SdpackProblem *p, char **out);

/**
 * Feasibility, boundedness certificate, ranks and bounds of a packing
 * problem, as a JSON report.
 */
enum SdpackCode sdpack_analyze(const struct SdpackProblem *p, char **out);

/**
 * Solves a packing or combined problem. `opts` may be null for defaults.
 */
enum SdpackCode sdpack_solve(const struct SdpackProblem *p,
                             const struct SdpackOptions *opts,
                             struct SdpackSolution **out);

/**
 * Optimal design of a design problem, as a JSON report.
 */
enum SdpackCode sdpack_design(const struct SdpackProblem *p,
                              const struct SdpackOptions *opts,
                              char **out);

void sdpack_solution_free(struct SdpackSolution *s);

enum SdpackCode sdpack_solution_status(const struct SdpackSolution *s, enum SdpackStatus *out);

enum SdpackCode sdpack_solution_objective(const struct SdpackSolution *s, double *out);

enum SdpackCode sdpack_solution_rank(const struct SdpackSolution *s, size_t *out);

/**
 * Size `n` of `X` and the number of multipliers (zero for combined
 * problems).
 */
enum SdpackCode sdpack_solution_sizes(const struct SdpackSolution *s, size_t *n, size_t *mu_len);

/**
 * Copies `X` row-major into `buf`, which holds `len ≥ n²` doubles.
 */
enum SdpackCode sdpack_solution_x(const struct SdpackSolution *s, double *buf, size_t len);

/**
 * Copies the multipliers into `buf`, which holds `len` doubles.
 */
enum SdpackCode sdpack_solution_mu(const struct SdpackSolution *s, double *buf, size_t len);

/**
 * The full solve report as JSON, the same document `sdpack solve` prints.
 */
enum SdpackCode sdpack_solution_to_json(const struct SdpackSolution *s, char **out);

/**
 * KKT residuals of `(X, μ)` for a packing problem, with `X` row-major
 * `n × n` and `μ` of length `l`. Passes when every residual is at most
 * `tol` times the problem scale.
 */
enum SdpackCode sdpack_verify(const struct SdpackProblem *p,
                              const double *x,
                              const double *mu,
                              double tol,
                              struct SdpackKkt *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDPACK_H */

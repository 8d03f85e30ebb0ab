#ifndef LQTERM_H
#define LQTERM_H

/* Generated by cbindgen from the lqterm-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  LQT_STATUS_OK = 0,
  LQT_STATUS_VALIDATION_FAILED = 1,
  LQT_STATUS_SCHEMA = 2,
  LQT_STATUS_SOLVER = 3,
  LQT_STATUS_TOPOLOGY = 4,
  LQT_STATUS_NULL_ARGUMENT = 5,
  LQT_STATUS_BAD_BUFFER = 6,
  LQT_STATUS_BAD_INDEX = 7,
  LQT_STATUS_INTERNAL = 99,
} LqtStatus;

/**
 * Opaque consensus solution.
 */
typedef struct LqtConsensusSolution LqtConsensusSolution;

/**
 * Opaque per-agent distributed solution.
 */
typedef struct LqtDistributedSolution LqtDistributedSolution;

/**
 * Opaque parsed finite-horizon scenario.
 */
typedef struct LqtScenario LqtScenario;

/**
 * Opaque full-information solution.
 */
typedef struct LqtSolution LqtSolution;

/**
 * Opaque parsed fleet scenario.
 */
typedef struct LqtUgvScenario LqtUgvScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call from the same thread.
 */
const char *lqt_last_error_message(void);

/**
 * Parses a finite-horizon scenario from a JSON document.
 */
LqtStatus lqt_scenario_from_json(const char *json, LqtScenario **out);

/**
 * Parses a finite-horizon scenario from a file path.
 */
LqtStatus lqt_scenario_load(const char *path, LqtScenario **out);

/**
 * State dimension of the scenario's system.
 */
uintptr_t lqt_scenario_state_dim(const LqtScenario *scenario);

/**
 * Input dimension of the scenario's system.
 */
uintptr_t lqt_scenario_input_dim(const LqtScenario *scenario);

/**
 * Number of agent views carried by the scenario (zero when absent).
 */
uintptr_t lqt_scenario_num_agents(const LqtScenario *scenario);

/**
 * Runs the structural validators; `all_pass` receives 1 when every
 * decomposition check and the coupling condition hold.
 */
LqtStatus lqt_scenario_validate(const LqtScenario *scenario, int32_t *all_pass);

/**
 * Full-information solve.
 */
LqtStatus lqt_solve_centralized(const LqtScenario *scenario, LqtSolution **out);

/**
 * Integral cost of the solved trajectory.
 */
double lqt_solution_cost(const LqtSolution *solution);

/**
 * Norm of `x(T) - x_T`.
 */
double lqt_solution_terminal_error(const LqtSolution *solution);

/**
 * Outer iterations the Riccati stage used.
 */
uintptr_t lqt_solution_iterations(const LqtSolution *solution);

/**
 * Terminal multiplier; the buffer needs `state_dim` entries.
 */
LqtStatus lqt_solution_lambda(const LqtSolution *solution, double *buffer, uintptr_t len);

/**
 * Optimal state at time `t` (clamped to the grid); `state_dim` entries.
 */
LqtStatus lqt_solution_state_at(const LqtSolution *solution,
                                double t,
                                double *buffer,
                                uintptr_t len);

/**
 * Optimal control at time `t`; `input_dim` entries.
 */
LqtStatus lqt_solution_control_at(const LqtSolution *solution,
                                  double t,
                                  double *buffer,
                                  uintptr_t len);

/**
 * Partial-information solve over the scenario's graph; the scenario must
 * carry agent views and a topology.
 */
LqtStatus lqt_solve_distributed(const LqtScenario *scenario, LqtDistributedSolution **out);

/**
 * Number of agents in the distributed solution.
 */
uintptr_t lqt_distributed_num_agents(const LqtDistributedSolution *solution);

/**
 * Largest cross-agent deviation over all tracked quantities.
 */
double lqt_distributed_max_pairwise(const LqtDistributedSolution *solution);

/**
 * Agent `agent`'s reconstructed state at time `t`; `state_dim` entries.
 */
LqtStatus lqt_distributed_state_at(const LqtDistributedSolution *solution,
                                   uintptr_t agent,
                                   double t,
                                   double *buffer,
                                   uintptr_t len);

/**
 * Agent `agent`'s controller at time `t`; `input_dim` entries.
 */
LqtStatus lqt_distributed_control_at(const LqtDistributedSolution *solution,
                                     uintptr_t agent,
                                     double t,
                                     double *buffer,
                                     uintptr_t len);

/**
 * Parses a fleet scenario from a JSON document.
 */
LqtStatus lqt_ugv_scenario_from_json(const char *json, LqtUgvScenario **out);

/**
 * Solves the fleet consensus problem along both routes.
 */
LqtStatus lqt_solve_consensus(const LqtUgvScenario *scenario, LqtConsensusSolution **out);

/**
 * Spectral norm of the stacked Riccati solution.
 */
double lqt_consensus_p_norm(const LqtConsensusSolution *solution);

/**
 * Total cost of the distributed controller (quadrature plus tail).
 */
double lqt_consensus_cost(const LqtConsensusSolution *solution);

/**
 * Relative gap between the simulated cost and `x(0)' P x(0)`.
 */
double lqt_consensus_value_identity(const LqtConsensusSolution *solution);

/**
 * Max pairwise state deviation at the end of the simulated horizon.
 */
double lqt_consensus_final_residual(const LqtConsensusSolution *solution);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LQTERM_H */

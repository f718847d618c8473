#ifndef ETHERM_H
#define ETHERM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Which temperature the controller regulates.
 */
typedef enum EthermFeedback {
  EthermFeedback_AfterStack = 0,
  EthermFeedback_BeforeStack = 1,
} EthermFeedback;

typedef enum EthermStatus {
  EthermStatus_Ok = 0,
  EthermStatus_NullPointer = 1,
  EthermStatus_InvalidArgument = 2,
  EthermStatus_InvalidUtf8 = 3,
  EthermStatus_NoConvergence = 4,
  EthermStatus_Infeasible = 5,
  EthermStatus_SimulationAborted = 6,
  EthermStatus_AnalysisFailed = 7,
  EthermStatus_NotFound = 8,
  EthermStatus_Panic = 99,
} EthermStatus;

/*
 Opaque delayed linear model.
 */
typedef struct EthermModel EthermModel;

/*
 Opaque system parameter set.
 */
typedef struct EthermParams EthermParams;

/*
 Opaque simulation trace.
 */
typedef struct EthermTrace EthermTrace;

typedef struct EthermEquilibrium {
  double t_stack;
  double t_sep;
  double t_cool;
  double valve;
  double residual;
} EthermEquilibrium;

typedef struct EthermTraceRow {
  double t;
  double current;
  double t_stack;
  double t_sep;
  double t_cool;
  double valve;
  double t_aim;
  double q_ele;
  double q_dis_total;
  uint8_t flags;
} EthermTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *etherm_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *etherm_version(void);

/*
 Releases a string returned by this library.
 */
void etherm_string_free(char *s);

/*
 Default parameter set. Never fails.
 */
struct EthermParams *etherm_params_default(void);

enum EthermStatus etherm_params_from_json(const char *json, struct EthermParams **out);

/*
 Serializes parameters; release the result with `etherm_string_free`.
 */
enum EthermStatus etherm_params_to_json(const struct EthermParams *params, char **out);

/*
 Sets both transport delays (s).
 */
enum EthermStatus etherm_params_set_delays(struct EthermParams *params, double tau1, double tau2);

void etherm_params_free(struct EthermParams *params);

/*
 Steady state at `current` (A) with the fed-back temperature pinned at `temp` (°C),
 25 °C ambient and 30 °C coolant inlet.
 */
enum EthermStatus etherm_find_equilibrium(const struct EthermParams *params,
                                          double current,
                                          double temp,
                                          enum EthermFeedback feedback,
                                          struct EthermEquilibrium *out);

/*
 Linearizes about the after-stack equilibrium at `current` and `t_stack`.
 */
enum EthermStatus etherm_linearize(const struct EthermParams *params,
                                   double current,
                                   double t_stack,
                                   struct EthermModel **out);

/*
 Copies the model matrices in row-major order. Any output pointer may be NULL.
 `a` and `a1` take 9 values, `e2` takes 3.
 */
enum EthermStatus etherm_model_matrices(const struct EthermModel *model,
                                        double *a,
                                        double *a1,
                                        double *e2,
                                        double *tau1,
                                        double *tau2);

void etherm_model_free(struct EthermModel *model);

/*
 Closed-loop stability of PID gains (SI units) under the first-order delay approximation.
 Writes 1 (stable) or 0 to `stable`.
 */
enum EthermStatus etherm_is_stable(const struct EthermModel *model,
                                   enum EthermFeedback feedback,
                                   double kp,
                                   double ki,
                                   double kd,
                                   int32_t *stable);

/*
 Runs one controller of a scenario given as JSON. `controller` may be NULL when the
 scenario has exactly one controller.
 */
enum EthermStatus etherm_simulate_json(const struct EthermParams *params,
                                       const char *scenario_json,
                                       const char *controller,
                                       struct EthermTrace **out);

/*
 Number of rows in a trace; 0 for NULL.
 */
uintptr_t etherm_trace_len(const struct EthermTrace *trace);

enum EthermStatus etherm_trace_row(const struct EthermTrace *trace,
                                   uintptr_t index,
                                   struct EthermTraceRow *out);

/*
 CSV text of every `decimation`-th row; release with `etherm_string_free`.
 */
enum EthermStatus etherm_trace_to_csv(const struct EthermTrace *trace,
                                      uintptr_t decimation,
                                      char **out);

void etherm_trace_free(struct EthermTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ETHERM_H */

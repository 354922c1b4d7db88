#ifndef FLAGELLUM_H
#define FLAGELLUM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a call.
typedef enum FlgStatus {
  FLG_STATUS_OK = 0,
  // Bad argument, configuration or input file.
  FLG_STATUS_INVALID_INPUT = 1,
  // Solver or training failure.
  FLG_STATUS_NUMERICAL = 2,
  // A null handle or pointer where one was required.
  FLG_STATUS_NULL_POINTER = 3,
  // Internal panic; the handle involved should be freed.
  FLG_STATUS_PANIC = 4,
} FlgStatus;

typedef struct FlgController FlgController;

typedef struct FlgMaps FlgMaps;

typedef struct FlgSimulator FlgSimulator;

typedef struct FlgState FlgState;

// One controller observation. Null pointers mark absent fields.
typedef struct FlgControlInput {
  double t;
  // `history_len` head positions, newest first, as `x, y, z` triples.
  const double *head_history;
  size_t history_len;
  const double *x1;
  const double *x2;
  const double *p1;
  const double *p2;
  // Nonzero when `p1` is the last waypoint.
  int32_t final_leg;
  double omega;
} FlgControlInput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *flg_last_error(void);

// Creates a simulator. `params_json` and `controls_json` are JSON objects
// in the format of the run configuration's `physical` and `solver`
// sections; null selects the coarse preset and default controls.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum FlgStatus flg_simulator_new(const char *params_json,
                                 const char *controls_json,
                                 struct FlgSimulator **out);

// # Safety
// `sim` must be null or a handle from [`flg_simulator_new`] not yet freed.
void flg_simulator_free(struct FlgSimulator *sim);

// Integration time step [s].
//
// # Safety
// `sim` must be a live handle; `dt` must be writable.
enum FlgStatus flg_simulator_time_step(const struct FlgSimulator *sim, double *dt);

// As-built robot at rest.
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
enum FlgStatus flg_state_new(const struct FlgSimulator *sim, struct FlgState **out);

// # Safety
// `state` must be null or a live handle.
void flg_state_free(struct FlgState *state);

// Advances `state` in place by `n_steps` steps at motor rate `omega`
// [rad/s]. On failure the state is left unchanged.
//
// # Safety
// `sim` and `state` must be live handles.
enum FlgStatus flg_state_advance(const struct FlgSimulator *sim,
                                 struct FlgState *state,
                                 double omega,
                                 size_t n_steps);

// # Safety
// `state` must be a live handle; `t` must be writable.
enum FlgStatus flg_state_time(const struct FlgState *state, double *t);

// Number of nodes, head center included.
//
// # Safety
// `state` must be a live handle; `n` must be writable.
enum FlgStatus flg_state_node_count(const struct FlgState *state, size_t *n);

// Position of node `j` (0 is the head center) into `xyz[3]`.
//
// # Safety
// `state` must be a live handle; `xyz` must hold 3 doubles.
enum FlgStatus flg_state_node_position(const struct FlgState *state, size_t j, double *xyz);

// Loads the inverse maps from a model directory.
//
// # Safety
// `dir` must be NUL-terminated; `out` must be writable.
enum FlgStatus flg_maps_load(const char *dir, struct FlgMaps **out);

// # Safety
// `maps` must be null or a live handle.
void flg_maps_free(struct FlgMaps *maps);

// Wait before the pulse [s]; angles in degrees, `omega_rpm` the body-frame
// spin and `v` the straight-swimming speed [m/s].
//
// # Safety
// `t_app` must be writable.
enum FlgStatus flg_compute_t_app(double beta_d,
                                 double beta,
                                 double l_d,
                                 double l,
                                 double omega_rpm,
                                 double v,
                                 double *t_app);

// Creates a controller from a JSON object in the format of the run
// configuration's `control` section; null selects the defaults.
//
// # Safety
// `config_json` must be null or NUL-terminated; `out` must be writable.
enum FlgStatus flg_controller_new(const char *config_json, struct FlgController **out);

// # Safety
// `ctl` must be null or a live handle.
void flg_controller_free(struct FlgController *ctl);

// Feeds one observation and writes the rate for the next interval [rad/s].
//
// # Safety
// Handles must be live; every non-null pointer in `input` must point to
// the documented number of doubles; `omega` must be writable.
enum FlgStatus flg_controller_step(struct FlgController *ctl,
                                   const struct FlgMaps *maps,
                                   const struct FlgControlInput *input,
                                   double *omega);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLAGELLUM_H */

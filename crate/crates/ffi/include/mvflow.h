#ifndef MVFLOW_H
#define MVFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MvfStatus {
  MVF_STATUS_OK = 0,
  MVF_STATUS_NULL_POINTER = 1,
  MVF_STATUS_INVALID_ARGUMENT = 2,
  MVF_STATUS_VALIDATION = 3,
  MVF_STATUS_DOMAIN = 4,
  MVF_STATUS_POSITIVITY = 5,
  MVF_STATUS_RUNTIME = 6,
  MVF_STATUS_IO = 7,
  MVF_STATUS_PANIC = 8,
} MvfStatus;

// A validated run configuration.
typedef struct MvfConfig MvfConfig;

// A barotropic pressure law.
typedef struct MvfPressureLaw MvfPressureLaw;

// Snapshots of a finished run.
typedef struct MvfTrajectory MvfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`) and returns the full message length in bytes.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t mvf_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *mvf_version(void);

// `p(s) = a s^gamma`.
//
// # Safety
// `out` must be valid for writes.
enum MvfStatus mvf_pressure_law_new(double a, double gamma, struct MvfPressureLaw **out);

// # Safety
// `law` must be null or a handle from [`mvf_pressure_law_new`] not yet freed.
void mvf_pressure_law_free(struct MvfPressureLaw *law);

// Pressure `p(s)` and potential `P(s)`.
//
// # Safety
// `law` must be a live handle; `p` and `potential` valid for writes.
enum MvfStatus mvf_pressure_law_eval(const struct MvfPressureLaw *law,
                                     double s,
                                     double *p,
                                     double *potential);

// `P(s) - P'(r)(s - r) - P(r)`.
//
// # Safety
// `law` must be a live handle; `out` valid for writes.
enum MvfStatus mvf_helmholtz_distance(const struct MvfPressureLaw *law,
                                      double s,
                                      double r,
                                      double *out);

// Smallest `c` with `int u^2 <= c int |u'|^2` on a no-slip grid of
// `cells` cells over `[0, extent]`.
//
// # Safety
// `out` must be valid for writes.
enum MvfStatus mvf_poincare_constant(size_t cells, double extent, double *out);

// Parses and validates a TOML configuration.
//
// # Safety
// `toml` must be a NUL-terminated UTF-8 string; `out` valid for writes.
enum MvfStatus mvf_config_parse(const char *toml, struct MvfConfig **out);

// # Safety
// `cfg` must be null or a handle from [`mvf_config_parse`] not yet freed.
void mvf_config_free(struct MvfConfig *cfg);

// Runs a configuration to completion.
//
// # Safety
// `cfg` must be a live handle; `out` valid for writes.
enum MvfStatus mvf_run(const struct MvfConfig *cfg, struct MvfTrajectory **out);

// # Safety
// `traj` must be null or a handle from [`mvf_run`] not yet freed.
void mvf_trajectory_free(struct MvfTrajectory *traj);

// Number of snapshots and number of cells.
//
// # Safety
// `traj` must be a live handle; outputs valid for writes.
enum MvfStatus mvf_trajectory_shape(const struct MvfTrajectory *traj,
                                    size_t *snapshots,
                                    size_t *cells);

// Time of snapshot `j` and its cell densities copied into `rho`
// (`len` must equal the number of cells).
//
// # Safety
// `traj` must be a live handle; `time` valid for writes; `rho` valid for
// `len` writes.
enum MvfStatus mvf_trajectory_density(const struct MvfTrajectory *traj,
                                      size_t j,
                                      double *time,
                                      double *rho,
                                      size_t len);

// Largest absolute and largest signed per-interval energy-budget residual.
//
// # Safety
// `traj` must be a live handle; outputs valid for writes.
enum MvfStatus mvf_trajectory_budget(const struct MvfTrajectory *traj,
                                     double *max_abs,
                                     double *max_signed);

// Relative energy of snapshot `j` against the built-in travelling-wave
// reference, and the run's dissipation defect at that snapshot.
//
// # Safety
// `traj` must be a live handle; outputs valid for writes.
enum MvfStatus mvf_trajectory_relative_energy(const struct MvfTrajectory *traj,
                                              size_t j,
                                              double *energy,
                                              double *defect);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVFLOW_H */

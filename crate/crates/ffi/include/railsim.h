#ifndef RAILSIM_H
#define RAILSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RailsimStatus {
  RAILSIM_STATUS_OK = 0,
  RAILSIM_STATUS_NULL_POINTER = 1,
  RAILSIM_STATUS_INVALID_ARGUMENT = 2,
  RAILSIM_STATUS_IO = 3,
  RAILSIM_STATUS_DATA = 4,
  RAILSIM_STATUS_CHECKPOINT = 5,
  RAILSIM_STATUS_DIMENSION = 6,
  RAILSIM_STATUS_OUT_OF_RANGE = 7,
  RAILSIM_STATUS_PANIC = 8,
} RailsimStatus;

/**
 * Completed forecast ensemble.
 */
typedef struct RailsimForecast RailsimForecast;

/**
 * Operational log.
 */
typedef struct RailsimLog RailsimLog;

/**
 * Rail network with spectral coordinates.
 */
typedef struct RailsimNetwork RailsimNetwork;

/**
 * Trained policy with its normalization statistics.
 */
typedef struct RailsimPolicy RailsimPolicy;

/**
 * One forecast (train, station) cell.
 */
typedef struct RailsimForecastCell {
  /**
   * Index of the train within the forecast.
   */
  uint32_t train_index;
  /**
   * 1-based itinerary index of the station.
   */
  uint32_t station_index;
  int64_t scheduled;
  /**
   * Median predicted delay in seconds.
   */
  double median_delay;
} RailsimForecastCell;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to
 * `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t railsim_last_error(char *buf, size_t len);

/**
 * Drift weight `1 / (1 + alpha * psi^beta)`.
 */
double railsim_drift_weight(uint32_t psi, double alpha, double beta);

/**
 * Builds the 30-station desk network with its embedding.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum RailsimStatus railsim_network_desk(struct RailsimNetwork **out);

/**
 * Loads a network description file and computes its embedding.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a pointer write.
 */
enum RailsimStatus railsim_network_load(const char *path, struct RailsimNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library, not yet freed.
 */
void railsim_network_free(struct RailsimNetwork *net);

/**
 * Number of stations, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t railsim_network_station_count(const struct RailsimNetwork *net);

/**
 * Writes the 8 embedding coordinates of station `index` to `out`.
 *
 * # Safety
 * `net` must be a live handle; `out` must be valid for 8 doubles.
 */
enum RailsimStatus railsim_network_embedding(const struct RailsimNetwork *net,
                                             size_t index,
                                             double *out);

/**
 * Loads a policy checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a pointer write.
 */
enum RailsimStatus railsim_policy_load(const char *path, struct RailsimPolicy **out);

/**
 * # Safety
 * `policy` must be null or a live handle.
 */
void railsim_policy_free(struct RailsimPolicy *policy);

/**
 * Input width of the policy, or 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t railsim_policy_input_dim(const struct RailsimPolicy *policy);

/**
 * Writes the policy's raw outputs for one feature vector: 3 action probabilities for an
 * action head, or the delay increments of a regression head. `out_len` receives the count.
 *
 * # Safety
 * `features` must hold `len` doubles; `out` must hold `cap` doubles; `out_len` must be valid.
 */
enum RailsimStatus railsim_policy_evaluate(const struct RailsimPolicy *policy,
                                           const double *features,
                                           size_t len,
                                           double *out,
                                           size_t cap,
                                           size_t *out_len);

/**
 * Loads an operational log CSV; incoherent trains are dropped.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `net` a live handle; `out` valid for a pointer write.
 */
enum RailsimStatus railsim_log_load(const char *path,
                                    const struct RailsimNetwork *net,
                                    struct RailsimLog **out);

/**
 * # Safety
 * `log` must be null or a live handle.
 */
void railsim_log_free(struct RailsimLog *log);

/**
 * Number of trains, or 0 for a null handle.
 *
 * # Safety
 * `log` must be null or a live handle.
 */
size_t railsim_log_train_count(const struct RailsimLog *log);

/**
 * Monte Carlo forecast from the logged snapshot at `clock`, with copy-forward completion.
 *
 * # Safety
 * All handles must be live; `out` must be valid for a pointer write.
 */
enum RailsimStatus railsim_forecast(const struct RailsimPolicy *policy,
                                    const struct RailsimNetwork *net,
                                    const struct RailsimLog *log,
                                    int64_t clock,
                                    uint32_t n_trajectories,
                                    int64_t horizon,
                                    uint32_t stations,
                                    uint64_t seed,
                                    struct RailsimForecast **out);

/**
 * # Safety
 * `fc` must be null or a live handle.
 */
void railsim_forecast_free(struct RailsimForecast *fc);

/**
 * Number of (train, station) cells, or 0 for a null handle.
 *
 * # Safety
 * `fc` must be null or a live handle.
 */
size_t railsim_forecast_cell_count(const struct RailsimForecast *fc);

/**
 * Reads cell `i`.
 *
 * # Safety
 * `fc` must be a live handle; `out` must be valid for a write.
 */
enum RailsimStatus railsim_forecast_cell(const struct RailsimForecast *fc,
                                         size_t i,
                                         struct RailsimForecastCell *out);

/**
 * Copies the id of train `t` into `buf` (NUL-terminated, truncated to `len`). Returns the full
 * id length in bytes, or 0 when out of range.
 *
 * # Safety
 * `fc` must be a live handle; `buf` must be null or valid for `len` bytes.
 */
size_t railsim_forecast_train_id(const struct RailsimForecast *fc, size_t t, char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAILSIM_H */

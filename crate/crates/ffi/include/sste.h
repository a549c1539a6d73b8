/* C interface to sste-core. Handles are opaque; free each with its matching sste_*_free. */

#ifndef SSTE_H
#define SSTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SsteStatus {
  SSTE_STATUS_OK = 0,
  SSTE_STATUS_NULL_POINTER = 1,
  SSTE_STATUS_INVALID_ARGUMENT = 2,
  SSTE_STATUS_IO = 3,
  SSTE_STATUS_PARSE = 4,
  SSTE_STATUS_INSUFFICIENT_HISTORY = 5,
  SSTE_STATUS_NUMERIC = 6,
  SSTE_STATUS_NO_CANDIDATES = 7,
  SSTE_STATUS_PANIC = 99,
} SsteStatus;

// Check-ins and the friendship graph.
typedef struct SsteDataset SsteDataset;

// Detected events.
typedef struct SsteEvents SsteEvents;

// Kalman-filter state tracking one user's AR coefficients.
typedef struct SsteFilter SsteFilter;

// A batch-fitted interval model.
typedef struct SsteModel SsteModel;

// Region sites for location ranking.
typedef struct SsteRegions SsteRegions;

// Next-event time forecast.
typedef struct SsteTimePrediction {
  // Predicted interval in seconds, before the floor is applied.
  double interval_hat;
  // Predicted event time in epoch seconds.
  int64_t event_time_hat;
  // Whether the interval floor replaced a smaller prediction.
  bool clamped;
} SsteTimePrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sste_version(void);

// Message of the last failed call on this thread, or NULL if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *sste_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string returned through a `char **` out-parameter of
// this library that has not been freed yet.
void sste_string_free(char *s);

// Selects ARMA orders (up to `p_max`, `q_max`) for an interval series and
// fits them; short or constant series fall back to AR(1) or the mean.
//
// # Safety
// `values` must point to `n` readable doubles (or may be NULL when `n` is 0);
// `out` must be a valid pointer to write the handle to.
enum SsteStatus sste_model_fit(const double *values,
                               size_t n,
                               size_t p_max,
                               size_t q_max,
                               struct SsteModel **out);

// Fits fixed orders `(p, q)` after differencing `d` times.
//
// # Safety
// As for [`sste_model_fit`].
enum SsteStatus sste_model_fit_orders(const double *values,
                                      size_t n,
                                      size_t p,
                                      size_t q,
                                      size_t d,
                                      struct SsteModel **out);

// Writes the model orders. Any of the out-pointers may be NULL.
//
// # Safety
// `model` must be a live handle; non-NULL out-pointers must be writable.
enum SsteStatus sste_model_orders(const struct SsteModel *model, size_t *p, size_t *q, size_t *d);

// The fitted model as a JSON object (orders, phi, theta, sigma2, mean).
//
// # Safety
// `model` must be a live handle and `out` writable. Free the string with
// [`sste_string_free`].
enum SsteStatus sste_model_to_json(const struct SsteModel *model, char **out);

// # Safety
// `model` must be NULL or a handle from this library not yet freed.
void sste_model_free(struct SsteModel *model);

// Starts a filter from a fitted model. `warmup` holds the intervals the
// model was fitted on (at least `p + d` of them); `process_noise` is the
// `delta` in `Q = delta*I` and `interval_floor` the smallest interval used
// for event times.
//
// # Safety
// `model` must be a live handle, `warmup` must point to `n` doubles, and
// `out` must be writable.
enum SsteStatus sste_filter_new(const struct SsteModel *model,
                                const double *warmup,
                                size_t n,
                                double process_noise,
                                double interval_floor,
                                struct SsteFilter **out);

// Absorbs an observed interval and updates the AR coefficients. On failure
// the state is unchanged.
//
// # Safety
// `filter` must be a live handle not used concurrently from another thread.
enum SsteStatus sste_filter_learn(struct SsteFilter *filter, double x);

// One-step interval forecast from the current state.
//
// # Safety
// `filter` must be a live handle and `out` writable.
enum SsteStatus sste_filter_predict_interval(const struct SsteFilter *filter, double *out);

// Absorbs `x_new`, the interval that ended at `last_event_time`, and
// forecasts the next event time.
//
// # Safety
// `filter` must be a live handle not used concurrently; `out` writable.
enum SsteStatus sste_filter_predict_time(struct SsteFilter *filter,
                                         int64_t last_event_time,
                                         double x_new,
                                         struct SsteTimePrediction *out);

// Copies up to `capacity` current AR coefficients into `buf` and writes the
// total count to `len`. Pass `capacity` 0 to query the count only.
//
// # Safety
// `filter` must be a live handle, `buf` must have room for `capacity`
// doubles (may be NULL when `capacity` is 0), and `len` must be writable.
enum SsteStatus sste_filter_phi(const struct SsteFilter *filter,
                                double *buf,
                                size_t capacity,
                                size_t *len);

// Serialises the state as a JSON snapshot labelled with `user`.
//
// # Safety
// `filter` must be a live handle, `user` a NUL-terminated UTF-8 string and
// `out` writable. Free the string with [`sste_string_free`].
enum SsteStatus sste_filter_to_json(const struct SsteFilter *filter, const char *user, char **out);

// Restores a filter from a snapshot produced by [`sste_filter_to_json`].
//
// # Safety
// `json` must be a NUL-terminated UTF-8 string and `out` writable.
enum SsteStatus sste_filter_from_json(const char *json, struct SsteFilter **out);

// # Safety
// `filter` must be NULL or a handle from this library not yet freed.
void sste_filter_free(struct SsteFilter *filter);

// Loads `checkins.csv` (`user_id,timestamp,lat,lon`) and `friends.csv`
// (`user_id_a,user_id_b`).
//
// # Safety
// Both paths must be NUL-terminated UTF-8 strings; `out` writable.
enum SsteStatus sste_dataset_load(const char *checkins_path,
                                  const char *friends_path,
                                  struct SsteDataset **out);

// Number of check-ins in the dataset; 0 for NULL.
//
// # Safety
// `dataset` must be NULL or a live handle.
size_t sste_dataset_checkin_count(const struct SsteDataset *dataset);

// # Safety
// `dataset` must be NULL or a handle from this library not yet freed.
void sste_dataset_free(struct SsteDataset *dataset);

// Detects events: friends' check-ins within `epsilon_time` seconds and
// `epsilon_dist` meters of each other, at least `min_participants` people.
//
// # Safety
// `dataset` must be a live handle and `out` writable.
enum SsteStatus sste_detect(const struct SsteDataset *dataset,
                            int64_t epsilon_time,
                            double epsilon_dist,
                            size_t min_participants,
                            struct SsteEvents **out);

// Reads events from a JSONL file written by [`sste_events_write`].
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
enum SsteStatus sste_events_read(const char *path, struct SsteEvents **out);

// Writes events as JSONL.
//
// # Safety
// `events` must be a live handle and `path` a NUL-terminated UTF-8 string.
enum SsteStatus sste_events_write(const struct SsteEvents *events, const char *path);

// Number of events; 0 for NULL.
//
// # Safety
// `events` must be NULL or a live handle.
size_t sste_events_len(const struct SsteEvents *events);

// # Safety
// `events` must be NULL or a handle from this library not yet freed.
void sste_events_free(struct SsteEvents *events);

// Loads region sites from `sites.csv` (`site_id,lat,lon`).
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
enum SsteStatus sste_regions_load(const char *path, struct SsteRegions **out);

// Region of a coordinate: the nearest site, ties to the lowest id.
//
// # Safety
// `regions` must be a live handle and `out` writable.
enum SsteStatus sste_regions_assign(const struct SsteRegions *regions,
                                    double lat,
                                    double lon,
                                    uint32_t *out);

// # Safety
// `regions` must be NULL or a handle from this library not yet freed.
void sste_regions_free(struct SsteRegions *regions);

// Predicts every user's next event time and top `top_n` regions with blend
// weight `xi`, using default model, filter and scoring settings. Writes one
// JSON object per line; users with too little history are left out.
//
// # Safety
// All handles must be live and `out` writable. Free the string with
// [`sste_string_free`].
enum SsteStatus sste_predict_jsonl(const struct SsteDataset *dataset,
                                   const struct SsteEvents *events,
                                   const struct SsteRegions *regions,
                                   double xi,
                                   size_t top_n,
                                   char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSTE_H */

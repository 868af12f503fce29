#ifndef OTAFEEL_H
#define OTAFEEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a fallible call. Zero is success.
typedef enum OtafeelStatus {
  OTAFEEL_STATUS_OK = 0,
  OTAFEEL_STATUS_NULL_POINTER = 1,
  OTAFEEL_STATUS_INVALID_UTF8 = 2,
  OTAFEEL_STATUS_CONFIG = 3,
  OTAFEEL_STATUS_INFEASIBLE = 4,
  OTAFEEL_STATUS_INVALID_PARAMETER = 5,
  OTAFEEL_STATUS_IO = 6,
  OTAFEEL_STATUS_OUT_OF_RANGE = 7,
  OTAFEEL_STATUS_INTERNAL = 8,
  OTAFEEL_STATUS_PANIC = 9,
} OtafeelStatus;

// Per-round metrics of one finished run.
typedef struct OtafeelRun OtafeelRun;

// Scenario configuration.
typedef struct OtafeelScenario OtafeelScenario;

// One round of a run. NaN marks metrics the baseline does not produce.
typedef struct OtafeelRoundLog {
  // 1-based.
  uint64_t round;
  double sensing_mse;
  double agg_mse;
  double task_loss;
  double task_accuracy;
  double crb_l;
} OtafeelRoundLog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *otafeel_last_error(void);

// Library version as a static NUL-terminated string.
const char *otafeel_version(void);

// Built-in default scenario. Never null.
struct OtafeelScenario *otafeel_scenario_default(void);

// Parses and validates a scenario document.
//
// # Safety
// `json` is a NUL-terminated string; `out` is a valid pointer.
enum OtafeelStatus otafeel_scenario_from_json(const char *json, struct OtafeelScenario **out);

// Loads and validates a scenario file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is a valid pointer.
enum OtafeelStatus otafeel_scenario_load(const char *path, struct OtafeelScenario **out);

// Overrides the number of protocol rounds.
//
// # Safety
// `scenario` is null or a live handle.
enum OtafeelStatus otafeel_scenario_set_rounds(struct OtafeelScenario *scenario, uint64_t rounds);

// Serializes the scenario; free the string with [`otafeel_string_free`].
//
// # Safety
// `scenario` is null or a live handle; `out` is a valid pointer.
enum OtafeelStatus otafeel_scenario_to_json(const struct OtafeelScenario *scenario, char **out);

// # Safety
// `scenario` is null or a handle not yet freed.
void otafeel_scenario_free(struct OtafeelScenario *scenario);

// # Safety
// `s` is null or a string returned by this library and not yet freed.
void otafeel_string_free(char *s);

// Runs one baseline (`"collabsensefed"`, `"perfect_feel"`, `"ota_feel"`,
// `"single_shot"`, `"sensing_perfect"`, `"sensing_ota"`) on one seed.
//
// # Safety
// `scenario` is a live handle, `baseline` a NUL-terminated string and `out` a valid pointer.
enum OtafeelStatus otafeel_run(const struct OtafeelScenario *scenario,
                               uint64_t seed,
                               const char *baseline,
                               struct OtafeelRun **out);

// Number of logged rounds; zero for a null handle.
//
// # Safety
// `run` is null or a live handle.
uintptr_t otafeel_run_rounds(const struct OtafeelRun *run);

// Copies round `index` (0-based) into `out`.
//
// # Safety
// `run` is null or a live handle; `out` is null or valid for writes.
enum OtafeelStatus otafeel_run_round(const struct OtafeelRun *run,
                                     uintptr_t index,
                                     struct OtafeelRoundLog *out);

// Writes the run's rounds as CSV.
//
// # Safety
// `run` is a live handle and `path` a NUL-terminated string.
enum OtafeelStatus otafeel_run_write_csv(const struct OtafeelRun *run, const char *path);

// # Safety
// `run` is null or a handle not yet freed.
void otafeel_run_free(struct OtafeelRun *run);

// Real scalars forwarded when raw echoes are centralized.
uint64_t otafeel_ssl_centralized(uint64_t k, uint64_t m, uint64_t s);

// Real scalars sent for sensing by the distributed protocol.
uint64_t otafeel_ssl_distributed(uint64_t d, uint64_t rounds, uint64_t tau);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTAFEEL_H */

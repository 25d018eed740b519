#ifndef COLLABRL_H
#define COLLABRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum CrlStatus {
  CRL_STATUS_OK = 0,
  CRL_STATUS_IO = 1,
  CRL_STATUS_CONFIG = 2,
  CRL_STATUS_SCHEMA = 3,
  CRL_STATUS_PHASE = 4,
  CRL_STATUS_NULL_POINTER = 5,
  CRL_STATUS_INVALID_UTF8 = 6,
  CRL_STATUS_PANIC = 7,
} CrlStatus;

/**
 * Report of one pipeline run, complete or partial.
 */
typedef struct CrlReport CrlReport;

/**
 * A tabular instance: shared MDP and per-step user reward matrices.
 */
typedef struct CrlTabularInstance CrlTabularInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *crl_last_error_message(void);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer returned by a `crl_*_to_json` call that has
 * not been freed yet.
 */
void crl_string_free(char *s);

/**
 * Generate a tabular instance.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CrlStatus crl_tabular_instance_generate(size_t num_users,
                                             size_t num_states,
                                             size_t num_actions,
                                             size_t horizon,
                                             size_t rank,
                                             uint64_t seed,
                                             struct CrlTabularInstance **out);

/**
 * Parse a tabular bundle document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum CrlStatus crl_tabular_instance_from_json(const char *json, struct CrlTabularInstance **out);

/**
 * Serialize an instance; free the result with `crl_string_free`.
 *
 * # Safety
 * `inst` must be a live handle and `out` writable.
 */
enum CrlStatus crl_tabular_instance_to_json(const struct CrlTabularInstance *inst, char **out);

/**
 * # Safety
 * `inst` must be null or a handle that has not been freed yet.
 */
void crl_tabular_instance_free(struct CrlTabularInstance *inst);

/**
 * Run the collaborative tabular pipeline with the exact reward-free backend.
 * A non-positive `mask_rate` selects the theorem rate. On a phase failure the
 * partial report is still written to `out` and `CrlStatus::Phase` is returned.
 *
 * # Safety
 * `inst` must be a live handle and `out` writable.
 */
enum CrlStatus crl_tabular_run(const struct CrlTabularInstance *inst,
                               double epsilon,
                               double mask_rate,
                               uint64_t seed,
                               struct CrlReport **out);

/**
 * Largest true suboptimality over users; NaN when no user was planned.
 *
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum CrlStatus crl_report_max_subopt(const struct CrlReport *report, double *out);

/**
 * Trajectories spent in `phase` (e.g. `"phase2"`, or `"total"`).
 *
 * # Safety
 * `report` must be a live handle, `phase` NUL-terminated and `out` writable.
 */
enum CrlStatus crl_report_phase_trajectories(const struct CrlReport *report,
                                             const char *phase,
                                             uint64_t *out);

/**
 * Serialize a report; free the result with `crl_string_free`.
 *
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum CrlStatus crl_report_to_json(const struct CrlReport *report, char **out);

/**
 * # Safety
 * `report` must be null or a handle that has not been freed yet.
 */
void crl_report_free(struct CrlReport *report);

/**
 * Coherence `(μ0, μ1)` of a row-major `rows x cols` matrix at rank `rank`.
 *
 * # Safety
 * `data` must point to `rows * cols` doubles; `mu0` and `mu1` must be writable.
 */
enum CrlStatus crl_coherence(const double *data,
                             size_t rows,
                             size_t cols,
                             size_t rank,
                             double *mu0,
                             double *mu1);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* COLLABRL_H */

#ifndef SLS_H
#define SLS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlsStatus {
  SLS_STATUS_OK = 0,
  SLS_STATUS_NULL_POINTER = 1,
  SLS_STATUS_CONFIG = 2,
  SLS_STATUS_DATA = 3,
  SLS_STATUS_ABORT = 4,
  SLS_STATUS_PANIC = 5,
} SlsStatus;

typedef enum SlsStartRule {
  SLS_START_RULE_LEVERAGE = 0,
  SLS_START_RULE_UNIFORM = 1,
} SlsStartRule;

typedef enum SlsEventKind {
  /**
   * The lag window is still filling; no leverage was computed.
   */
  SLS_EVENT_KIND_WARMING = 0,
  SLS_EVENT_KIND_NONE = 1,
  SLS_EVENT_KIND_BLOCK_STARTED = 2,
  SLS_EVENT_KIND_BLOCK_COMPLETED = 3,
  SLS_EVENT_KIND_SAFEGUARD_ABORT = 4,
} SlsEventKind;

typedef struct SlsMonitor SlsMonitor;

typedef struct SlsPilot SlsPilot;

typedef struct SlsSampler SlsSampler;

typedef struct SlsSamplerConfig {
  double threshold_c;
  uint64_t seed;
  /**
   * 0 selects the library default.
   */
  size_t max_block_len;
  /**
   * Values <= 0 select 1.
   */
  double leverage_scale;
} SlsSamplerConfig;

/**
 * Outcome of one sampler step. Block fields are set for
 * `SLS_EVENT_KIND_BLOCK_COMPLETED` (and `block_start` for started/abort).
 */
typedef struct SlsEvent {
  enum SlsEventKind kind;
  uint64_t index;
  double leverage;
  uint64_t block_start;
  uint64_t block_stop;
  size_t block_len;
  double acc_info;
  double sigma_hat_sq;
  size_t rank;
  bool degenerate;
} SlsEvent;

typedef struct SlsMonitorStep {
  /**
   * False while the lag window is warming up.
   */
  bool active;
  uint64_t index;
  double leverage;
  bool has_verdict;
  bool aborted;
  uint64_t start;
  uint64_t stop;
  double chi2;
  double threshold;
  bool alarm;
  bool degenerate;
  double acc_info;
} SlsMonitorStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sls_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sls_string_free(char *s);

/**
 * Fits a pilot on `n` samples. `order` 0 selects the order by BIC up to
 * `p_max`.
 *
 * # Safety
 * `data` must point to `n` doubles; `out` must be writable.
 */
enum SlsStatus sls_pilot_build(const double *data,
                               size_t n,
                               size_t p_max,
                               size_t order,
                               struct SlsPilot **out);

/**
 * Parses a pilot from the JSON produced by [`sls_pilot_to_json`].
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SlsStatus sls_pilot_from_json(const char *json, struct SlsPilot **out);

/**
 * Serializes a pilot; release the result with [`sls_string_free`].
 *
 * # Safety
 * `pilot` must be a live handle; `out` must be writable.
 */
enum SlsStatus sls_pilot_to_json(const struct SlsPilot *pilot, char **out);

/**
 * Order of the pilot model, or 0 for NULL.
 *
 * # Safety
 * `pilot` must be NULL or a live handle.
 */
size_t sls_pilot_order(const struct SlsPilot *pilot);

/**
 * Baseline noise variance, or NaN for NULL.
 *
 * # Safety
 * `pilot` must be NULL or a live handle.
 */
double sls_pilot_sigma0_sq(const struct SlsPilot *pilot);

/**
 * Copies `β̂₀` into `out` (capacity `cap`).
 *
 * # Safety
 * `pilot` must be a live handle; `out` must hold `cap` doubles.
 */
enum SlsStatus sls_pilot_beta0(const struct SlsPilot *pilot, double *out, size_t cap);

/**
 * # Safety
 * `pilot` must be NULL or a handle not yet freed.
 */
void sls_pilot_free(struct SlsPilot *pilot);

/**
 * Creates a sampler. `q` is the uniform start probability; a negative `q`
 * matches the pilot's mean capped leverage. The pilot handle may be freed
 * afterwards.
 *
 * # Safety
 * `pilot` and `cfg` must be valid; `out` must be writable.
 */
enum SlsStatus sls_sampler_new(const struct SlsPilot *pilot,
                               const struct SlsSamplerConfig *cfg,
                               enum SlsStartRule rule,
                               double q,
                               struct SlsSampler **out);

/**
 * Feeds a pilot-history sample into the lag window.
 *
 * # Safety
 * `sampler` must be a live handle.
 */
enum SlsStatus sls_sampler_prime(struct SlsSampler *sampler, uint64_t index, double value);

/**
 * Processes one live sample. On block completion the block is fitted and
 * its coefficients are available from [`sls_sampler_block_beta`].
 *
 * # Safety
 * `sampler` must be a live handle; `event` must be writable.
 */
enum SlsStatus sls_sampler_step(struct SlsSampler *sampler,
                                uint64_t index,
                                double value,
                                struct SlsEvent *event);

/**
 * Copies `β̂` of the last completed block. `len_out`, when non-NULL,
 * receives the number of coefficients (0 before any block).
 *
 * # Safety
 * `sampler` must be a live handle; `out` must hold `cap` doubles.
 */
enum SlsStatus sls_sampler_block_beta(const struct SlsSampler *sampler,
                                      double *out,
                                      size_t cap,
                                      size_t *len_out);

/**
 * Sampler state in bytes, excluding the active block buffer.
 *
 * # Safety
 * `sampler` must be NULL or a live handle.
 */
size_t sls_sampler_resident_bytes(const struct SlsSampler *sampler);

/**
 * # Safety
 * `sampler` must be NULL or a handle not yet freed.
 */
void sls_sampler_free(struct SlsSampler *sampler);

/**
 * Creates a leverage-driven monitor alarming at level `alpha`.
 *
 * # Safety
 * `pilot` and `cfg` must be valid; `out` must be writable.
 */
enum SlsStatus sls_monitor_new(const struct SlsPilot *pilot,
                               const struct SlsSamplerConfig *cfg,
                               double alpha,
                               struct SlsMonitor **out);

/**
 * # Safety
 * `monitor` must be a live handle.
 */
enum SlsStatus sls_monitor_prime(struct SlsMonitor *monitor, uint64_t index, double value);

/**
 * # Safety
 * `monitor` must be a live handle; `step` must be writable.
 */
enum SlsStatus sls_monitor_step(struct SlsMonitor *monitor,
                                uint64_t index,
                                double value,
                                struct SlsMonitorStep *step);

/**
 * Copies `β̂` of the last scored block.
 *
 * # Safety
 * `monitor` must be a live handle; `out` must hold `cap` doubles.
 */
enum SlsStatus sls_monitor_block_beta(const struct SlsMonitor *monitor,
                                      double *out,
                                      size_t cap,
                                      size_t *len_out);

/**
 * # Safety
 * `monitor` must be NULL or a handle not yet freed.
 */
void sls_monitor_free(struct SlsMonitor *monitor);

/**
 * # Safety
 * `out` must be writable.
 */
enum SlsStatus sls_chi2_quantile(uint32_t dof, double p, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum SlsStatus sls_normal_quantile(double p, double *out);

/**
 * Simulates `n` values of an AR(p) stream. `df` <= 0 gives Gaussian
 * innovations with standard deviation `sigma`, otherwise Student-t with
 * `df` degrees of freedom rescaled to standard deviation `sigma`.
 *
 * # Safety
 * `coeffs` must hold `p` doubles and `out` `n` doubles.
 */
enum SlsStatus sls_simulate_ar(const double *coeffs,
                               size_t p,
                               double sigma,
                               double df,
                               uint64_t seed,
                               double *out,
                               size_t n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLS_H */

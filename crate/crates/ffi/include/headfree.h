#ifndef HEADFREE_H
#define HEADFREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HfStatus {
  HF_STATUS_OK = 0,
  HF_STATUS_NULL_POINTER = 1,
  HF_STATUS_INVALID_INPUT = 2,
  HF_STATUS_LENGTH_MISMATCH = 3,
  HF_STATUS_TOO_SHORT = 4,
  HF_STATUS_PARSE = 5,
  HF_STATUS_SCHEMA_MISMATCH = 6,
  HF_STATUS_DIVERGED = 7,
  HF_STATUS_FORMAT = 8,
  HF_STATUS_IO = 9,
  HF_STATUS_UTF8 = 10,
  HF_STATUS_PANIC = 11,
} HfStatus;

typedef enum HfView {
  /**
   * F, P, S
   */
  HF_VIEW_COLLAPSED = 0,
  /**
   * F, P, S, B
   */
  HF_VIEW_COLLAPSED_WITH_BLINK = 1,
  /**
   * FS, FT, P, S
   */
  HF_VIEW_FULL = 2,
} HfView;

typedef struct HfModel HfModel;

typedef struct HfRecording HfRecording;

typedef struct HfTrace HfTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *hf_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void hf_string_free(char *s);

/**
 * Parses a recording file held in `csv`. `rate_hz <= 0` infers the rate
 * from the timestamps.
 *
 * # Safety
 * `csv` must be a nul-terminated string and `out` writable.
 */
enum HfStatus hf_recording_parse(const char *csv, double rate_hz, struct HfRecording **out);

/**
 * # Safety
 * `rec` must be null or a live handle from [`hf_recording_parse`].
 */
void hf_recording_free(struct HfRecording *rec);

/**
 * # Safety
 * `rec` must be a live handle.
 */
size_t hf_recording_len(const struct HfRecording *rec);

/**
 * Conditions a recording into velocity channels. `config_toml` may be null
 * for the default filter.
 *
 * # Safety
 * `rec` must be a live handle, `config_toml` null or nul-terminated, `out`
 * writable.
 */
enum HfStatus hf_trace_compute(const struct HfRecording *rec,
                               const char *config_toml,
                               struct HfTrace **out);

/**
 * # Safety
 * `trace` must be null or a live handle from [`hf_trace_compute`].
 */
void hf_trace_free(struct HfTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle.
 */
size_t hf_trace_len(const struct HfTrace *trace);

/**
 * Copies channel `channel` (0 eye_abs, 1 head_abs, 2 eye_az, 3 head_az,
 * 4 eye_el, 5 head_el; °/s) into `out`, which holds `len` doubles.
 *
 * # Safety
 * `trace` must be a live handle and `out` valid for `len` writes.
 */
enum HfStatus hf_trace_channel(const struct HfTrace *trace,
                               uint32_t channel,
                               double *out,
                               size_t len);

/**
 * Loads a serialized forest or recurrent network.
 *
 * # Safety
 * `bytes` must be valid for `len` reads and `out` writable.
 */
enum HfStatus hf_model_load(const uint8_t *bytes, size_t len, struct HfModel **out);

/**
 * # Safety
 * `model` must be null or a live handle from [`hf_model_load`].
 */
void hf_model_free(struct HfModel *model);

/**
 * Classifies every sample of `trace` (computed from `rec`) into collapsed
 * codes (0 fixation, 1 pursuit, 2 saccade, -1 unlabelled).
 *
 * # Safety
 * Handles must be live and `out` valid for `len` writes.
 */
enum HfStatus hf_model_classify(const struct HfModel *model,
                                const struct HfRecording *rec,
                                const struct HfTrace *trace,
                                int32_t *out,
                                size_t len);

/**
 * Sample-level Cohen's kappa over samples labelled in both sequences.
 *
 * # Safety
 * `reference` and `test` must be valid for `n` reads; `kappa` writable.
 */
enum HfStatus hf_sample_kappa(const int32_t *reference,
                              const int32_t *test,
                              size_t n,
                              enum HfView view,
                              double *kappa);

/**
 * Length-normalized Levenshtein distance between the event strings.
 *
 * # Safety
 * `reference` and `test` must be valid for `n` reads; `eer` writable.
 */
enum HfStatus hf_event_error_rate(const int32_t *reference,
                                  const int32_t *test,
                                  size_t n,
                                  double *eer);

/**
 * Event-linked comparison. Writes the kappa (NaN when undefined) and, when
 * `report_json` is non-null, the full report as a string to free with
 * [`hf_string_free`]. `symmetric` runs both directions.
 *
 * # Safety
 * `reference` and `test` must be valid for `n` reads; `kappa` writable;
 * `report_json` null or writable.
 */
enum HfStatus hf_elc(const int32_t *reference,
                     const int32_t *test,
                     size_t n,
                     enum HfView view,
                     double rate_hz,
                     bool symmetric,
                     double *kappa,
                     char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEADFREE_H */

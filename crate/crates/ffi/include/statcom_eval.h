#ifndef STATCOM_EVAL_H
#define STATCOM_EVAL_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SE_STATUS_OK = 0,
  SE_STATUS_NULL_POINTER = 1,
  SE_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed cfg/dat or JSON.
   */
  SE_STATUS_PARSE = 3,
  /**
   * Well-formed input outside the accepted range.
   */
  SE_STATUS_INVALID_INPUT = 4,
  /**
   * The model or probe did not reach a usable result.
   */
  SE_STATUS_NUMERICAL = 5,
  SE_STATUS_PANIC = 6,
} SeStatus;

typedef enum {
  SE_VERDICT_PASS = 0,
  SE_VERDICT_FAIL = 1,
} SeVerdict;

typedef enum {
  SE_REPORT_FORMAT_JSON = 0,
  SE_REPORT_FORMAT_CSV = 1,
  SE_REPORT_FORMAT_SVG = 2,
} SeReportFormat;

/**
 * Calibration table plus gain/reactance fit.
 */
typedef struct SeCalibration SeCalibration;

typedef struct SeRecording SeRecording;

typedef struct SeReport SeReport;

/**
 * Scalar metrics of a report. Q in MVAR, reactance in H.
 */
typedef struct {
  double rmse;
  double nrmse;
  double pearson_r;
  double max_q_meas;
  double max_q_sim;
  double max_q_abs_diff;
  double max_q_rel_diff;
  double estimated_l;
  double probed_dqdv;
  size_t n_points;
} SeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful one. Valid until the next call into this library.
 */
const char *se_last_error(void);

/**
 * Library version as a static string.
 */
const char *se_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void se_string_free(char *s);

/**
 * Parses a cfg/dat text pair.
 *
 * # Safety
 * `cfg` and `dat` must be nul-terminated strings; `out` must be writable.
 */
SeStatus se_recording_parse(const char *cfg, const char *dat, SeRecording **out_rec);

/**
 * Renders a recording back to cfg/dat text.
 *
 * # Safety
 * `rec` must be a live handle; `out_cfg` and `out_dat` must be writable.
 */
SeStatus se_recording_write(const SeRecording *rec, char **out_cfg, char **out_dat);

/**
 * # Safety
 * `rec` must be a live handle or null.
 */
size_t se_recording_n_samples(const SeRecording *rec);

/**
 * # Safety
 * `rec` must be a live handle or null.
 */
size_t se_recording_n_channels(const SeRecording *rec);

/**
 * Sample rate in Hz, or 0 for a null handle.
 *
 * # Safety
 * `rec` must be a live handle or null.
 */
double se_recording_sample_rate(const SeRecording *rec);

/**
 * # Safety
 * `rec` must come from this library and not have been freed, or be null.
 */
void se_recording_free(SeRecording *rec);

/**
 * Synthesizes an event from an EventSpec JSON. With `ems_json` and `cal`
 * the currents come from the model evaluation would build; with both null
 * they come from the settings' model started at rest.
 *
 * # Safety
 * String arguments must be nul-terminated or null where allowed; `cal`
 * must be a live handle or null; `out_rec` must be writable.
 */
SeStatus se_synth_event(const char *spec_json,
                        const char *ems_json,
                        const SeCalibration *cal,
                        const char *settings_json,
                        SeRecording **out_rec);

/**
 * The reference three-point vendor table with its quadratic fit.
 *
 * # Safety
 * `out_cal` must be writable.
 */
SeStatus se_calibration_reference(SeCalibration **out_cal);

/**
 * Probes each inductance (H) and fits gain against reactance.
 *
 * # Safety
 * `l_values` must point to `n` doubles; `settings_json` must be
 * nul-terminated or null; `out_cal` must be writable.
 */
SeStatus se_calibration_run(const double *l_values,
                            size_t n,
                            size_t degree,
                            const char *settings_json,
                            SeCalibration **out_cal);

/**
 * Loads the `{table, fit}` document written by `statcom-eval calibrate`.
 *
 * # Safety
 * `json` must be nul-terminated; `out_cal` must be writable.
 */
SeStatus se_calibration_from_json(const char *json, SeCalibration **out_cal);

/**
 * # Safety
 * `cal` must be a live handle; `out_json` must be writable.
 */
SeStatus se_calibration_to_json(const SeCalibration *cal, char **out_json);

/**
 * Inverts the fit on the default bracket: EMS gain to source inductance, H.
 *
 * # Safety
 * `cal` must be a live handle; `out_l` must be writable.
 */
SeStatus se_reactance_from_gain(const SeCalibration *cal, double gain, double *out_l);

/**
 * Gain the calibration table schedules for a measured dQ/dV (GVAR/pu).
 *
 * # Safety
 * `cal` must be a live handle; `out_gain` must be writable.
 */
SeStatus se_gain_from_dqdv(const SeCalibration *cal, double dqdv, double *out_gain);

/**
 * dQ/dV (GVAR/pu) measured by the probe against a Thevenin source of
 * inductance `l_henry`.
 *
 * # Safety
 * `settings_json` must be nul-terminated or null; `out_dqdv` must be
 * writable.
 */
SeStatus se_probe_dqdv(double l_henry, const char *settings_json, double *out_dqdv);

/**
 * Runs the full evaluation of `rec` under the EMS settings.
 *
 * # Safety
 * `rec` and `cal` must be live handles; `ems_json` nul-terminated;
 * `settings_json` nul-terminated or null; `out_report` writable.
 */
SeStatus se_evaluate(const SeRecording *rec,
                     const SeCalibration *cal,
                     const char *ems_json,
                     const char *settings_json,
                     SeReport **out_report);

/**
 * # Safety
 * `rep` must be a live handle; `out_verdict` writable.
 */
SeStatus se_report_verdict(const SeReport *rep, SeVerdict *out_verdict);

/**
 * # Safety
 * `rep` must be a live handle; `out_metrics` writable.
 */
SeStatus se_report_metrics(const SeReport *rep, SeMetrics *out_metrics);

/**
 * Copies up to `cap` aligned points into the caller's arrays; any of the
 * three may be null. Writes the number of available points to `out_len`.
 *
 * # Safety
 * Non-null arrays must hold `cap` doubles; `out_len` writable.
 */
SeStatus se_report_series(const SeReport *rep,
                          double *t,
                          double *q_meas,
                          double *q_sim,
                          size_t cap,
                          size_t *out_len);

/**
 * # Safety
 * `rep` must be a live handle; `out_doc` writable.
 */
SeStatus se_report_render(const SeReport *rep, SeReportFormat format, char **out_doc);

/**
 * # Safety
 * `rep` must come from this library and not have been freed, or be null.
 */
void se_report_free(SeReport *rep);

/**
 * # Safety
 * `cal` must come from this library and not have been freed, or be null.
 */
void se_calibration_free(SeCalibration *cal);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STATCOM_EVAL_H */

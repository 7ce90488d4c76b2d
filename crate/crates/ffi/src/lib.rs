//! C ABI for `statcom-eval`.
//!
//! Every fallible call returns an [`SeStatus`]; on anything but
//! `SE_STATUS_OK` a message is available from [`se_last_error`] on the same
//! thread. Handles are opaque and freed with their `*_free` function;
//! strings returned through out-pointers are freed with [`se_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use statcom_eval::cli::{FitFile, Settings};
use statcom_eval::evalpipe::{
    evaluate, load_ems_settings, prepare_model, render_report, EvalError, EvaluationReport,
    ReportFormat, Verdict,
};
use statcom_eval::gaintune::{
    calibrate, fit_gain_reactance, gain_from_dqdv, probe_dqdv, reactance_from_gain,
    CalibrationTable, GainTuneError, DEFAULT_BRACKET,
};
use statcom_eval::records::{parse_comtrade, write_comtrade, RecordsError};
use statcom_eval::simcore::{GridEquivalent, SimError};
use statcom_eval::synthgen::{gen_event, synth_currents, synth_measured_q, EventSpec, SynthError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed cfg/dat or JSON.
    Parse = 3,
    /// Well-formed input outside the accepted range.
    InvalidInput = 4,
    /// The model or probe did not reach a usable result.
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeVerdict {
    Pass = 0,
    Fail = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeReportFormat {
    Json = 0,
    Csv = 1,
    Svg = 2,
}

/// Scalar metrics of a report. Q in MVAR, reactance in H.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SeMetrics {
    pub rmse: f64,
    pub nrmse: f64,
    pub pearson_r: f64,
    pub max_q_meas: f64,
    pub max_q_sim: f64,
    pub max_q_abs_diff: f64,
    pub max_q_rel_diff: f64,
    pub estimated_l: f64,
    pub probed_dqdv: f64,
    pub n_points: usize,
}

pub struct SeRecording(statcom_eval::records::Recording);

/// Calibration table plus gain/reactance fit.
pub struct SeCalibration(FitFile);

pub struct SeReport(EvaluationReport);

struct Error {
    status: SeStatus,
    message: String,
}

type Result<T> = std::result::Result<T, Error>;

fn err(status: SeStatus, message: impl Into<String>) -> Error {
    Error {
        status,
        message: message.into(),
    }
}

fn sim_status(e: &SimError) -> SeStatus {
    match e {
        SimError::InvalidParams(_) | SimError::InvalidStep(_) | SimError::StepTooLarge { .. } => {
            SeStatus::InvalidInput
        }
        _ => SeStatus::Numerical,
    }
}

fn tune_status(e: &GainTuneError) -> SeStatus {
    match e {
        GainTuneError::Sim(s) => sim_status(s),
        GainTuneError::NotSettled { .. }
        | GainTuneError::ZeroDeltaV
        | GainTuneError::NotThevenin
        | GainTuneError::IllConditioned(_) => SeStatus::Numerical,
        _ => SeStatus::InvalidInput,
    }
}

fn records_status(e: &RecordsError) -> SeStatus {
    match e {
        RecordsError::MalformedConfig { .. }
        | RecordsError::MalformedData { .. }
        | RecordsError::ChannelCountMismatch { .. }
        | RecordsError::SampleCountMismatch(_) => SeStatus::Parse,
        _ => SeStatus::InvalidInput,
    }
}

impl From<RecordsError> for Error {
    fn from(e: RecordsError) -> Self {
        err(records_status(&e), e.to_string())
    }
}

impl From<GainTuneError> for Error {
    fn from(e: GainTuneError) -> Self {
        err(tune_status(&e), e.to_string())
    }
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        let status = match &e {
            EvalError::Schema(_) => SeStatus::Parse,
            EvalError::Range(_) | EvalError::InvalidConfig(_) => SeStatus::InvalidInput,
            EvalError::Records(r) => records_status(r),
            EvalError::Sim(s) => sim_status(s),
            EvalError::Tune(t) => tune_status(t),
            _ => SeStatus::Numerical,
        };
        err(status, e.to_string())
    }
}

impl From<SynthError> for Error {
    fn from(e: SynthError) -> Self {
        let status = match &e {
            SynthError::Sim(s) => sim_status(s),
            SynthError::Records(r) => records_status(r),
            _ => SeStatus::InvalidInput,
        };
        err(status, e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        err(SeStatus::Parse, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<()>) -> SeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SeStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            SeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str> {
    if p.is_null() {
        return Err(err(SeStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| err(SeStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T> {
    p.as_ref()
        .ok_or_else(|| err(SeStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| err(SeStatus::NullPointer, format!("`{name}` is null")))
}

fn into_c_string(s: String) -> Result<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| err(SeStatus::Numerical, "output contains a nul byte"))
}

fn settings(doc: Option<&str>) -> Result<Settings> {
    let s: Settings = match doc {
        Some(d) => serde_json::from_str(d)?,
        None => Settings::default(),
    };
    s.validate()?;
    Ok(s)
}

/// Message of the last failed call on this thread, or null after a
/// successful one. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn se_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn se_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn se_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a cfg/dat text pair.
///
/// # Safety
/// `cfg` and `dat` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_recording_parse(
    cfg: *const c_char,
    dat: *const c_char,
    out_rec: *mut *mut SeRecording,
) -> SeStatus {
    guard(|| {
        let slot = out(out_rec, "out_rec")?;
        let rec = parse_comtrade(str_arg(cfg, "cfg")?, str_arg(dat, "dat")?)?;
        *slot = Box::into_raw(Box::new(SeRecording(rec)));
        Ok(())
    })
}

/// Renders a recording back to cfg/dat text.
///
/// # Safety
/// `rec` must be a live handle; `out_cfg` and `out_dat` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_recording_write(
    rec: *const SeRecording,
    out_cfg: *mut *mut c_char,
    out_dat: *mut *mut c_char,
) -> SeStatus {
    guard(|| {
        let rec = handle(rec, "rec")?;
        let (c_slot, d_slot) = (out(out_cfg, "out_cfg")?, out(out_dat, "out_dat")?);
        let (cfg, dat) = write_comtrade(&rec.0)?;
        let cfg = into_c_string(cfg)?;
        match into_c_string(dat) {
            Ok(dat) => {
                *c_slot = cfg;
                *d_slot = dat;
                Ok(())
            }
            Err(e) => {
                se_string_free(cfg);
                Err(e)
            }
        }
    })
}

/// # Safety
/// `rec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn se_recording_n_samples(rec: *const SeRecording) -> usize {
    rec.as_ref().map_or(0, |r| r.0.n_samples())
}

/// # Safety
/// `rec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn se_recording_n_channels(rec: *const SeRecording) -> usize {
    rec.as_ref().map_or(0, |r| r.0.channels().len())
}

/// Sample rate in Hz, or 0 for a null handle.
///
/// # Safety
/// `rec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn se_recording_sample_rate(rec: *const SeRecording) -> f64 {
    rec.as_ref().map_or(0.0, |r| r.0.sample_rate())
}

/// # Safety
/// `rec` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn se_recording_free(rec: *mut SeRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Synthesizes an event from an EventSpec JSON. With `ems_json` and `cal`
/// the currents come from the model evaluation would build; with both null
/// they come from the settings' model started at rest.
///
/// # Safety
/// String arguments must be nul-terminated or null where allowed; `cal`
/// must be a live handle or null; `out_rec` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_synth_event(
    spec_json: *const c_char,
    ems_json: *const c_char,
    cal: *const SeCalibration,
    settings_json: *const c_char,
    out_rec: *mut *mut SeRecording,
) -> SeStatus {
    guard(|| {
        let slot = out(out_rec, "out_rec")?;
        let spec: EventSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?)?;
        let s = settings(opt_str_arg(settings_json, "settings_json")?)?;
        let volts = gen_event(&spec)?;
        let rec = match (opt_str_arg(ems_json, "ems_json")?, cal.as_ref()) {
            (Some(ems), Some(cal)) => {
                let ems = load_ems_settings(ems)?;
                let mut model = prepare_model(
                    &ems,
                    &cal.0.fit,
                    &cal.0.table,
                    &s.eval,
                    1.0 / spec.sample_rate,
                )?;
                synth_currents(&volts, spec.v_base_kv, &mut model.simulator)?.0
            }
            (None, None) => synth_measured_q(&volts, &s.eval.model, spec.v_base_kv)?,
            _ => {
                return Err(err(
                    SeStatus::InvalidInput,
                    "`ems_json` and `cal` must both be given or both be null",
                ))
            }
        };
        *slot = Box::into_raw(Box::new(SeRecording(rec)));
        Ok(())
    })
}

/// The reference three-point vendor table with its quadratic fit.
///
/// # Safety
/// `out_cal` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_calibration_reference(out_cal: *mut *mut SeCalibration) -> SeStatus {
    guard(|| {
        let slot = out(out_cal, "out_cal")?;
        let table = CalibrationTable::reference();
        let fit = fit_gain_reactance(&table, 2)?;
        *slot = Box::into_raw(Box::new(SeCalibration(FitFile { table, fit })));
        Ok(())
    })
}

/// Probes each inductance (H) and fits gain against reactance.
///
/// # Safety
/// `l_values` must point to `n` doubles; `settings_json` must be
/// nul-terminated or null; `out_cal` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_calibration_run(
    l_values: *const f64,
    n: usize,
    degree: usize,
    settings_json: *const c_char,
    out_cal: *mut *mut SeCalibration,
) -> SeStatus {
    guard(|| {
        let slot = out(out_cal, "out_cal")?;
        if l_values.is_null() && n > 0 {
            return Err(err(SeStatus::NullPointer, "`l_values` is null"));
        }
        let ls = if n == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(l_values, n)
        };
        let s = settings(opt_str_arg(settings_json, "settings_json")?)?;
        let table = calibrate(
            ls,
            &s.eval.model,
            &s.eval.probe,
            &s.vendor_table(),
            s.v_base_kv,
            s.f0,
        )?;
        let fit = fit_gain_reactance(&table, degree)?;
        *slot = Box::into_raw(Box::new(SeCalibration(FitFile { table, fit })));
        Ok(())
    })
}

/// Loads the `{table, fit}` document written by `statcom-eval calibrate`.
///
/// # Safety
/// `json` must be nul-terminated; `out_cal` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_calibration_from_json(
    json: *const c_char,
    out_cal: *mut *mut SeCalibration,
) -> SeStatus {
    guard(|| {
        let slot = out(out_cal, "out_cal")?;
        let f: FitFile = serde_json::from_str(str_arg(json, "json")?)?;
        *slot = Box::into_raw(Box::new(SeCalibration(f)));
        Ok(())
    })
}

/// # Safety
/// `cal` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_calibration_to_json(
    cal: *const SeCalibration,
    out_json: *mut *mut c_char,
) -> SeStatus {
    guard(|| {
        let cal = handle(cal, "cal")?;
        let slot = out(out_json, "out_json")?;
        *slot = into_c_string(serde_json::to_string_pretty(&cal.0)?)?;
        Ok(())
    })
}

/// Inverts the fit on the default bracket: EMS gain to source inductance, H.
///
/// # Safety
/// `cal` must be a live handle; `out_l` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_reactance_from_gain(
    cal: *const SeCalibration,
    gain: f64,
    out_l: *mut f64,
) -> SeStatus {
    guard(|| {
        let cal = handle(cal, "cal")?;
        let slot = out(out_l, "out_l")?;
        *slot = reactance_from_gain(gain, &cal.0.fit, DEFAULT_BRACKET)?;
        Ok(())
    })
}

/// Gain the calibration table schedules for a measured dQ/dV (GVAR/pu).
///
/// # Safety
/// `cal` must be a live handle; `out_gain` must be writable.
#[no_mangle]
pub unsafe extern "C" fn se_gain_from_dqdv(
    cal: *const SeCalibration,
    dqdv: f64,
    out_gain: *mut f64,
) -> SeStatus {
    guard(|| {
        let cal = handle(cal, "cal")?;
        let slot = out(out_gain, "out_gain")?;
        if !dqdv.is_finite() {
            return Err(err(SeStatus::InvalidInput, "dqdv must be finite"));
        }
        *slot = gain_from_dqdv(dqdv, &cal.0.table);
        Ok(())
    })
}

/// dQ/dV (GVAR/pu) measured by the probe against a Thevenin source of
/// inductance `l_henry`.
///
/// # Safety
/// `settings_json` must be nul-terminated or null; `out_dqdv` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn se_probe_dqdv(
    l_henry: f64,
    settings_json: *const c_char,
    out_dqdv: *mut f64,
) -> SeStatus {
    guard(|| {
        let slot = out(out_dqdv, "out_dqdv")?;
        if !(l_henry > 0.0 && l_henry.is_finite()) {
            return Err(err(
                SeStatus::InvalidInput,
                format!("inductance must be positive, got {l_henry}"),
            ));
        }
        let s = settings(opt_str_arg(settings_json, "settings_json")?)?;
        let grid = GridEquivalent::thevenin(l_henry, 1.0).with_base(s.v_base_kv, s.f0);
        *slot = probe_dqdv(&s.eval.model, &grid, &s.eval.probe)?;
        Ok(())
    })
}

/// Runs the full evaluation of `rec` under the EMS settings.
///
/// # Safety
/// `rec` and `cal` must be live handles; `ems_json` nul-terminated;
/// `settings_json` nul-terminated or null; `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn se_evaluate(
    rec: *const SeRecording,
    cal: *const SeCalibration,
    ems_json: *const c_char,
    settings_json: *const c_char,
    out_report: *mut *mut SeReport,
) -> SeStatus {
    guard(|| {
        let rec = handle(rec, "rec")?;
        let cal = handle(cal, "cal")?;
        let slot = out(out_report, "out_report")?;
        let ems = load_ems_settings(str_arg(ems_json, "ems_json")?)?;
        let s = settings(opt_str_arg(settings_json, "settings_json")?)?;
        let rep = evaluate(&rec.0, &ems, &cal.0.fit, &cal.0.table, &s.eval)?;
        *slot = Box::into_raw(Box::new(SeReport(rep)));
        Ok(())
    })
}

/// # Safety
/// `rep` must be a live handle; `out_verdict` writable.
#[no_mangle]
pub unsafe extern "C" fn se_report_verdict(
    rep: *const SeReport,
    out_verdict: *mut SeVerdict,
) -> SeStatus {
    guard(|| {
        let rep = handle(rep, "rep")?;
        *out(out_verdict, "out_verdict")? = match rep.0.verdict {
            Verdict::Pass => SeVerdict::Pass,
            Verdict::Fail => SeVerdict::Fail,
        };
        Ok(())
    })
}

/// # Safety
/// `rep` must be a live handle; `out_metrics` writable.
#[no_mangle]
pub unsafe extern "C" fn se_report_metrics(
    rep: *const SeReport,
    out_metrics: *mut SeMetrics,
) -> SeStatus {
    guard(|| {
        let r = &handle(rep, "rep")?.0;
        let m = &r.metrics;
        *out(out_metrics, "out_metrics")? = SeMetrics {
            rmse: m.rmse,
            nrmse: m.nrmse,
            pearson_r: m.pearson_r,
            max_q_meas: m.max_q_meas,
            max_q_sim: m.max_q_sim,
            max_q_abs_diff: m.max_q_abs_diff,
            max_q_rel_diff: m.max_q_rel_diff,
            estimated_l: r.estimated_l,
            probed_dqdv: r.probed_dqdv,
            n_points: r.t.len(),
        };
        Ok(())
    })
}

/// Copies up to `cap` aligned points into the caller's arrays; any of the
/// three may be null. Writes the number of available points to `out_len`.
///
/// # Safety
/// Non-null arrays must hold `cap` doubles; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn se_report_series(
    rep: *const SeReport,
    t: *mut f64,
    q_meas: *mut f64,
    q_sim: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> SeStatus {
    guard(|| {
        let r = &handle(rep, "rep")?.0;
        let len = out(out_len, "out_len")?;
        *len = r.t.len();
        let n = cap.min(r.t.len());
        for (dst, src) in [(t, &r.t), (q_meas, &r.q_meas), (q_sim, &r.q_sim)] {
            if !dst.is_null() && n > 0 {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, n);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `rep` must be a live handle; `out_doc` writable.
#[no_mangle]
pub unsafe extern "C" fn se_report_render(
    rep: *const SeReport,
    format: SeReportFormat,
    out_doc: *mut *mut c_char,
) -> SeStatus {
    guard(|| {
        let rep = handle(rep, "rep")?;
        let slot = out(out_doc, "out_doc")?;
        let fmt = match format {
            SeReportFormat::Json => ReportFormat::Json,
            SeReportFormat::Csv => ReportFormat::Csv,
            SeReportFormat::Svg => ReportFormat::Svg,
        };
        *slot = into_c_string(render_report(&rep.0, fmt))?;
        Ok(())
    })
}

/// # Safety
/// `rep` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn se_report_free(rep: *mut SeReport) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}

/// # Safety
/// `cal` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn se_calibration_free(cal: *mut SeCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

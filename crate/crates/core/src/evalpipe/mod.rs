//! End-to-end evaluation: estimate the pre-event grid from the EMS gain,
//! let the model auto-tune against it during a steady prelude, replay the
//! recorded voltage into the tuned model and score simulated against
//! measured reactive power.

mod metrics;
mod report;

pub use metrics::{compare_series, resample_linear, SeriesMetrics};
pub use report::{render_report, EvaluationReport, ReportFormat, Verdict};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaintune::{
    reactance_from_gain, AutoGainHook, CalibrationTable, GainTuneError, PolyFit, ProbeConfig,
    DEFAULT_BRACKET,
};
use crate::records::{
    compute_q, extract_phasors, Orientation, PhasorSeries, Recording, RecordsError, Unit,
};
use crate::simcore::{
    GainEvent, GainHook, GridEquivalent, PlaybackSignal, SimError, Simulator, StatcomParams,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("EMS settings: {0}")]
    Schema(String),
    #[error("EMS settings out of range: {0}")]
    Range(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Tune(#[from] GainTuneError),
    #[error("prelude did not reach a settled operating point: {0}")]
    PreludeUnstable(String),
    #[error("series lengths differ: measured {meas}, simulated {sim}")]
    LengthMismatch { meas: usize, sim: usize },
    #[error("series are empty")]
    EmptySeries,
}

impl From<SimError> for EvalError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Hook { t, source } => {
                EvalError::PreludeUnstable(format!("auto gain at t = {t} s: {source}"))
            }
            other => EvalError::Sim(other),
        }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Operator settings exported from the energy management system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmsSettings {
    #[serde(default = "one")]
    pub v_ref: f64,
    #[serde(default)]
    pub q_ref: f64,
    #[serde(default = "default_slope")]
    pub slope: f64,
    /// Gain in force before the event; drives the reactance estimate.
    pub gain: f64,
    #[serde(default = "default_q_nominal")]
    pub q_nominal: f64,
    #[serde(default = "default_v_base")]
    pub v_base_kv: f64,
    #[serde(default = "default_f0")]
    pub f0: f64,
}

fn one() -> f64 {
    1.0
}
fn default_slope() -> f64 {
    0.01
}
fn default_q_nominal() -> f64 {
    125.0
}
fn default_v_base() -> f64 {
    230.0
}
fn default_f0() -> f64 {
    60.0
}

impl EmsSettings {
    pub fn with_gain(gain: f64) -> Self {
        Self {
            v_ref: 1.0,
            q_ref: 0.0,
            slope: 0.01,
            gain,
            q_nominal: 125.0,
            v_base_kv: 230.0,
            f0: 60.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v_ref", self.v_ref),
            ("q_ref", self.q_ref),
            ("slope", self.slope),
            ("gain", self.gain),
            ("q_nominal", self.q_nominal),
            ("v_base_kv", self.v_base_kv),
            ("f0", self.f0),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(EvalError::Range(format!("{name} must be finite, got {v}")));
        }
        for (name, v) in [
            ("slope", self.slope),
            ("gain", self.gain),
            ("q_nominal", self.q_nominal),
            ("v_base_kv", self.v_base_kv),
            ("f0", self.f0),
        ] {
            if v <= 0.0 {
                return Err(EvalError::Range(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.9..=1.1).contains(&self.v_ref) {
            return Err(EvalError::Range(format!(
                "v_ref must lie in [0.9, 1.1] pu, got {}",
                self.v_ref
            )));
        }
        if self.q_ref.abs() > self.q_nominal {
            return Err(EvalError::Range(format!(
                "|q_ref| must not exceed q_nominal, got {}",
                self.q_ref
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("settings serialize")
    }
}

pub fn load_ems_settings(doc: &str) -> Result<EmsSettings> {
    let s: EmsSettings = serde_json::from_str(doc).map_err(|e| EvalError::Schema(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub prelude_s: f64,
    /// Prelude time at which automatic gain adjustment runs.
    pub auto_gain_at_s: f64,
    pub nrmse_max: f64,
    pub maxq_rel_max: f64,
    pub orientation: Orientation,
    pub voltage_channels: Option<[String; 3]>,
    pub current_channels: Option<[String; 3]>,
    /// Controller template; EMS values overwrite the setpoint fields and
    /// `gain` is the start-up value before adjustment.
    pub model: StatcomParams,
    pub probe: ProbeConfig,
    /// Multiplies the adjusted gain; sensitivity studies only.
    pub gain_scale: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            prelude_s: 10.0,
            auto_gain_at_s: 1.0,
            nrmse_max: 0.05,
            maxq_rel_max: 0.05,
            orientation: Orientation::OutOfDevice,
            voltage_channels: None,
            current_channels: None,
            model: StatcomParams::default(),
            probe: ProbeConfig::default(),
            gain_scale: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        if !(self.nrmse_max > 0.0 && self.maxq_rel_max > 0.0) {
            return bad("thresholds must be positive".into());
        }
        if !(self.gain_scale > 0.0 && self.gain_scale.is_finite()) {
            return bad(format!(
                "gain_scale must be positive, got {}",
                self.gain_scale
            ));
        }
        if !(self.auto_gain_at_s >= 0.0) {
            return bad("auto_gain_at_s must be non-negative".into());
        }
        let needed = self.auto_gain_at_s + self.probe.settle_s + self.probe.hold_s;
        if !(self.prelude_s >= needed && self.prelude_s.is_finite()) {
            return bad(format!(
                "prelude of {} s is shorter than the auto-gain schedule ({needed} s)",
                self.prelude_s
            ));
        }
        Ok(())
    }
}

/// Model state after the prelude, ready for playback.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub simulator: Simulator,
    pub estimated_l: f64,
    pub probed_dqdv: f64,
    pub gain_trace: Vec<GainEvent>,
}

impl PreparedModel {
    pub fn params(&self) -> &StatcomParams {
        self.simulator.params()
    }
}

pub fn model_params(ems: &EmsSettings, template: &StatcomParams) -> StatcomParams {
    StatcomParams {
        v_ref: ems.v_ref,
        q_ref: ems.q_ref,
        slope: ems.slope,
        q_nominal: ems.q_nominal,
        q_max: template.q_max.min(1.2 * ems.q_nominal),
        ..template.clone()
    }
}

/// Steps 1 to 3 of the workflow: reactance estimate, model build and the
/// nominal-voltage Thevenin prelude with automatic gain adjustment.
pub fn prepare_model(
    ems: &EmsSettings,
    fit: &PolyFit,
    table: &CalibrationTable,
    cfg: &EvalConfig,
    dt: f64,
) -> Result<PreparedModel> {
    ems.validate()?;
    cfg.validate()?;
    let estimated_l = reactance_from_gain(ems.gain, fit, DEFAULT_BRACKET)?;
    let params = model_params(ems, &cfg.model);
    let grid = GridEquivalent::thevenin(estimated_l, 1.0).with_base(ems.v_base_kv, ems.f0);
    let mut simulator = Simulator::new(params, grid, dt)?;
    let mut hook = AutoGainHook::new(cfg.auto_gain_at_s, table.clone(), cfg.probe.clone());
    hook.scale = cfg.gain_scale;
    let trace = {
        let hooks: &mut [&mut dyn GainHook] = &mut [&mut hook];
        simulator.run(cfg.prelude_s, None, hooks)?
    };
    let probed_dqdv = hook
        .last_dqdv
        .ok_or_else(|| EvalError::PreludeUnstable("auto gain never ran".into()))?;
    log::info!(
        "prelude: L = {estimated_l:.5} H, dQ/dV = {probed_dqdv:.4}, gain {:.4}",
        simulator.params().gain
    );
    Ok(PreparedModel {
        simulator,
        estimated_l,
        probed_dqdv,
        gain_trace: trace.gain_events,
    })
}

fn channel_triplet<'a>(
    rec: &'a Recording,
    over: &'a Option<[String; 3]>,
    unit: Unit,
) -> Result<[&'a str; 3]> {
    match over {
        Some([a, b, c]) => {
            for n in [a, b, c] {
                rec.channel(n)?;
            }
            Ok([a.as_str(), b.as_str(), c.as_str()])
        }
        None => rec
            .phase_channels(unit)
            .ok_or(EvalError::Records(RecordsError::MissingPhaseChannels)),
    }
}

/// Positive-sequence voltage and current phasors of a recording.
pub fn sequence_phasors(
    rec: &Recording,
    cfg: &EvalConfig,
    f0: f64,
) -> Result<(PhasorSeries, PhasorSeries)> {
    let v = channel_triplet(rec, &cfg.voltage_channels, Unit::KiloVolt)?;
    let i = channel_triplet(rec, &cfg.current_channels, Unit::KiloAmp)?;
    let vs = extract_phasors(rec, v, f0)?;
    let is = extract_phasors(rec, i, f0)?;
    if vs.is_empty() {
        return Err(EvalError::Records(RecordsError::Invalid(
            "recording is shorter than one fundamental cycle".into(),
        )));
    }
    Ok((vs, is))
}

pub fn evaluate(
    rec: &Recording,
    ems: &EmsSettings,
    fit: &PolyFit,
    table: &CalibrationTable,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    let (vs, is) = sequence_phasors(rec, cfg, ems.f0)?;
    let dt = 1.0 / rec.sample_rate();
    let mut model = prepare_model(ems, fit, table, cfg, dt)?;

    let playback = PlaybackSignal::from_phasors(&vs, ems.v_base_kv);
    model
        .simulator
        .set_grid(GridEquivalent::playback().with_base(ems.v_base_kv, ems.f0))?;
    let trace = model
        .simulator
        .run(playback.values.len() as f64 * dt, Some(&playback), &mut [])?;

    let v1 = vs.positive_sequence();
    let i1 = is.positive_sequence();
    let q_meas: Vec<f64> = v1
        .iter()
        .zip(&i1)
        .map(|(v, i)| compute_q(*v, *i, cfg.orientation))
        .collect();
    let q_sim = trace.q_act;
    let metrics = compare_series(&q_meas, &q_sim)?;
    let verdict = if metrics.nrmse <= cfg.nrmse_max && metrics.max_q_rel_diff <= cfg.maxq_rel_max {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(EvaluationReport {
        station_id: rec.station_id().to_string(),
        metrics,
        estimated_l: model.estimated_l,
        probed_dqdv: model.probed_dqdv,
        gain_trace: model.gain_trace,
        nrmse_max: cfg.nrmse_max,
        maxq_rel_max: cfg.maxq_rel_max,
        verdict,
        t: vs.times,
        q_meas,
        q_sim,
    })
}

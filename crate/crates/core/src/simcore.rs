//! Fixed-step average-value STATCOM simulation.
//!
//! The device is modelled at fundamental frequency on the positive sequence:
//! a filtered voltage measurement feeds an integral voltage regulator with
//! the droop term folded into its error, the regulator output passes through
//! a first-order converter lag, and a slow Q-control loop shifts the voltage
//! reference back toward the reactive-power setpoint. The grid is either a
//! quasi-static Thevenin equivalent or a played-back recorded voltage.

use std::error::Error as StdError;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::PhasorSeries;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("time step {dt} s exceeds the stable limit {max} s")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("playback grid requires a recorded voltage sample")]
    MissingPlaybackSample,
    #[error("gain hook at t = {t} s failed: {source}")]
    Hook {
        t: f64,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

/// Controller settings. Voltages in pu, reactive power in MVAR, times in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatcomParams {
    pub v_ref: f64,
    pub q_ref: f64,
    /// Droop: pu voltage per unit of `q_nominal`.
    pub slope: f64,
    pub gain: f64,
    pub q_nominal: f64,
    pub q_max: f64,
    /// Integrator base time of the voltage regulator.
    pub t_resp: f64,
    /// Converter first-order lag.
    pub tau_conv: f64,
    /// Voltage measurement filter; zero feeds the regulator directly.
    pub tau_meas: f64,
    /// Q-control integrator base time.
    pub t_qcm: f64,
    pub qcm_enabled: bool,
}

impl Default for StatcomParams {
    fn default() -> Self {
        Self {
            v_ref: 1.0,
            q_ref: 0.0,
            slope: 0.01,
            gain: 12.75,
            q_nominal: 125.0,
            q_max: 125.0,
            t_resp: 0.01,
            tau_conv: 0.010,
            tau_meas: 0.0075,
            t_qcm: 30.0,
            qcm_enabled: true,
        }
    }
}

impl StatcomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::InvalidParams(msg));
        let finite = [
            self.v_ref,
            self.q_ref,
            self.slope,
            self.gain,
            self.q_nominal,
            self.q_max,
            self.t_resp,
            self.tau_conv,
            self.tau_meas,
            self.t_qcm,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if self.slope <= 0.0 {
            return bad(format!("slope must be positive, got {}", self.slope));
        }
        if self.q_nominal <= 0.0 {
            return bad(format!(
                "q_nominal must be positive, got {}",
                self.q_nominal
            ));
        }
        if self.q_max < 0.0 || self.q_max > 1.2 * self.q_nominal {
            return bad(format!(
                "q_max must lie in [0, 1.2 * q_nominal], got {}",
                self.q_max
            ));
        }
        if self.gain <= 0.0 {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        if self.t_resp <= 0.0 || self.tau_conv <= 0.0 || self.t_qcm <= 0.0 || self.tau_meas < 0.0 {
            return bad("time constants must be positive".into());
        }
        Ok(())
    }

    /// Largest step `controller_step` accepts.
    pub fn max_step(&self) -> f64 {
        if self.tau_meas > 0.0 {
            self.tau_conv.min(self.tau_meas) / 2.0
        } else {
            self.tau_conv / 2.0
        }
    }
}

/// Dynamic state of the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatcomState {
    /// Regulator (integrator) output, MVAR.
    pub q_cmd: f64,
    /// Converter output after the lag, MVAR.
    pub q_act: f64,
    /// Reference voltage after the Q-control shift, pu.
    pub v_ref_adj: f64,
    /// Filtered voltage measurement, pu.
    pub v_filt: f64,
    pub t: f64,
}

impl StatcomState {
    /// Zero output, unshifted reference, measurement settled at `v0`.
    pub fn at_rest(p: &StatcomParams, v0: f64) -> Self {
        Self {
            q_cmd: 0.0,
            q_act: 0.0,
            v_ref_adj: p.v_ref,
            v_filt: v0,
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    Thevenin,
    Playback,
}

/// External system seen from the point of interconnection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEquivalent {
    pub mode: GridMode,
    pub r_ohm: f64,
    pub l_henry: f64,
    /// Thevenin source voltage, pu.
    pub v_src: f64,
    /// Line-to-line RMS base, kV.
    pub v_base_kv: f64,
    pub f0: f64,
}

impl GridEquivalent {
    pub fn thevenin(l_henry: f64, v_src: f64) -> Self {
        Self {
            mode: GridMode::Thevenin,
            r_ohm: 0.1,
            l_henry,
            v_src,
            v_base_kv: 230.0,
            f0: 60.0,
        }
    }

    /// Infinite bus driven by recorded voltage; reactance is bypassed.
    pub fn playback() -> Self {
        Self {
            mode: GridMode::Playback,
            r_ohm: 0.0,
            l_henry: 0.0,
            v_src: 1.0,
            v_base_kv: 230.0,
            f0: 60.0,
        }
    }

    pub fn with_base(mut self, v_base_kv: f64, f0: f64) -> Self {
        self.v_base_kv = v_base_kv;
        self.f0 = f0;
        self
    }

    pub fn reactance_ohm(&self) -> f64 {
        2.0 * PI * self.f0 * self.l_henry
    }

    /// Short-circuit capacity in MVA, `V_LL^2 / X`.
    pub fn s_scc(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.reactance_ohm()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_base_kv > 0.0 && self.f0 > 0.0) {
            return Err(SimError::InvalidParams(
                "grid base voltage and frequency must be positive".into(),
            ));
        }
        if self.mode == GridMode::Thevenin {
            if !(self.l_henry > 0.0 && self.l_henry.is_finite()) {
                return Err(SimError::InvalidParams(format!(
                    "Thevenin inductance must be positive, got {}",
                    self.l_henry
                )));
            }
            if !(self.v_src.is_finite() && self.r_ohm >= 0.0) {
                return Err(SimError::InvalidParams("bad Thevenin source".into()));
            }
            if self.r_ohm > 0.1 * self.reactance_ohm() {
                log::warn!(
                    "grid resistance {} ohm exceeds 10% of reactance {:.3} ohm; it is ignored",
                    self.r_ohm,
                    self.reactance_ohm()
                );
            }
        }
        Ok(())
    }
}

/// Voltage target of the droop characteristic at output `q_act`.
pub fn droop_target(p: &StatcomParams, v_ref_adj: f64, q_act: f64) -> f64 {
    v_ref_adj - p.slope * q_act / p.q_nominal
}

fn check_step(p: &StatcomParams, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidStep(dt));
    }
    let max = p.max_step();
    if dt > max {
        return Err(SimError::StepTooLarge { dt, max });
    }
    Ok(())
}

/// One step of the voltage regulator and converter.
pub fn controller_step(
    s: StatcomState,
    p: &StatcomParams,
    v_meas: f64,
    dt: f64,
) -> Result<StatcomState> {
    check_step(p, dt)?;
    let v_filt = if p.tau_meas > 0.0 {
        s.v_filt + (v_meas - s.v_filt) * dt / p.tau_meas
    } else {
        v_meas
    };
    let e = droop_target(p, s.v_ref_adj, s.q_act) - v_filt;
    let dq = p.gain * e * p.q_nominal * dt / p.t_resp;
    // Conditional integration: never wind further into a limit.
    let into_limit = (s.q_cmd >= p.q_max && dq > 0.0) || (s.q_cmd <= -p.q_max && dq < 0.0);
    let q_cmd = if into_limit {
        s.q_cmd.clamp(-p.q_max, p.q_max)
    } else {
        (s.q_cmd + dq).clamp(-p.q_max, p.q_max)
    };
    let q_act = s.q_act + (q_cmd - s.q_act) * dt / p.tau_conv;
    Ok(StatcomState {
        q_cmd,
        q_act,
        v_filt,
        t: s.t + dt,
        ..s
    })
}

/// Converter lag only, regulator frozen. Used for open-loop probing.
pub fn converter_step(s: StatcomState, p: &StatcomParams, dt: f64) -> StatcomState {
    StatcomState {
        q_act: s.q_act + (s.q_cmd - s.q_act) * dt / p.tau_conv,
        t: s.t + dt,
        ..s
    }
}

/// Slow Q-control: shifts the reference so output drifts back to `q_ref`.
pub fn qcm_step(s: StatcomState, p: &StatcomParams, dt: f64) -> StatcomState {
    let shift = (p.q_ref - s.q_act) / p.q_nominal * p.slope * dt / p.t_qcm;
    StatcomState {
        v_ref_adj: (s.v_ref_adj + shift).clamp(0.9, 1.1),
        ..s
    }
}

/// Bus voltage in pu. Thevenin mode is the quasi-static linearisation
/// `v_src + q_act / SCC`; playback returns the recorded sample untouched.
pub fn grid_voltage(g: &GridEquivalent, q_act: f64, playback_v: Option<f64>) -> Result<f64> {
    match g.mode {
        GridMode::Thevenin => Ok(g.v_src + q_act / g.s_scc()),
        GridMode::Playback => playback_v.ok_or(SimError::MissingPlaybackSample),
    }
}

/// Uniformly sampled positive-sequence voltage magnitude in pu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackSignal {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl PlaybackSignal {
    pub fn new(dt: f64, values: Vec<f64>) -> Self {
        Self { dt, values }
    }

    pub fn from_phasors(series: &PhasorSeries, v_base_kv: f64) -> Self {
        let base = v_base_kv / 3f64.sqrt();
        Self {
            dt: series.dt(),
            values: series
                .positive_sequence()
                .iter()
                .map(|p| p.magnitude / base)
                .collect(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 * self.dt
    }

    /// Value at `t` seconds after the first sample; exact on sample instants,
    /// linear in between, held at the ends.
    pub fn sample(&self, t: f64) -> Option<f64> {
        let last = self.values.len().checked_sub(1)?;
        let f = t / self.dt;
        let k = f.round();
        if (f - k).abs() < 1e-6 {
            return Some(self.values[(k.max(0.0) as usize).min(last)]);
        }
        if f <= 0.0 {
            return Some(self.values[0]);
        }
        let i = f.floor() as usize;
        if i >= last {
            return Some(self.values[last]);
        }
        let w = f - i as f64;
        Some(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEvent {
    pub t: f64,
    pub old_gain: f64,
    pub new_gain: f64,
}

/// Something that may retune the controller gain at a scheduled time.
pub trait GainHook {
    /// Simulation time at which the hook fires.
    fn at(&self) -> f64;

    fn adjust(
        &mut self,
        params: &StatcomParams,
        grid: &GridEquivalent,
        state: &StatcomState,
    ) -> std::result::Result<f64, Box<dyn StdError + Send + Sync>>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub v_meas: Vec<f64>,
    pub q_act: Vec<f64>,
    pub q_cmd: Vec<f64>,
    pub gain_events: Vec<GainEvent>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v_meas,q_act,q_cmd\n");
        for k in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.times[k], self.v_meas[k], self.q_act[k], self.q_cmd[k]
            );
        }
        out
    }
}

/// Stateful fixed-step simulator. Successive `run` calls continue from the
/// previous state, so a Thevenin prelude can be followed by playback.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: StatcomParams,
    grid: GridEquivalent,
    dt: f64,
    state: StatcomState,
}

impl Simulator {
    pub fn new(params: StatcomParams, grid: GridEquivalent, dt: f64) -> Result<Self> {
        let v0 = match grid.mode {
            GridMode::Thevenin => grid.v_src,
            GridMode::Playback => 1.0,
        };
        let state = StatcomState::at_rest(&params, v0);
        Self::with_state(params, grid, dt, state)
    }

    pub fn with_state(
        params: StatcomParams,
        grid: GridEquivalent,
        dt: f64,
        state: StatcomState,
    ) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        check_step(&params, dt)?;
        Ok(Self {
            params,
            grid,
            dt,
            state,
        })
    }

    pub fn params(&self) -> &StatcomParams {
        &self.params
    }

    pub fn grid(&self) -> &GridEquivalent {
        &self.grid
    }

    pub fn state(&self) -> &StatcomState {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn set_grid(&mut self, grid: GridEquivalent) -> Result<()> {
        grid.validate()?;
        self.grid = grid;
        Ok(())
    }

    pub fn set_gain(&mut self, gain: f64) -> Result<()> {
        let params = StatcomParams {
            gain,
            ..self.params.clone()
        };
        params.validate()?;
        self.params = params;
        Ok(())
    }

    /// Advances `round(duration / dt)` steps. Each step evaluates the grid,
    /// fires due hooks, then runs the regulator and Q control. Trace entry k
    /// holds the state after step k together with the voltage it saw.
    pub fn run(
        &mut self,
        duration: f64,
        playback: Option<&PlaybackSignal>,
        hooks: &mut [&mut dyn GainHook],
    ) -> Result<SimTrace> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(SimError::InvalidParams(format!(
                "duration must be non-negative, got {duration}"
            )));
        }
        if self.grid.mode == GridMode::Playback && playback.is_none() {
            return Err(SimError::MissingPlaybackSample);
        }
        if let Some(pb) = playback {
            if pb.values.is_empty() {
                return Err(SimError::MissingPlaybackSample);
            }
            if self.grid.mode == GridMode::Playback && pb.duration_s() + 1e-9 < duration {
                log::warn!(
                    "playback covers {:.4} s of a {:.4} s run; holding the last sample",
                    pb.duration_s(),
                    duration
                );
            }
        }

        let steps = (duration / self.dt).round() as usize;
        let mut trace = SimTrace {
            times: Vec::with_capacity(steps),
            v_meas: Vec::with_capacity(steps),
            q_act: Vec::with_capacity(steps),
            q_cmd: Vec::with_capacity(steps),
            gain_events: Vec::new(),
        };
        let mut fired = vec![false; hooks.len()];
        let t0 = self.state.t;

        for k in 0..steps {
            let t = t0 + k as f64 * self.dt;
            let pb = match self.grid.mode {
                GridMode::Playback => playback.and_then(|p| p.sample(k as f64 * self.dt)),
                GridMode::Thevenin => None,
            };
            let v = grid_voltage(&self.grid, self.state.q_act, pb)?;

            for (hook, done) in hooks.iter_mut().zip(fired.iter_mut()) {
                if !*done && hook.at() <= t + 0.5 * self.dt {
                    *done = true;
                    let new_gain = hook
                        .adjust(&self.params, &self.grid, &self.state)
                        .map_err(|source| SimError::Hook { t, source })?;
                    trace.gain_events.push(GainEvent {
                        t,
                        old_gain: self.params.gain,
                        new_gain,
                    });
                    self.set_gain(new_gain)?;
                }
            }

            let mut next = controller_step(self.state, &self.params, v, self.dt)?;
            if self.params.qcm_enabled {
                next = qcm_step(next, &self.params, self.dt);
            }
            next.t = t0 + (k + 1) as f64 * self.dt;
            self.state = next;

            trace.times.push(next.t);
            trace.v_meas.push(v);
            trace.q_act.push(next.q_act);
            trace.q_cmd.push(next.q_cmd);
        }
        Ok(trace)
    }
}

/// Runs a fresh simulation from rest. In playback mode the measurement
/// starts settled at the first recorded sample.
pub fn simulate(
    p: &StatcomParams,
    g: &GridEquivalent,
    duration: f64,
    dt: f64,
    playback: Option<&PlaybackSignal>,
    hooks: &mut [&mut dyn GainHook],
) -> Result<SimTrace> {
    let v0 = match g.mode {
        GridMode::Thevenin => g.v_src,
        GridMode::Playback => playback
            .and_then(|pb| pb.values.first().copied())
            .ok_or(SimError::MissingPlaybackSample)?,
    };
    let state = StatcomState::at_rest(p, v0);
    Simulator::with_state(p.clone(), g.clone(), dt, state)?.run(duration, playback, hooks)
}

/// Analytic settled output of the droop characteristic against a Thevenin
/// source, limited to the device rating.
pub fn droop_equilibrium(p: &StatcomParams, g: &GridEquivalent) -> f64 {
    let q = (p.v_ref - g.v_src) / (p.slope / p.q_nominal + 1.0 / g.s_scc());
    q.clamp(-p.q_max, p.q_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    const DT: f64 = 1.0 / 9600.0;

    #[test]
    fn droop_examples() {
        let p = StatcomParams::default();
        assert_eq!(droop_target(&p, 1.0, 0.0), 1.0);
        assert_relative_eq!(droop_target(&p, 1.0, 125.0), 0.99, epsilon = 1e-12);
        assert_relative_eq!(droop_target(&p, 1.0, -125.0), 1.01, epsilon = 1e-12);
    }

    #[test]
    fn zero_error_leaves_state_alone() {
        let p = StatcomParams::default();
        let mut s = StatcomState::at_rest(&p, 0.0);
        s.q_cmd = 40.0;
        s.q_act = 40.0;
        let v = droop_target(&p, s.v_ref_adj, s.q_act);
        s.v_filt = v;
        let n = controller_step(s, &p, v, DT).unwrap();
        assert_eq!(n.q_cmd, s.q_cmd);
        assert_eq!(n.q_act, s.q_act);
        assert_eq!(n.v_ref_adj, s.v_ref_adj);
        assert_eq!(n.v_filt, s.v_filt);
        assert_eq!(n.t, DT);
    }

    #[test]
    fn large_error_saturates_and_holds() {
        let p = StatcomParams::default();
        let mut s = StatcomState::at_rest(&p, 0.5);
        for _ in 0..20_000 {
            s = controller_step(s, &p, 0.5, DT).unwrap();
            assert!(s.q_cmd.abs() <= p.q_max);
            assert!(s.q_act.abs() <= p.q_max + 1e-9);
        }
        assert_eq!(s.q_cmd, p.q_max);
        assert!((s.q_act - p.q_max).abs() < 1e-6);
        // Error reverses: leaves the limit once the filtered measurement
        // crosses the target, no wound-up excess to discharge first.
        let mut back = s;
        for _ in 0..(p.tau_meas / DT) as usize {
            back = controller_step(back, &p, 1.5, DT).unwrap();
        }
        assert!(back.q_cmd < p.q_max);
    }

    #[test]
    fn rejects_bad_steps() {
        let p = StatcomParams::default();
        let s = StatcomState::at_rest(&p, 1.0);
        assert!(matches!(
            controller_step(s, &p, 1.0, 0.01),
            Err(SimError::StepTooLarge { .. })
        ));
        assert!(matches!(
            controller_step(s, &p, 1.0, 0.0),
            Err(SimError::InvalidStep(_))
        ));
    }

    /// Closed-form solution of the linear pair
    /// q_c' = a (d - b q_a), q_a' = (q_c - q_a) / tau from rest.
    fn linear_pair(a: f64, b: f64, d: f64, tau: f64, t: f64) -> (f64, f64) {
        let eq = d / b;
        // x = [q_c, q_a] - eq; x' = M x with M = [[0, -ab], [1/tau, -1/tau]].
        let tr = -1.0 / tau;
        let det = a * b / tau;
        let disc = Complex64::new(tr * tr - 4.0 * det, 0.0).sqrt();
        let l1 = (Complex64::new(tr, 0.0) + disc) / 2.0;
        let l2 = (Complex64::new(tr, 0.0) - disc) / 2.0;
        // Second row of M gives eigenvectors v_i = [tau*l_i + 1, 1].
        let v1 = [l1 * tau + 1.0, Complex64::new(1.0, 0.0)];
        let v2 = [l2 * tau + 1.0, Complex64::new(1.0, 0.0)];
        let x0 = [Complex64::new(-eq, 0.0), Complex64::new(-eq, 0.0)];
        let detv = v1[0] * v2[1] - v2[0] * v1[1];
        let c1 = (x0[0] * v2[1] - v2[0] * x0[1]) / detv;
        let c2 = (v1[0] * x0[1] - x0[0] * v1[1]) / detv;
        let e1 = (l1 * t).exp() * c1;
        let e2 = (l2 * t).exp() * c2;
        (
            (e1 * v1[0] + e2 * v2[0]).re + eq,
            (e1 * v1[1] + e2 * v2[1]).re + eq,
        )
    }

    #[test]
    fn linear_region_matches_closed_form() {
        let p = StatcomParams {
            tau_meas: 0.0,
            ..StatcomParams::default()
        };
        let v_meas = 0.998;
        let mut s = StatcomState::at_rest(&p, v_meas);
        for _ in 0..100 {
            s = controller_step(s, &p, v_meas, DT).unwrap();
        }
        let a = p.gain * p.q_nominal / p.t_resp;
        let b = p.slope / p.q_nominal;
        let (qc, qa) = linear_pair(a, b, p.v_ref - v_meas, p.tau_conv, 100.0 * DT);
        assert!(s.q_cmd.abs() < p.q_max);
        assert_relative_eq!(s.q_cmd, qc, max_relative = 5e-3);
        assert_relative_eq!(s.q_act, qa, max_relative = 2e-2);
    }

    #[test]
    fn qcm_moves_reference_toward_setpoint() {
        let p = StatcomParams::default();
        let mut s = StatcomState::at_rest(&p, 1.0);
        assert_eq!(qcm_step(s, &p, DT).v_ref_adj, s.v_ref_adj);
        s.q_act = 50.0;
        assert!(qcm_step(s, &p, DT).v_ref_adj < s.v_ref_adj);
        s.q_act = -50.0;
        assert!(qcm_step(s, &p, DT).v_ref_adj > s.v_ref_adj);
        s.v_ref_adj = 1.1;
        assert_eq!(qcm_step(s, &p, 1e6).v_ref_adj, 1.1);
    }

    /// Dormand-Prince 5(4) with step-size control; test-only oracle.
    fn rk45<const N: usize>(
        f: impl Fn(&[f64; N]) -> [f64; N],
        mut y: [f64; N],
        t_end: f64,
        tol: f64,
        mut observe: impl FnMut(f64, &[f64; N]),
    ) {
        const C: [[f64; 6]; 6] = [
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [
                19372.0 / 6561.0,
                -25360.0 / 2187.0,
                64448.0 / 6561.0,
                -212.0 / 729.0,
                0.0,
                0.0,
            ],
            [
                9017.0 / 3168.0,
                -355.0 / 33.0,
                46732.0 / 5247.0,
                49.0 / 176.0,
                -5103.0 / 18656.0,
                0.0,
            ],
            [
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
            ],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let mut t = 0.0;
        let mut h: f64 = 1e-5;
        observe(t, &y);
        while t < t_end {
            h = h.min(t_end - t);
            let mut k = [[0.0; N]; 7];
            k[0] = f(&y);
            for s in 0..6 {
                let mut yi = y;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    for i in 0..N {
                        yi[i] += h * C[s][j] * kj[i];
                    }
                }
                k[s + 1] = f(&yi);
            }
            let mut y5 = y;
            for j in 0..6 {
                for i in 0..N {
                    y5[i] += h * C[5][j] * k[j][i];
                }
            }
            let mut err: f64 = 0.0;
            for i in 0..N {
                let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
                err = err.max(e.abs() / (tol * (1.0 + y5[i].abs())));
            }
            if err <= 1.0 {
                t += h;
                y = y5;
                observe(t, &y);
            }
            h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        }
    }

    #[test]
    fn qcm_closed_loop_matches_adaptive_oracle() {
        let p = StatcomParams {
            t_qcm: 2.0,
            ..StatcomParams::default()
        };
        let g = GridEquivalent::thevenin(0.01, 0.9985);
        let scc = g.s_scc();
        let horizon = 5.0 * p.t_qcm;
        let trace = simulate(&p, &g, horizon, DT, None, &mut []).unwrap();

        let mut samples = Vec::new();
        rk45(
            |y: &[f64; 4]| {
                let [q_c, q_a, v_f, v_r] = *y;
                let v = g.v_src + q_a / scc;
                let e = v_r - p.slope * q_a / p.q_nominal - v_f;
                [
                    p.gain * e * p.q_nominal / p.t_resp,
                    (q_c - q_a) / p.tau_conv,
                    (v - v_f) / p.tau_meas,
                    (p.q_ref - q_a) / p.q_nominal * p.slope / p.t_qcm,
                ]
            },
            [0.0, 0.0, g.v_src, p.v_ref],
            horizon,
            1e-10,
            |t, y| samples.push((t, y[1])),
        );
        let peak = trace.q_act.iter().fold(0.0f64, |m, q| m.max(q.abs()));
        for &(t, q_oracle) in samples.iter().filter(|(t, _)| *t > 0.5) {
            let k = ((t / DT).round() as usize).clamp(1, trace.len()) - 1;
            assert!(
                (trace.q_act[k] - q_oracle).abs() < 5e-3 * peak,
                "t={t}: sim {} oracle {q_oracle}",
                trace.q_act[k]
            );
        }
        // Effective constant t_qcm * (1 + q_nom / (slope * SCC)) predicts the
        // 1 MVAR band is reached inside five t_qcm for this offset.
        assert!(trace.q_act.last().unwrap().abs() < 1.0);
    }

    #[test]
    fn thevenin_and_playback_voltage() {
        let g = GridEquivalent::thevenin(0.02, 1.0);
        assert_eq!(grid_voltage(&g, 0.0, None).unwrap(), 1.0);
        assert!((g.s_scc() - 7016.08).abs() < 0.01);
        let dv = grid_voltage(&g, 50.0, None).unwrap() - 1.0;
        assert!((dv - 7.1266e-3).abs() < 1e-6);
        let pb = GridEquivalent::playback();
        assert_eq!(grid_voltage(&pb, 125.0, Some(0.8123)).unwrap(), 0.8123);
        assert_eq!(grid_voltage(&pb, -125.0, Some(0.8123)).unwrap(), 0.8123);
        assert!(matches!(
            grid_voltage(&pb, 0.0, None),
            Err(SimError::MissingPlaybackSample)
        ));
    }

    #[test]
    fn playback_at_setpoint_stays_at_zero() {
        let p = StatcomParams::default();
        let pb = PlaybackSignal::new(DT, vec![1.0; 9600]);
        let tr = simulate(&p, &GridEquivalent::playback(), 1.0, DT, Some(&pb), &mut []).unwrap();
        assert!(tr.q_act.iter().all(|q| q.abs() < 1.0));
        assert_eq!(tr.v_meas, pb.values);
    }

    #[test]
    fn thevenin_settles_on_droop_intersection() {
        let p = StatcomParams {
            qcm_enabled: false,
            ..StatcomParams::default()
        };
        let g = GridEquivalent::thevenin(0.02, 0.99);
        let tr = simulate(&p, &g, 2.0, DT, None, &mut []).unwrap();
        let expected = droop_equilibrium(&p, &g);
        // 0.01 / (0.01 / 125 + 1 / 7016.08)
        assert!((expected - 44.94).abs() < 0.01);
        assert_relative_eq!(*tr.q_act.last().unwrap(), expected, max_relative = 5e-3);

        let half = simulate(&p, &g, 2.0, DT / 2.0, None, &mut []).unwrap();
        let a = *tr.q_act.last().unwrap();
        let b = *half.q_act.last().unwrap();
        assert!((a - b).abs() / a.abs() < 1e-3);
    }

    #[test]
    fn dip_drives_capacitive_then_inductive() {
        let p = StatcomParams::default();
        let n = 9600;
        let values: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 * DT;
                if (0.2..0.35).contains(&t) {
                    0.8
                } else if t >= 0.35 {
                    1.0 + 0.02 * (-(t - 0.35) / 0.1).exp()
                } else {
                    1.0
                }
            })
            .collect();
        let pb = PlaybackSignal::new(DT, values);
        let tr = simulate(&p, &GridEquivalent::playback(), 1.0, DT, Some(&pb), &mut []).unwrap();
        let during = tr.q_act[(0.3 / DT) as usize];
        let after = tr.q_act[(0.45 / DT) as usize];
        assert!(during > 0.9 * p.q_max, "capacitive during dip: {during}");
        assert!(after < -10.0, "inductive on recovery: {after}");
        let again = simulate(&p, &GridEquivalent::playback(), 1.0, DT, Some(&pb), &mut []).unwrap();
        assert_eq!(tr, again);
    }

    struct FixedHook(f64, f64);
    impl GainHook for FixedHook {
        fn at(&self) -> f64 {
            self.0
        }
        fn adjust(
            &mut self,
            _: &StatcomParams,
            _: &GridEquivalent,
            _: &StatcomState,
        ) -> std::result::Result<f64, Box<dyn StdError + Send + Sync>> {
            Ok(self.1)
        }
    }

    #[test]
    fn hooks_fire_once_and_are_recorded() {
        let p = StatcomParams::default();
        let g = GridEquivalent::thevenin(0.02, 1.0);
        let mut hook = FixedHook(0.05, 14.57);
        let mut sim = Simulator::new(p, g, DT).unwrap();
        let tr = sim.run(0.1, None, &mut [&mut hook]).unwrap();
        assert_eq!(tr.gain_events.len(), 1);
        let ev = tr.gain_events[0];
        assert_eq!((ev.old_gain, ev.new_gain), (12.75, 14.57));
        assert!((ev.t - 0.05).abs() <= DT);
        assert_eq!(sim.params().gain, 14.57);
        assert_eq!(tr.len(), 960);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!(tr.to_csv().starts_with("t,v_meas,q_act,q_cmd\n"));
        assert_eq!(tr.to_csv().lines().count(), 961);
    }

    #[test]
    fn params_validation() {
        let ok = StatcomParams::default();
        assert!(ok.validate().is_ok());
        for bad in [
            StatcomParams {
                slope: 0.0,
                ..ok.clone()
            },
            StatcomParams {
                q_nominal: -1.0,
                ..ok.clone()
            },
            StatcomParams {
                q_max: 200.0,
                ..ok.clone()
            },
            StatcomParams {
                gain: 0.0,
                ..ok.clone()
            },
            StatcomParams {
                t_qcm: 0.0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(GridEquivalent::thevenin(0.0, 1.0).validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn output_never_exceeds_rating(levels in prop::collection::vec(0.5f64..1.5, 1..8)) {
                let p = StatcomParams::default();
                let mut values = Vec::new();
                for l in &levels {
                    values.extend(std::iter::repeat_n(*l, 600));
                }
                let pb = PlaybackSignal::new(DT, values);
                let tr = simulate(&p, &GridEquivalent::playback(), pb.duration_s(), DT, Some(&pb), &mut []).unwrap();
                let eps = p.q_max * DT / p.tau_conv;
                for k in 0..tr.len() {
                    prop_assert!(tr.q_cmd[k].abs() <= p.q_max);
                    prop_assert!(tr.q_act[k].abs() <= p.q_max + eps);
                }
                prop_assert_eq!(&tr.v_meas, &pb.values);
            }
        }
    }
}

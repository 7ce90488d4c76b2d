use std::error::Error as StdError;

use serde::{Deserialize, Serialize};

use super::{gain_from_dqdv, CalibrationTable, GainTuneError, Result};
use crate::simcore::{
    controller_step, converter_step, grid_voltage, qcm_step, GainEvent, GainHook, GridEquivalent,
    GridMode, StatcomParams, StatcomState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Open-loop reactive offset, MVAR.
    pub delta_q: f64,
    /// How long the offset is held before the voltage is read.
    pub hold_s: f64,
    /// Closed-loop settling run ahead of the offset.
    pub settle_s: f64,
    /// Largest |dV/dt| (pu/s) accepted as settled.
    pub settle_tol: f64,
    pub dt: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            delta_q: 5.0,
            hold_s: 0.5,
            settle_s: 1.0,
            settle_tol: 1e-3,
            dt: 1.0 / 9600.0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta_q.is_finite()
            && self.delta_q != 0.0
            && self.hold_s > 0.0
            && self.settle_s >= 0.0
            && self.settle_tol > 0.0
            && self.dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GainTuneError::InvalidConfig(format!(
                "bad probe config {self:?}"
            )))
        }
    }
}

/// Probes from rest with the measurement settled at the source voltage.
pub fn probe_dqdv(p: &StatcomParams, g: &GridEquivalent, cfg: &ProbeConfig) -> Result<f64> {
    probe_dqdv_from(p, g, &StatcomState::at_rest(p, g.v_src), cfg)
}

/// dQ/dV in GVAR per pu, measured on a copy of `state`: closed-loop settling
/// for `settle_s`, then the regulator is frozen with its output raised by
/// `delta_q` and the bus voltage is read after `hold_s`.
pub fn probe_dqdv_from(
    p: &StatcomParams,
    g: &GridEquivalent,
    state: &StatcomState,
    cfg: &ProbeConfig,
) -> Result<f64> {
    cfg.validate()?;
    p.validate()?;
    g.validate()?;
    if g.mode != GridMode::Thevenin {
        return Err(GainTuneError::NotThevenin);
    }
    let dt = cfg.dt;
    let mut s = *state;
    let settle_steps = (cfg.settle_s / dt).round() as usize;
    // Slope is read over the last 10 ms of the settling run.
    let lookback = ((0.01 / dt).round() as usize).max(1);
    let mut history = std::collections::VecDeque::with_capacity(lookback + 1);
    history.push_back(grid_voltage(g, s.q_act, None)?);
    for _ in 0..settle_steps {
        let v = grid_voltage(g, s.q_act, None)?;
        s = controller_step(s, p, v, dt)?;
        if p.qcm_enabled {
            s = qcm_step(s, p, dt);
        }
        history.push_back(grid_voltage(g, s.q_act, None)?);
        if history.len() > lookback + 1 {
            history.pop_front();
        }
    }
    let span = (history.len() - 1).max(1) as f64 * dt;
    let rate = (history.back().unwrap() - history.front().unwrap()).abs() / span;
    // Also reject a state whose converter is still slewing toward its command.
    let slew = (s.q_cmd - s.q_act).abs() / p.tau_conv / g.s_scc();
    let rate = rate.max(slew);
    if rate > cfg.settle_tol {
        return Err(GainTuneError::NotSettled {
            rate,
            tol: cfg.settle_tol,
        });
    }

    let q0 = s.q_act;
    let v0 = grid_voltage(g, q0, None)?;
    s.q_cmd += cfg.delta_q;
    for _ in 0..(cfg.hold_s / dt).round() as usize {
        s = converter_step(s, p, dt);
    }
    let v1 = grid_voltage(g, s.q_act, None)?;
    let dv = v1 - v0;
    if !(dv.abs() > 1e-12) {
        return Err(GainTuneError::ZeroDeltaV);
    }
    Ok((s.q_act - q0) / dv / 1000.0)
}

/// Probes the grid and looks up the matching gain.
pub fn auto_gain_adjust(
    p: &StatcomParams,
    g: &GridEquivalent,
    state: &StatcomState,
    table: &CalibrationTable,
    cfg: &ProbeConfig,
) -> Result<(f64, GainEvent)> {
    let dqdv = probe_dqdv_from(p, g, state, cfg)?;
    let gain = gain_from_dqdv(dqdv, table);
    log::info!(
        "auto gain at t = {:.3} s: dQ/dV = {dqdv:.4} GVAR/pu, gain {} -> {gain:.4}",
        state.t,
        p.gain
    );
    Ok((
        gain,
        GainEvent {
            t: state.t,
            old_gain: p.gain,
            new_gain: gain,
        },
    ))
}

/// Fires [`auto_gain_adjust`] once at a scheduled simulation time.
#[derive(Debug, Clone)]
pub struct AutoGainHook {
    pub at_s: f64,
    pub table: CalibrationTable,
    pub cfg: ProbeConfig,
    /// Multiplies the looked-up gain; 1.0 in normal use.
    pub scale: f64,
    /// Probe result of the last firing, GVAR per pu.
    pub last_dqdv: Option<f64>,
}

impl AutoGainHook {
    pub fn new(at_s: f64, table: CalibrationTable, cfg: ProbeConfig) -> Self {
        Self {
            at_s,
            table,
            cfg,
            scale: 1.0,
            last_dqdv: None,
        }
    }
}

impl GainHook for AutoGainHook {
    fn at(&self) -> f64 {
        self.at_s
    }

    fn adjust(
        &mut self,
        params: &StatcomParams,
        grid: &GridEquivalent,
        state: &StatcomState,
    ) -> std::result::Result<f64, Box<dyn StdError + Send + Sync>> {
        let dqdv = probe_dqdv_from(params, grid, state, &self.cfg)?;
        self.last_dqdv = Some(dqdv);
        Ok(gain_from_dqdv(dqdv, &self.table) * self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn analytic(l: f64) -> f64 {
        230.0 * 230.0 / (2.0 * PI * 60.0 * l) / 1000.0
    }

    #[test]
    fn probe_recovers_analytic_scc() {
        let p = StatcomParams::default();
        let cfg = ProbeConfig::default();
        for (l, vendor) in [(0.01, 14.3), (0.02, 7.0), (0.025, 5.342857143)] {
            let d = probe_dqdv(&p, &GridEquivalent::thevenin(l, 1.0), &cfg).unwrap();
            assert!((d / analytic(l) - 1.0).abs() < 1e-6, "L={l}: {d}");
            assert!((d / vendor - 1.0).abs() < 0.07, "L={l}: {d} vs {vendor}");
        }
    }

    #[test]
    fn doubling_reactance_halves_dqdv() {
        let p = StatcomParams::default();
        let cfg = ProbeConfig::default();
        let a = probe_dqdv(&p, &GridEquivalent::thevenin(0.012, 1.0), &cfg).unwrap();
        let b = probe_dqdv(&p, &GridEquivalent::thevenin(0.024, 1.0), &cfg).unwrap();
        assert!((a / b - 2.0).abs() < 0.02);
    }

    #[test]
    fn probe_errors() {
        let p = StatcomParams::default();
        let cfg = ProbeConfig::default();
        assert!(matches!(
            probe_dqdv(&p, &GridEquivalent::playback(), &cfg),
            Err(GainTuneError::NotThevenin)
        ));
        assert!(matches!(
            probe_dqdv(&p, &GridEquivalent::thevenin(1e-300, 1.0), &cfg),
            Err(GainTuneError::ZeroDeltaV)
        ));
        let g = GridEquivalent::thevenin(0.02, 1.0);
        let mut moving = StatcomState::at_rest(&p, 1.0);
        moving.q_cmd = 80.0;
        let quick = ProbeConfig {
            settle_s: 0.0,
            ..cfg
        };
        assert!(matches!(
            probe_dqdv_from(&p, &g, &moving, &quick),
            Err(GainTuneError::NotSettled { .. })
        ));
    }

    #[test]
    fn auto_gain_is_repeatable() {
        let p = StatcomParams::default();
        let g = GridEquivalent::thevenin(0.02454, 1.0);
        let table = CalibrationTable::reference();
        let s = StatcomState::at_rest(&p, 1.0);
        let (a, ev) = auto_gain_adjust(&p, &g, &s, &table, &ProbeConfig::default()).unwrap();
        let (b, _) = auto_gain_adjust(&p, &g, &s, &table, &ProbeConfig::default()).unwrap();
        assert!((a - b).abs() < 0.05);
        assert!((14.0..=15.1).contains(&a));
        assert_eq!(ev.old_gain, 12.75);
        assert_eq!(ev.new_gain, a);
    }
}

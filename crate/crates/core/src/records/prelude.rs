use std::f64::consts::{PI, SQRT_2};

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use super::phasor::{extract_phasors, PhasorSeries};
use super::{AnalogChannel, Recording, RecordsError, Result, Unit};

/// Steady-state lead-in prepended ahead of a recorded event so that gain
/// adjustment can complete before the disturbance is played back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreludeSpec {
    pub duration_s: f64,
    pub nominal_pu: f64,
    /// Line-to-line RMS base voltage.
    pub v_base_kv: f64,
}

impl Default for PreludeSpec {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            nominal_pu: 1.0,
            v_base_kv: 230.0,
        }
    }
}

/// Prepends `ceil(duration_s * sample_rate)` samples of balanced
/// nominal-magnitude voltage to every channel.
///
/// Each synthetic phase is phase-aligned with the fundamental extracted from
/// the first recorded cycle of that phase, so the splice is continuous.
/// Current channels are padded with zero and any other channel with its
/// first recorded value.
pub fn prepend_prelude(rec: &Recording, spec: &PreludeSpec) -> Result<Recording> {
    if !(spec.duration_s >= 0.0 && spec.duration_s.is_finite()) {
        return Err(RecordsError::Invalid(format!(
            "prelude duration must be non-negative, got {}",
            spec.duration_s
        )));
    }
    let v_names = rec
        .phase_channels(Unit::KiloVolt)
        .ok_or(RecordsError::MissingPhaseChannels)?;
    let rate = rec.sample_rate();
    let m = (spec.duration_s * rate - 1e-9).ceil().max(0.0) as usize;
    if m == 0 {
        return Ok(rec.clone());
    }

    let first: PhasorSeries = extract_phasors(rec, v_names, rec.line_freq_hz())?;
    if first.is_empty() {
        return Err(RecordsError::Invalid(
            "recording is shorter than one fundamental cycle".into(),
        ));
    }
    let angles = first.at(0).map(|p| p.angle);
    // Fallback for a dead phase: balanced offset from phase A.
    let angle_of = |i: usize| {
        if first.phases[i][0].magnitude > 0.0 {
            angles[i]
        } else {
            angles[0] - 2.0 * PI * i as f64 / 3.0
        }
    };
    let peak = spec.nominal_pu * spec.v_base_kv / 3f64.sqrt() * SQRT_2;
    let w = 2.0 * PI * rec.line_freq_hz();

    let channels = rec
        .channels()
        .iter()
        .map(|ch| {
            let mut values = Vec::with_capacity(m + ch.values.len());
            match v_names.iter().position(|n| *n == ch.name) {
                Some(p) => {
                    let theta = angle_of(p);
                    values.extend((0..m).map(|j| {
                        let t = (j as f64 - m as f64) / rate;
                        peak * (w * t + theta).cos()
                    }));
                }
                None if ch.unit == Unit::KiloAmp => values.resize(m, 0.0),
                None => values.resize(m, ch.values[0]),
            }
            values.extend_from_slice(&ch.values);
            AnalogChannel::new(ch.name.clone(), ch.unit, ch.phase, values)
        })
        .collect();

    let shift_us = (m as f64 * 1e6 / rate).round() as i64;
    let start = rec.start_time() - TimeDelta::microseconds(shift_us);
    Recording::new(rec.station_id(), rate, rec.line_freq_hz(), start, channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::PhaseTag;

    fn three_phase(len: usize, amp_pu: f64, phase0: f64) -> Recording {
        let peak = amp_pu * 230.0 / 3f64.sqrt() * SQRT_2;
        let mk = |i: usize| -> Vec<f64> {
            (0..len)
                .map(|k| {
                    let t = k as f64 / 9600.0;
                    peak * (2.0 * PI * 60.0 * t + phase0 - 2.0 * PI * i as f64 / 3.0).cos()
                })
                .collect()
        };
        let chans = vec![
            AnalogChannel::new("VA", Unit::KiloVolt, PhaseTag::A, mk(0)),
            AnalogChannel::new("VB", Unit::KiloVolt, PhaseTag::B, mk(1)),
            AnalogChannel::new("VC", Unit::KiloVolt, PhaseTag::C, mk(2)),
            AnalogChannel::new("IA", Unit::KiloAmp, PhaseTag::A, vec![0.1; len]),
            AnalogChannel::new("VDC", Unit::KiloVolt, PhaseTag::None, vec![35.0; len]),
        ];
        let start = chrono::NaiveDate::from_ymd_opt(2018, 3, 12)
            .unwrap()
            .and_hms_opt(14, 0, 0)
            .unwrap();
        Recording::new("S", 9600.0, 60.0, start, chans).unwrap()
    }

    #[test]
    fn zero_duration_is_identity() {
        let rec = three_phase(500, 0.97, 0.4);
        let spec = PreludeSpec {
            duration_s: 0.0,
            ..PreludeSpec::default()
        };
        assert_eq!(prepend_prelude(&rec, &spec).unwrap(), rec);
    }

    #[test]
    fn ten_seconds_adds_96000_samples() {
        let rec = three_phase(400, 1.0, 0.0);
        let out = prepend_prelude(&rec, &PreludeSpec::default()).unwrap();
        assert_eq!(out.n_samples(), rec.n_samples() + 96_000);
        assert_eq!(out.start_time(), rec.start_time() - TimeDelta::seconds(10));
        let ia = out.channel("IA").unwrap();
        assert!(ia.values[..96_000].iter().all(|v| *v == 0.0));
        assert_eq!(ia.values[96_000], 0.1);
        assert!(out
            .channel("VDC")
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 35.0));
    }

    #[test]
    fn prelude_magnitude_and_splice_phase() {
        let rec = three_phase(800, 0.93, 1.1);
        let spec = PreludeSpec {
            duration_s: 0.25,
            ..PreludeSpec::default()
        };
        let out = prepend_prelude(&rec, &spec).unwrap();
        let m = 2400;
        let ps = extract_phasors(&out, ["VA", "VB", "VC"], 60.0).unwrap();
        let nominal = 230.0 / 3f64.sqrt();
        for k in 0..=(m - 160) {
            for ph in &ps.phases {
                assert!((ph[k].magnitude - nominal).abs() / nominal < 1e-3);
            }
        }
        // Window ending at the last synthetic sample vs. first recorded cycle.
        let one_sample = 2.0 * PI / 160.0;
        for ph in &ps.phases {
            let before = ph[m - 160].angle;
            let after = ph[m].angle;
            let d = (before - after + PI).rem_euclid(2.0 * PI) - PI;
            assert!(d.abs() < one_sample, "splice phase jump {d}");
        }
    }

    #[test]
    fn needs_three_voltage_phases() {
        let chans = vec![AnalogChannel::new(
            "VA",
            Unit::KiloVolt,
            PhaseTag::A,
            vec![0.0; 10],
        )];
        let rec =
            Recording::new("S", 9600.0, 60.0, chrono::NaiveDateTime::default(), chans).unwrap();
        assert_eq!(
            prepend_prelude(&rec, &PreludeSpec::default()),
            Err(RecordsError::MissingPhaseChannels)
        );
    }
}

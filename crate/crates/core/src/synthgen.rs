//! Synthetic fault-recorder events: balanced three-phase voltage with
//! ramped dips and a recovery overshoot, plus current channels carrying the
//! reactive response of a reference controller.

use std::f64::consts::{PI, SQRT_2};

use chrono::NaiveDateTime;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{extract_phasors, AnalogChannel, PhaseTag, Recording, RecordsError, Unit};
use crate::simcore::{
    GridEquivalent, PlaybackSignal, SimError, Simulator, StatcomParams, StatcomState,
};

/// Decay constant of the post-clearing overshoot.
const OVERSHOOT_TAU_S: f64 = 0.1;
/// Recording tail after the last dip clears.
const TAIL_S: f64 = 0.5;
/// CGLS iterations when fitting the current envelope.
const REFINE_PASSES: usize = 30;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("dips overlap or are out of order: {0}")]
    OverlappingDips(String),
    #[error("invalid event spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipSpec {
    /// Seconds after the pre-event interval.
    pub start_s: f64,
    pub duration_s: f64,
    /// Fractional drop of the affected phases, in (0, 1).
    pub depth_pu: f64,
    #[serde(default = "all_phases")]
    pub phases: Vec<PhaseTag>,
}

fn all_phases() -> Vec<PhaseTag> {
    PhaseTag::ABC.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventSpec {
    pub station_id: String,
    pub start_time: NaiveDateTime,
    pub pre_s: f64,
    pub dips: Vec<DipSpec>,
    pub recovery_overshoot_pu: f64,
    pub v_nominal_pu: f64,
    pub sample_rate: f64,
    pub f0: f64,
    pub v_base_kv: f64,
    /// Standard deviation of additive Gaussian noise, kV; off when absent.
    pub noise_kv: Option<f64>,
    pub seed: u64,
}

impl Default for EventSpec {
    fn default() -> Self {
        Self {
            station_id: "SYNTH".into(),
            start_time: chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid date"),
            pre_s: 0.2,
            dips: Vec::new(),
            recovery_overshoot_pu: 0.02,
            v_nominal_pu: 1.0,
            sample_rate: 9600.0,
            f0: 60.0,
            v_base_kv: 230.0,
            noise_kv: None,
            seed: 0,
        }
    }
}

impl EventSpec {
    pub fn from_json(doc: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.sample_rate > 0.0 && self.f0 > 0.0 && self.v_base_kv > 0.0) {
            return bad("sample_rate, f0 and v_base_kv must be positive".into());
        }
        if !(self.pre_s >= 0.0 && self.v_nominal_pu > 0.0 && self.recovery_overshoot_pu >= 0.0) {
            return bad("pre_s, v_nominal_pu and recovery_overshoot_pu out of range".into());
        }
        if let Some(sd) = self.noise_kv {
            if !(sd >= 0.0 && sd.is_finite()) {
                return bad(format!("noise_kv must be non-negative, got {sd}"));
            }
        }
        let cycle = 1.0 / self.f0;
        for (k, d) in self.dips.iter().enumerate() {
            if !(d.start_s >= 0.0 && d.duration_s > 0.0 && d.depth_pu > 0.0 && d.depth_pu < 1.0) {
                return bad(format!(
                    "dip {k}: need start >= 0, duration > 0, 0 < depth < 1"
                ));
            }
            if d.phases.is_empty() || d.phases.contains(&PhaseTag::None) {
                return bad(format!(
                    "dip {k}: phases must be a non-empty subset of A, B, C"
                ));
            }
        }
        for (k, w) in self.dips.windows(2).enumerate() {
            // The recovery ramp of one dip must finish before the next begins.
            if w[1].start_s < w[0].start_s + w[0].duration_s + cycle - 1e-12 {
                return Err(SynthError::OverlappingDips(format!(
                    "dip {} starts at {} s, before dip {k} has recovered",
                    k + 1,
                    w[1].start_s
                )));
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        let last_end = self
            .dips
            .iter()
            .map(|d| d.start_s + d.duration_s)
            .fold(0.0, f64::max);
        self.pre_s + last_end + TAIL_S
    }

    /// Per-unit magnitude of phase `p` at time `t`.
    fn envelope(&self, p: PhaseTag, t: f64) -> f64 {
        let cycle = 1.0 / self.f0;
        let ramp = |x: f64| 0.5 * (1.0 - (PI * x.clamp(0.0, 1.0)).cos());
        let mut drop = 0.0;
        for d in self.dips.iter().filter(|d| d.phases.contains(&p)) {
            let ts = self.pre_s + d.start_s;
            let te = ts + d.duration_s;
            let w = if t < te {
                ramp((t - ts) / cycle)
            } else {
                1.0 - ramp((t - te) / cycle)
            };
            drop += d.depth_pu * w;
        }
        let mut m = 1.0 - drop;
        if let Some(last) = self.dips.last() {
            let te = self.pre_s + last.start_s + last.duration_s;
            if t > te {
                let rise = ramp((t - te) / cycle);
                m += self.recovery_overshoot_pu * rise * (-(t - te) / OVERSHOOT_TAU_S).exp();
            }
        }
        self.v_nominal_pu * m
    }
}

pub fn gen_event(spec: &EventSpec) -> Result<Recording> {
    spec.validate()?;
    let n = (spec.duration_s() * spec.sample_rate).round() as usize;
    let peak = spec.v_base_kv / 3f64.sqrt() * SQRT_2;
    let w = 2.0 * PI * spec.f0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = match spec.noise_kv {
        Some(sd) if sd > 0.0 => {
            Some(Normal::new(0.0, sd).map_err(|e| SynthError::InvalidSpec(e.to_string()))?)
        }
        _ => None,
    };
    let channels = PhaseTag::ABC
        .iter()
        .enumerate()
        .map(|(p, &tag)| {
            let shift = 2.0 * PI * p as f64 / 3.0;
            let values = (0..n)
                .map(|k| {
                    let t = k as f64 / spec.sample_rate;
                    let v = peak * spec.envelope(tag, t) * (w * t - shift).cos();
                    match &noise {
                        Some(d) => v + d.sample(&mut rng),
                        None => v,
                    }
                })
                .collect();
            AnalogChannel::new(format!("V{}", tag.as_str()), Unit::KiloVolt, tag, values)
        })
        .collect();
    Ok(Recording::new(
        spec.station_id.clone(),
        spec.sample_rate,
        spec.f0,
        spec.start_time,
        channels,
    )?)
}

/// Runs `sim` (switched to playback) on the recording's positive-sequence
/// voltage and appends IA/IB/IC channels whose reactive power is the
/// simulated output. Returns the recording and the simulated Q per phasor.
pub fn synth_currents(
    rec: &Recording,
    v_base_kv: f64,
    sim: &mut Simulator,
) -> Result<(Recording, Vec<f64>)> {
    let names = rec
        .phase_channels(Unit::KiloVolt)
        .ok_or(RecordsError::MissingPhaseChannels)?;
    for n in ["IA", "IB", "IC"] {
        if rec.channel(n).is_ok() {
            return Err(SynthError::InvalidSpec(format!(
                "recording already has `{n}`"
            )));
        }
    }
    let f0 = rec.line_freq_hz();
    let vs = extract_phasors(rec, names, f0)?;
    if vs.is_empty() {
        return Err(RecordsError::Invalid("recording is shorter than one cycle".into()).into());
    }
    let pb = PlaybackSignal::from_phasors(&vs, v_base_kv);
    sim.set_grid(GridEquivalent::playback().with_base(v_base_kv, f0))?;
    let trace = sim.run(pb.values.len() as f64 * vs.dt(), Some(&pb), &mut [])?;

    // Target current phasor per window: 90 degrees off the voltage, sized
    // so that 3 |V1| |I1| equals the simulated output.
    let target: Vec<Complex64> = vs
        .positive_sequence()
        .iter()
        .zip(&trace.q_act)
        .map(|(v, q)| {
            let amp = if v.magnitude > 0.0 {
                q / (3.0 * v.magnitude)
            } else {
                0.0
            };
            Complex64::from_polar(amp, v.angle - PI / 2.0)
        })
        .collect();

    // The positive-sequence phasor of a balanced set is exactly the window
    // mean of its complex envelope. Start from the target placed at window
    // centres, then least-squares refine (CGLS) so the window means match
    // the target; corrections stay in the range of the window adjoint, so no
    // estimator-invisible ripple is introduced.
    let n = vs.samples_per_cycle;
    let half = (n as f64 - 1.0) / 2.0;
    let mut envelope: Vec<Complex64> = (0..rec.n_samples())
        .map(|j| {
            let kf = (j as f64 - half).clamp(0.0, (target.len() - 1) as f64);
            let k = kf.floor() as usize;
            let w = kf - k as f64;
            if k + 1 < target.len() {
                target[k] * (1.0 - w) + target[k + 1] * w
            } else {
                target[k]
            }
        })
        .collect();
    refine_envelope(&mut envelope, &target, n);

    let rate = rec.sample_rate();
    let w = 2.0 * PI * f0;
    let mut currents: [Vec<f64>; 3] = Default::default();
    for (j, env) in envelope.iter().enumerate() {
        let t = j as f64 / rate;
        for (p, out) in currents.iter_mut().enumerate() {
            let rot = Complex64::from_polar(SQRT_2, w * t - 2.0 * PI * p as f64 / 3.0);
            out.push((env * rot).re);
        }
    }

    let mut channels = rec.channels().to_vec();
    for (tag, values) in PhaseTag::ABC.iter().zip(currents) {
        channels.push(AnalogChannel::new(
            format!("I{}", tag.as_str()),
            Unit::KiloAmp,
            *tag,
            values,
        ));
    }
    let out = Recording::new(rec.station_id(), rate, f0, rec.start_time(), channels)?;
    Ok((out, trace.q_act))
}

fn window_mean(x: &[Complex64], n: usize, len: usize) -> Vec<Complex64> {
    let mut acc: Complex64 = x[..n].iter().sum();
    let mut out = Vec::with_capacity(len);
    out.push(acc / n as f64);
    for k in 1..len {
        acc += x[k + n - 1] - x[k - 1];
        out.push(acc / n as f64);
    }
    out
}

/// Adjoint of [`window_mean`].
fn window_mean_adjoint(r: &[Complex64], n: usize, samples: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(samples);
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..samples {
        if j < r.len() {
            acc += r[j];
        }
        if j >= n && j - n < r.len() {
            acc -= r[j - n];
        }
        out.push(acc / n as f64);
    }
    out
}

fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// Conjugate-gradient least squares on `window_mean(x) = target`.
fn refine_envelope(x: &mut [Complex64], target: &[Complex64], n: usize) {
    let len = target.len();
    let mut r: Vec<Complex64> = window_mean(x, n, len)
        .iter()
        .zip(target)
        .map(|(m, t)| t - m)
        .collect();
    let mut s = window_mean_adjoint(&r, n, x.len());
    let mut p = s.clone();
    let mut gamma = norm_sqr(&s);
    let tol = 1e-24 * norm_sqr(target).max(1e-300);
    for _ in 0..REFINE_PASSES {
        if gamma <= tol {
            break;
        }
        let q = window_mean(&p, n, len);
        let qq = norm_sqr(&q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += pi * alpha;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= qi * alpha;
        }
        s = window_mean_adjoint(&r, n, x.len());
        let next = norm_sqr(&s);
        let beta = next / gamma;
        gamma = next;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + *pi * beta;
        }
    }
}

/// Current channels from a reference controller started at rest with its
/// measurement settled on the first recorded voltage.
pub fn synth_measured_q(
    rec: &Recording,
    reference: &StatcomParams,
    v_base_kv: f64,
) -> Result<Recording> {
    let names = rec
        .phase_channels(Unit::KiloVolt)
        .ok_or(RecordsError::MissingPhaseChannels)?;
    let vs = extract_phasors(rec, names, rec.line_freq_hz())?;
    let v0 = PlaybackSignal::from_phasors(&vs, v_base_kv)
        .values
        .first()
        .copied()
        .unwrap_or(1.0);
    let mut sim = Simulator::with_state(
        reference.clone(),
        GridEquivalent::playback().with_base(v_base_kv, rec.line_freq_hz()),
        1.0 / rec.sample_rate(),
        StatcomState::at_rest(reference, v0),
    )?;
    Ok(synth_currents(rec, v_base_kv, &mut sim)?.0)
}

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Recording, RecordsError, Result};

/// RMS phasor. `angle` is in radians on (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor {
    pub magnitude: f64,
    pub angle: f64,
}

impl Phasor {
    pub fn new(magnitude: f64, angle: f64) -> Self {
        Self::from_complex(Complex64::from_polar(magnitude, angle))
    }

    pub fn from_complex(z: Complex64) -> Self {
        let mut angle = z.arg();
        if angle <= -PI {
            angle = PI;
        }
        Self {
            magnitude: z.norm(),
            angle,
        }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.angle)
    }
}

/// Per-phase phasor trajectories from a sliding one-cycle DFT.
///
/// `times[k]` is the centre of the k-th window, in seconds from the first
/// sample of the recording. Window k covers samples `k..k + samples_per_cycle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorSeries {
    pub times: Vec<f64>,
    pub phases: [Vec<Phasor>; 3],
    pub fundamental_hz: f64,
    pub samples_per_cycle: usize,
}

impl PhasorSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.fundamental_hz * self.samples_per_cycle as f64)
    }

    pub fn at(&self, k: usize) -> [Phasor; 3] {
        [self.phases[0][k], self.phases[1][k], self.phases[2][k]]
    }

    pub fn positive_sequence(&self) -> Vec<Phasor> {
        (0..self.len())
            .map(|k| {
                let [a, b, c] = self.at(k);
                positive_sequence(a, b, c)
            })
            .collect()
    }
}

fn samples_per_cycle(sample_rate: f64, fundamental_hz: f64) -> Result<usize> {
    let ratio = sample_rate / fundamental_hz;
    let n = ratio.round();
    if !(fundamental_hz > 0.0) || n < 2.0 || (ratio - n).abs() > 1e-9 * ratio {
        return Err(RecordsError::IncommensurateRate {
            sample_rate,
            fundamental_hz,
        });
    }
    Ok(n as usize)
}

/// Sliding one-cycle DFT of `x`, referenced to absolute sample time so a
/// steady tone keeps a constant angle. Returns one RMS phasor per complete
/// window.
pub(crate) fn sliding_dft(x: &[f64], n: usize) -> Vec<Complex64> {
    if x.len() < n {
        return Vec::new();
    }
    let twiddle: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64))
        .collect();
    let scale = SQRT_2 / n as f64;
    let window_sum =
        |start: usize| -> Complex64 { (start..start + n).map(|i| twiddle[i % n] * x[i]).sum() };
    let mut out = Vec::with_capacity(x.len() - n + 1);
    let mut acc = window_sum(0);
    out.push(acc * scale);
    for end in n..x.len() {
        let start = end + 1 - n;
        if start.is_multiple_of(n) {
            // Re-sum once per cycle to bound recursive rounding drift.
            acc = window_sum(start);
        } else {
            acc += twiddle[end % n] * (x[end] - x[end - n]);
        }
        out.push(acc * scale);
    }
    out
}

/// Extracts fundamental-frequency phasors for three channels with a
/// rectangular one-cycle window advanced one sample per output.
pub fn extract_phasors(
    rec: &Recording,
    channels: [&str; 3],
    fundamental_hz: f64,
) -> Result<PhasorSeries> {
    let n = samples_per_cycle(rec.sample_rate(), fundamental_hz)?;
    let data = channels
        .iter()
        .map(|name| rec.channel(name).map(|c| c.values.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let per_phase: Vec<Vec<Phasor>> = data
        .iter()
        .map(|x| {
            sliding_dft(x, n)
                .into_iter()
                .map(Phasor::from_complex)
                .collect()
        })
        .collect();
    let len = per_phase[0].len();
    let rate = rec.sample_rate();
    let half = (n as f64 - 1.0) / 2.0;
    let times = (0..len).map(|k| (k as f64 + half) / rate).collect();
    let mut it = per_phase.into_iter();
    let phases = [
        it.next().unwrap_or_default(),
        it.next().unwrap_or_default(),
        it.next().unwrap_or_default(),
    ];
    Ok(PhasorSeries {
        times,
        phases,
        fundamental_hz,
        samples_per_cycle: n,
    })
}

fn a_operator() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

/// Positive-sequence component `(pa + a*pb + a^2*pc) / 3`, `a = 1∠120°`.
pub fn positive_sequence(pa: Phasor, pb: Phasor, pc: Phasor) -> Phasor {
    let a = a_operator();
    Phasor::from_complex((pa.to_complex() + a * pb.to_complex() + a * a * pc.to_complex()) / 3.0)
}

/// Which way the current transducer points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    OutOfDevice,
    IntoDevice,
}

/// Three-phase reactive power in MVAR from a phase-RMS kV voltage phasor and
/// an RMS kA current phasor. Positive is capacitive injection into the grid.
pub fn compute_q(v: Phasor, i: Phasor, orientation: Orientation) -> f64 {
    let q = 3.0 * v.magnitude * i.magnitude * (v.angle - i.angle).sin();
    match orientation {
        Orientation::OutOfDevice => q,
        Orientation::IntoDevice => -q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{AnalogChannel, PhaseTag, Unit};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const RATE: f64 = 9600.0;
    const N: usize = 160;

    fn rec_of(chans: Vec<(&str, Vec<f64>)>) -> Recording {
        let tags = [PhaseTag::A, PhaseTag::B, PhaseTag::C];
        let channels = chans
            .into_iter()
            .enumerate()
            .map(|(i, (n, v))| AnalogChannel::new(n, Unit::KiloVolt, tags[i % 3], v))
            .collect();
        Recording::new("T", RATE, 60.0, chrono::NaiveDateTime::default(), channels).unwrap()
    }

    fn tone(amp: f64, delay_s: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|k| amp * (2.0 * PI * 60.0 * (k as f64 / RATE - delay_s)).cos())
            .collect()
    }

    /// Independent oracle: direct windowed DFT with the phase reference taken
    /// from wall-clock time rather than a twiddle table.
    fn naive_phasor(x: &[f64], end: usize) -> Complex64 {
        let start = end + 1 - N;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, v) in x.iter().enumerate().take(end + 1).skip(start) {
            let t = k as f64 / RATE;
            let w = 2.0 * PI * 60.0 * t;
            acc += Complex64::new(v * w.cos(), -v * w.sin());
        }
        acc * (2f64.sqrt() / N as f64)
    }

    #[test]
    fn pure_tone_recovers_rms_and_zero_angle() {
        let amp = 187.79;
        let x = tone(amp, 0.0, 3000);
        let rec = rec_of(vec![("VA", x.clone()), ("VB", x.clone()), ("VC", x)]);
        let ps = extract_phasors(&rec, ["VA", "VB", "VC"], 60.0).unwrap();
        assert_eq!(ps.len(), 3000 - N + 1);
        for p in &ps.phases[0] {
            assert!((p.magnitude - amp / SQRT_2).abs() / (amp / SQRT_2) < 1e-9);
            assert_abs_diff_eq!(p.angle, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(ps.times[0], 79.5 / RATE, epsilon = 1e-15);
    }

    #[test]
    fn quarter_period_delay_is_minus_half_pi() {
        let x = tone(1.0, 1.0 / 240.0, 1000);
        let rec = rec_of(vec![("VA", x.clone()), ("VB", x.clone()), ("VC", x)]);
        let ps = extract_phasors(&rec, ["VA", "VB", "VC"], 60.0).unwrap();
        for p in &ps.phases[0] {
            assert_abs_diff_eq!(p.angle, -PI / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn amplitude_step_matches_naive_dft_and_spans_one_cycle() {
        let len = 2000;
        let step_at = 900;
        let x: Vec<f64> = tone(1.0, 0.0, len)
            .into_iter()
            .enumerate()
            .map(|(k, v)| if k >= step_at { 0.5 * v } else { v })
            .collect();
        let rec = rec_of(vec![
            ("VA", x.clone()),
            ("VB", x.clone()),
            ("VC", x.clone()),
        ]);
        let ps = extract_phasors(&rec, ["VA", "VB", "VC"], 60.0).unwrap();
        for (k, p) in ps.phases[0].iter().enumerate() {
            let oracle = naive_phasor(&x, k + N - 1);
            assert_abs_diff_eq!(p.to_complex().re, oracle.re, epsilon = 1e-9);
            assert_abs_diff_eq!(p.to_complex().im, oracle.im, epsilon = 1e-9);
        }
        let mags: Vec<f64> = ps.phases[0].iter().map(|p| p.magnitude).collect();
        let hi = 1.0 / SQRT_2;
        let first_low = step_at; // window starting at the step sees only the low level
        let last_high = step_at - N; // window ending just before the step
        for (k, m) in mags.iter().enumerate() {
            if k <= last_high {
                assert_abs_diff_eq!(*m, hi, epsilon = 1e-9);
            } else if k >= first_low {
                assert_abs_diff_eq!(*m, 0.5 * hi, epsilon = 1e-9);
            }
        }
        // Transition is confined to one window length and monotone up to the
        // double-frequency leakage of a partial-cycle window (~3e-6 here).
        for k in last_high..first_low {
            assert!(mags[k + 1] <= mags[k] + 1e-5 * hi);
        }
        assert_eq!(first_low - last_high, N);
    }

    #[test]
    fn rejects_incommensurate_rate_and_missing_channel() {
        let rec = rec_of(vec![
            ("VA", vec![0.0; 400]),
            ("VB", vec![0.0; 400]),
            ("VC", vec![0.0; 400]),
        ]);
        assert!(matches!(
            extract_phasors(&rec, ["VA", "VB", "VC"], 61.0),
            Err(RecordsError::IncommensurateRate { .. })
        ));
        assert!(matches!(
            extract_phasors(&rec, ["VA", "VB", "VX"], 60.0),
            Err(RecordsError::ChannelNotFound(n)) if n == "VX"
        ));
    }

    #[test]
    fn balanced_and_negative_sequence_sets() {
        let deg = PI / 180.0;
        let pos = positive_sequence(
            Phasor::new(1.0, 0.0),
            Phasor::new(1.0, -120.0 * deg),
            Phasor::new(1.0, 120.0 * deg),
        );
        assert_abs_diff_eq!(pos.magnitude, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pos.angle, 0.0, epsilon = 1e-12);
        let neg = positive_sequence(
            Phasor::new(1.0, 0.0),
            Phasor::new(1.0, 120.0 * deg),
            Phasor::new(1.0, -120.0 * deg),
        );
        assert!(neg.magnitude < 1e-12);
    }

    #[test]
    fn q_examples() {
        let v = Phasor::new(230.0 / 3f64.sqrt(), PI / 2.0);
        let i = Phasor::new(0.314, 0.0);
        let q = compute_q(v, i, Orientation::OutOfDevice);
        assert_abs_diff_eq!(q, 3.0 * 230.0 / 3f64.sqrt() * 0.314, epsilon = 1e-9);
        assert!((q - 125.1).abs() < 0.05);
        assert_eq!(
            compute_q(
                Phasor::new(132.8, 0.3),
                Phasor::new(5.0, 0.3),
                Orientation::OutOfDevice
            ),
            0.0
        );
        let ind = compute_q(
            Phasor::new(132.8, -PI / 2.0),
            Phasor::new(0.314, 0.0),
            Orientation::OutOfDevice,
        );
        assert_abs_diff_eq!(ind, -3.0 * 132.8 * 0.314, epsilon = 1e-9);
    }

    fn arb_phasor() -> impl Strategy<Value = Phasor> {
        (0.0f64..300.0, -PI..PI).prop_map(|(m, a)| Phasor::new(m, a))
    }

    proptest! {
        #[test]
        fn positive_sequence_matches_rectangular_oracle(a in arb_phasor(), b in arb_phasor(), c in arb_phasor()) {
            // Rectangular-coordinate evaluation with a = -1/2 + j*sqrt(3)/2.
            let h = 3f64.sqrt() / 2.0;
            let (ar, ai) = (a.magnitude * a.angle.cos(), a.magnitude * a.angle.sin());
            let (br, bi) = (b.magnitude * b.angle.cos(), b.magnitude * b.angle.sin());
            let (cr, ci) = (c.magnitude * c.angle.cos(), c.magnitude * c.angle.sin());
            // a*b = (-br/2 - h*bi) + j(h*br - bi/2); a^2*c = (-cr/2 + h*ci) + j(-h*cr - ci/2)
            let re = (ar + (-0.5 * br - h * bi) + (-0.5 * cr + h * ci)) / 3.0;
            let im = (ai + (h * br - 0.5 * bi) + (-h * cr - 0.5 * ci)) / 3.0;
            let got = positive_sequence(a, b, c).to_complex();
            prop_assert!((got.re - re).abs() < 1e-9 && (got.im - im).abs() < 1e-9);
        }

        #[test]
        fn positive_sequence_is_linear(a in arb_phasor(), b in arb_phasor(), c in arb_phasor(), k in -5.0f64..5.0) {
            let scale = |p: Phasor| Phasor::from_complex(p.to_complex() * k);
            let lhs = positive_sequence(scale(a), scale(b), scale(c)).to_complex();
            let rhs = positive_sequence(a, b, c).to_complex() * k;
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }

        #[test]
        fn orientation_negates_exactly(v in arb_phasor(), i in arb_phasor()) {
            prop_assert_eq!(
                compute_q(v, i, Orientation::OutOfDevice),
                -compute_q(v, i, Orientation::IntoDevice)
            );
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{probe_dqdv, GainTuneError, ProbeConfig, Result};
use crate::simcore::{GridEquivalent, StatcomParams};

/// Extrapolation reach past the table ends, as a fraction of the end dQ/dV.
const EXTRAPOLATION_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPoint {
    pub l_henry: f64,
    /// GVAR per pu.
    pub dqdv: f64,
    pub gain: f64,
}

/// Calibration nodes sorted by reactance. Both dQ/dV and gain fall strictly
/// as reactance grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct CalibrationTable {
    points: Vec<CalibrationPoint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    points: Vec<CalibrationPoint>,
}

impl TryFrom<RawTable> for CalibrationTable {
    type Error = GainTuneError;
    fn try_from(raw: RawTable) -> Result<Self> {
        Self::new(raw.points)
    }
}

impl From<CalibrationTable> for RawTable {
    fn from(t: CalibrationTable) -> Self {
        RawTable { points: t.points }
    }
}

impl CalibrationTable {
    pub fn new(points: Vec<CalibrationPoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(GainTuneError::InvalidTable(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        for pt in &points {
            let ok = [pt.l_henry, pt.dqdv, pt.gain]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0);
            if !ok {
                return Err(GainTuneError::InvalidTable(format!(
                    "non-positive value in {pt:?}"
                )));
            }
        }
        for w in points.windows(2) {
            if !(w[1].l_henry > w[0].l_henry) {
                return Err(GainTuneError::InvalidTable(
                    "points must be sorted by strictly increasing l_henry".into(),
                ));
            }
            if !(w[1].dqdv < w[0].dqdv && w[1].gain < w[0].gain) {
                return Err(GainTuneError::NonMonotonic(format!(
                    "dqdv and gain must fall between L = {} and L = {}",
                    w[0].l_henry, w[1].l_henry
                )));
            }
        }
        Ok(Self { points })
    }

    /// The reference three-point vendor calibration at 230 kV / 60 Hz.
    pub fn reference() -> Self {
        Self::new(vec![
            CalibrationPoint {
                l_henry: 0.01,
                dqdv: 14.3,
                gain: 23.35,
            },
            CalibrationPoint {
                l_henry: 0.02,
                dqdv: 7.0,
                gain: 16.25,
            },
            CalibrationPoint {
                l_henry: 0.025,
                dqdv: 5.342857143,
                gain: 14.06,
            },
        ])
        .expect("reference table is valid")
    }

    pub fn points(&self) -> &[CalibrationPoint] {
        &self.points
    }

    pub fn l_span(&self) -> (f64, f64) {
        (
            self.points[0].l_henry,
            self.points[self.points.len() - 1].l_henry,
        )
    }

    pub fn from_json(doc: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn lagrange3(xs: [f64; 3], ys: [f64; 3], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        let mut w = 1.0;
        for j in 0..3 {
            if i != j {
                w *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += w * ys[i];
    }
    acc
}

/// Gain for a measured dQ/dV: quadratic through the three nodes nearest in
/// dQ/dV. Past the table ends the end quadratic is extrapolated up to 25% of
/// the end dQ/dV and held beyond; an extrapolation that turns back against
/// the table's trend falls back to the end-node gain.
pub fn gain_from_dqdv(dqdv: f64, table: &CalibrationTable) -> f64 {
    // Ascending dQ/dV order.
    let nodes: Vec<&CalibrationPoint> = table.points.iter().rev().collect();
    let n = nodes.len();
    let lo = nodes[0].dqdv;
    let hi = nodes[n - 1].dqdv;

    let x = if dqdv < lo {
        let floor = lo * (1.0 - EXTRAPOLATION_MARGIN);
        log::warn!("dQ/dV {dqdv:.4} below calibrated span [{lo:.4}, {hi:.4}]; extrapolating");
        dqdv.max(floor)
    } else if dqdv > hi {
        let ceil = hi * (1.0 + EXTRAPOLATION_MARGIN);
        log::warn!("dQ/dV {dqdv:.4} above calibrated span [{lo:.4}, {hi:.4}]; extrapolating");
        dqdv.min(ceil)
    } else {
        dqdv
    };

    let nearest = nodes
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.dqdv - x).abs().total_cmp(&(b.1.dqdv - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let start = nearest.saturating_sub(1).min(n - 3);
    let w = &nodes[start..start + 3];
    let g = lagrange3(
        [w[0].dqdv, w[1].dqdv, w[2].dqdv],
        [w[0].gain, w[1].gain, w[2].gain],
        x,
    );

    if x < lo && !(g > 0.0 && g <= nodes[0].gain) {
        return nodes[0].gain;
    }
    if x > hi && !(g >= nodes[n - 1].gain) {
        return nodes[n - 1].gain;
    }
    g
}

/// Probes each distinct reactance (in parallel) and assigns the gain the
/// `vendor` table schedules for it.
pub fn calibrate(
    l_values: &[f64],
    p: &StatcomParams,
    cfg: &ProbeConfig,
    vendor: &CalibrationTable,
    v_base_kv: f64,
    f0: f64,
) -> Result<CalibrationTable> {
    let mut ls: Vec<f64> = l_values.to_vec();
    if let Some(bad) = ls.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(GainTuneError::InvalidConfig(format!(
            "reactance must be positive, got {bad}"
        )));
    }
    ls.sort_by(f64::total_cmp);
    ls.dedup();
    if ls.len() < 3 {
        return Err(GainTuneError::TooFewPoints {
            needed: 3,
            got: ls.len(),
        });
    }

    let probes: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ls
            .iter()
            .map(|&l| {
                scope.spawn(move || {
                    let g = GridEquivalent::thevenin(l, 1.0).with_base(v_base_kv, f0);
                    probe_dqdv(p, &g, cfg)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("probe thread panicked"))
            .collect()
    });

    let mut points = Vec::with_capacity(ls.len());
    for (l, dqdv) in ls.iter().zip(probes) {
        let dqdv = dqdv?;
        points.push(CalibrationPoint {
            l_henry: *l,
            dqdv,
            gain: gain_from_dqdv(dqdv, vendor),
        });
    }
    CalibrationTable::new(points)
}

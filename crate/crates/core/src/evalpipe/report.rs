use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SeriesMetrics;
use crate::simcore::GainEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub station_id: String,
    #[serde(flatten)]
    pub metrics: SeriesMetrics,
    /// Reactance estimated from the EMS gain, H.
    pub estimated_l: f64,
    /// dQ/dV read by the prelude probe, GVAR per pu.
    pub probed_dqdv: f64,
    pub gain_trace: Vec<GainEvent>,
    pub nrmse_max: f64,
    pub maxq_rel_max: f64,
    pub verdict: Verdict,
    /// Seconds from the recording start, window centres.
    pub t: Vec<f64>,
    pub q_meas: Vec<f64>,
    pub q_sim: Vec<f64>,
}

impl EvaluationReport {
    pub fn from_json(doc: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub fn render_report(rep: &EvaluationReport, fmt: ReportFormat) -> String {
    match fmt {
        ReportFormat::Json => serde_json::to_string_pretty(rep).expect("report serializes"),
        ReportFormat::Csv => {
            let mut out = String::from("t,q_meas,q_sim\n");
            for k in 0..rep.t.len() {
                let _ = writeln!(out, "{},{},{}", rep.t[k], rep.q_meas[k], rep.q_sim[k]);
            }
            out
        }
        ReportFormat::Svg => render_svg(rep),
    }
}

const W: f64 = 900.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 2000;

fn render_svg(rep: &EvaluationReport) -> String {
    let n = rep.t.len();
    let (t0, t1) = match (rep.t.first(), rep.t.last()) {
        (Some(a), Some(b)) if b > a => (*a, *b),
        (Some(a), _) => (*a, *a + 1.0),
        _ => (0.0, 1.0),
    };
    let mut qmin = rep
        .q_meas
        .iter()
        .chain(&rep.q_sim)
        .fold(f64::INFINITY, |m, v| m.min(*v));
    let mut qmax = rep
        .q_meas
        .iter()
        .chain(&rep.q_sim)
        .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if !(qmin.is_finite() && qmax.is_finite()) || qmax - qmin < 1.0 {
        let mid = if qmin.is_finite() {
            0.5 * (qmin + qmax)
        } else {
            0.0
        };
        qmin = mid - 1.0;
        qmax = mid + 1.0;
    }
    let pad = 0.05 * (qmax - qmin);
    let (qmin, qmax) = (qmin - pad, qmax + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |t: f64| LEFT + (t - t0) / (t1 - t0) * pw;
    let y = |q: f64| TOP + (qmax - q) / (qmax - qmin) * ph;
    let stride = n.div_ceil(MAX_POINTS).max(1);
    let polyline = |q: &[f64]| {
        let mut pts = String::new();
        for k in (0..n).step_by(stride).chain(n.checked_sub(1)) {
            let _ = write!(pts, "{:.2},{:.2} ", x(rep.t[k]), y(q[k]));
        }
        pts
    };

    let (banner, colour) = match rep.verdict {
        Verdict::Pass => ("PASS", "#1a7f37"),
        Verdict::Fail => ("FAIL", "#cf222e"),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{W}" height="34" fill="{colour}"/><text x="12" y="23" fill="white" font-size="18" font-weight="bold">{banner}</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="90" y="23" fill="white" font-size="13">{} | nRMSE {:.4} | max Q meas {:.2} / sim {:.2} MVAR | r {:.4}</text>"#,
        xml_escape(&rep.station_id),
        rep.metrics.nrmse,
        rep.metrics.max_q_meas,
        rep.metrics.max_q_sim,
        rep.metrics.pearson_r
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##
    );
    for i in 0..=4 {
        let q = qmin + (qmax - qmin) * i as f64 / 4.0;
        let t = t0 + (t1 - t0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{q:.1}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.3}</text>"##,
            LEFT - 6.0,
            y(q) + 4.0,
            x(t),
            H - BOTTOM + 18.0
        );
    }
    if qmin < 0.0 && qmax > 0.0 {
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#ccc"/>"##,
            y(0.0),
            LEFT + pw
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">time (s)</text><text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">Q (MVAR)</text>"##,
        LEFT + pw / 2.0,
        H - 12.0,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    if n > 0 {
        let _ = writeln!(
            s,
            r##"<polyline id="q_meas" fill="none" stroke="#0969da" stroke-width="1.5" points="{}"/>"##,
            polyline(&rep.q_meas)
        );
        let _ = writeln!(
            s,
            r##"<polyline id="q_sim" fill="none" stroke="#d1242f" stroke-width="1.2" stroke-dasharray="5,3" points="{}"/>"##,
            polyline(&rep.q_sim)
        );
    }
    let _ = writeln!(
        s,
        r##"<g transform="translate({:.1},{:.1})"><line x1="0" y1="0" x2="24" y2="0" stroke="#0969da" stroke-width="1.5"/><text x="30" y="4">Q measured</text><line x1="0" y1="16" x2="24" y2="16" stroke="#d1242f" stroke-dasharray="5,3"/><text x="30" y="20">Q simulated</text></g>"##,
        W - RIGHT - 130.0,
        TOP + 14.0
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

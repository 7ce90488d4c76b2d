use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CalibrationTable, GainTuneError, Result};

/// Reactance search interval for inversion, H.
pub const DEFAULT_BRACKET: (f64, f64) = (0.005, 0.05);

/// Gains above this are outside the fitted relationship's useful region.
pub const GAIN_CEILING: f64 = 25.0;

const GRID: usize = 4000;

/// Least-squares polynomial gain(L), stored in the normalised abscissa
/// `(L - center) / scale` with ascending coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyFit {
    pub center: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
    pub degree: usize,
    pub residual_rms: f64,
    /// Gains invertible on the monotone branch holding the calibration span.
    pub valid_gain_range: (f64, f64),
    pub l_span: (f64, f64),
}

impl PolyFit {
    pub fn eval(&self, l: f64) -> f64 {
        let x = (l - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// d gain / d L.
    pub fn slope(&self, l: f64) -> f64 {
        let x = (l - self.center) / self.scale;
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + k as f64 * c;
        }
        acc / self.scale
    }

    pub fn from_json(doc: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }

    /// Largest interval inside `bracket` that holds the calibration span and
    /// on which the polynomial is strictly monotone.
    fn monotone_branch(&self, bracket: (f64, f64)) -> Result<(f64, f64)> {
        let (lo, hi) = bracket;
        let (s0, s1) = self.l_span;
        if !(lo <= s0 && s1 <= hi) {
            return Err(GainTuneError::NotMonotone);
        }
        let sign = self.slope(0.5 * (s0 + s1)).signum();
        if sign == 0.0 {
            return Err(GainTuneError::NotMonotone);
        }
        let same = |l: f64| self.slope(l) * sign > 0.0;
        let step = (hi - lo) / GRID as f64;
        // Walk outward from the span to the first slope sign change.
        let edge = |from: f64, to: f64| -> f64 {
            let dir = (to - from).signum();
            let mut a = from;
            loop {
                let b = a + dir * step;
                if (b - to) * dir >= 0.0 {
                    return if same(to) { to } else { refine(&same, a, to) };
                }
                if !same(b) {
                    return refine(&same, a, b);
                }
                a = b;
            }
        };
        let mut inner = s0;
        while inner < s1 {
            if !same(inner) {
                return Err(GainTuneError::NotMonotone);
            }
            inner += step;
        }
        if !same(s1) {
            return Err(GainTuneError::NotMonotone);
        }
        Ok((edge(s0, lo), edge(s1, hi)))
    }
}

/// Bisects between `good` (predicate true) and `bad` to the last good point.
fn refine(pred: &impl Fn(f64) -> bool, mut good: f64, mut bad: f64) -> f64 {
    for _ in 0..80 {
        let mid = 0.5 * (good + bad);
        if pred(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

pub fn fit_gain_reactance(table: &CalibrationTable, degree: usize) -> Result<PolyFit> {
    if degree < 1 {
        return Err(GainTuneError::InvalidConfig(
            "degree must be at least 1".into(),
        ));
    }
    let pts = table.points();
    if pts.len() < degree + 1 {
        return Err(GainTuneError::TooFewPoints {
            needed: degree + 1,
            got: pts.len(),
        });
    }
    let ls: Vec<f64> = pts.iter().map(|p| p.l_henry).collect();
    let gains: Vec<f64> = pts.iter().map(|p| p.gain).collect();
    let (l0, l1) = table.l_span();
    let center = 0.5 * (l0 + l1);
    let scale = 0.5 * (l1 - l0);
    let distinct = ls.windows(2).filter(|w| w[1] - w[0] > 1e-9 * scale).count() + 1;
    if !(scale > 0.0) || distinct < degree + 1 {
        return Err(GainTuneError::IllConditioned(format!(
            "{distinct} distinct abscissae for degree {degree}"
        )));
    }

    let n = ls.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| {
        ((ls[i] - center) / scale).powi(j as i32)
    });
    let b = DVector::from_column_slice(&gains);
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let cond = sv.max() / sv.min();
    if !(cond.is_finite() && cond < 1e10) {
        return Err(GainTuneError::IllConditioned(format!(
            "condition number {cond:.3e}"
        )));
    }
    let coeffs = svd
        .solve(&b, 1e-14)
        .map_err(|e| GainTuneError::IllConditioned(e.to_string()))?;
    let resid = &a * &coeffs - &b;
    let residual_rms = (resid.norm_squared() / n as f64).sqrt();

    let mut fit = PolyFit {
        center,
        scale,
        coeffs: coeffs.iter().copied().collect(),
        degree,
        residual_rms,
        valid_gain_range: (0.0, 0.0),
        l_span: (l0, l1),
    };
    let (a_l, b_l) = fit.monotone_branch(DEFAULT_BRACKET)?;
    let (ga, gb) = (fit.eval(a_l), fit.eval(b_l));
    fit.valid_gain_range = (ga.min(gb).max(0.0), ga.max(gb).min(GAIN_CEILING));
    Ok(fit)
}

/// Reactance whose fitted gain equals `gain`, on the monotone branch that
/// contains the calibration span, to within 1e-9 H.
pub fn reactance_from_gain(gain: f64, fit: &PolyFit, bracket: (f64, f64)) -> Result<f64> {
    let (gmin, gmax) = fit.valid_gain_range;
    if !(gain >= gmin && gain <= gmax) {
        return Err(GainTuneError::GainOutOfRange {
            gain,
            min: gmin,
            max: gmax,
        });
    }
    let (mut a, mut b) = fit.monotone_branch(bracket)?;
    let (fa, fb) = (fit.eval(a) - gain, fit.eval(b) - gain);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(GainTuneError::NoRootInBracket {
            gain,
            lo: bracket.0,
            hi: bracket.1,
        });
    }
    let sa = fa.signum();
    while b - a > 1e-12 {
        let m = 0.5 * (a + b);
        let fm = fit.eval(m) - gain;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

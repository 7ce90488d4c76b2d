use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// Denominator floor for normalised errors, MVAR.
const Q_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub rmse: f64,
    /// RMSE over the peak measured magnitude.
    pub nrmse: f64,
    pub pearson_r: f64,
    /// Peak magnitudes.
    pub max_q_meas: f64,
    pub max_q_sim: f64,
    pub max_q_abs_diff: f64,
    pub max_q_rel_diff: f64,
    /// Largest pointwise |q_sim - q_meas|.
    pub max_pointwise_diff: f64,
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    match (saa > 0.0, sbb > 0.0) {
        (true, true) => (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        // Two flat traces agree perfectly in shape; one flat trace carries
        // no correlation.
        (false, false) => 1.0,
        _ => 0.0,
    }
}

pub fn compare_series(q_meas: &[f64], q_sim: &[f64]) -> Result<SeriesMetrics> {
    if q_meas.len() != q_sim.len() {
        return Err(EvalError::LengthMismatch {
            meas: q_meas.len(),
            sim: q_sim.len(),
        });
    }
    if q_meas.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let n = q_meas.len() as f64;
    let mut sq = 0.0;
    let mut max_pointwise_diff = 0.0f64;
    for (m, s) in q_meas.iter().zip(q_sim) {
        let d = s - m;
        sq += d * d;
        max_pointwise_diff = max_pointwise_diff.max(d.abs());
    }
    let rmse = (sq / n).sqrt();
    let max_q_meas = peak(q_meas);
    let max_q_sim = peak(q_sim);
    let max_q_abs_diff = (max_q_sim - max_q_meas).abs();
    Ok(SeriesMetrics {
        rmse,
        nrmse: rmse / max_q_meas.max(Q_FLOOR),
        pearson_r: pearson(q_meas, q_sim),
        max_q_meas,
        max_q_sim,
        max_q_abs_diff,
        max_q_rel_diff: max_q_abs_diff / max_q_meas.max(Q_FLOOR),
        max_pointwise_diff,
    })
}

/// Linear interpolation of `(t_src, v_src)` at `t_dst`, held at the ends.
/// `t_src` must be ascending.
pub fn resample_linear(t_src: &[f64], v_src: &[f64], t_dst: &[f64]) -> Result<Vec<f64>> {
    if t_src.len() != v_src.len() {
        return Err(EvalError::LengthMismatch {
            meas: t_src.len(),
            sim: v_src.len(),
        });
    }
    if t_src.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let last = t_src.len() - 1;
    Ok(t_dst
        .iter()
        .map(|&t| {
            if t <= t_src[0] {
                return v_src[0];
            }
            if t >= t_src[last] {
                return v_src[last];
            }
            let i = t_src.partition_point(|x| *x <= t) - 1;
            let w = (t - t_src[i]) / (t_src[i + 1] - t_src[i]);
            v_src[i] + w * (v_src[i + 1] - v_src[i])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_offset() {
        let q = [0.0, 5.0, 20.0, -3.0];
        let m = compare_series(&q, &q).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!((m.pearson_r - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = q.iter().map(|v| v + 10.0).collect();
        let m = compare_series(&q, &shifted).unwrap();
        assert!((m.rmse - 10.0).abs() < 1e-12);
        assert!((m.pearson_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_arithmetic() {
        let m = compare_series(&[0.0, 10.0, 20.0], &[0.0, 12.0, 18.0]).unwrap();
        assert!((m.rmse - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(m.max_pointwise_diff, 2.0);
        assert_eq!(m.max_q_abs_diff, 2.0);
        assert!((m.nrmse - 1.632993 / 20.0).abs() < 1e-6);
    }

    #[test]
    fn peak_format() {
        let m = compare_series(&[0.0, 153.53], &[0.0, 154.77]).unwrap();
        assert!((m.max_q_rel_diff - 0.0081).abs() < 5e-5);
    }

    #[test]
    fn flat_series_correlation() {
        assert_eq!(compare_series(&[1.0; 4], &[1.0; 4]).unwrap().pearson_r, 1.0);
        assert_eq!(
            compare_series(&[1.0; 3], &[1.0, 2.0, 3.0])
                .unwrap()
                .pearson_r,
            0.0
        );
    }

    #[test]
    fn length_errors() {
        assert!(matches!(
            compare_series(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { meas: 1, sim: 2 })
        ));
        assert!(matches!(
            compare_series(&[], &[]),
            Err(EvalError::EmptySeries)
        ));
    }

    #[test]
    fn resample() {
        let r =
            resample_linear(&[0.0, 1.0, 2.0], &[0.0, 10.0, 0.0], &[-1.0, 0.25, 1.5, 3.0]).unwrap();
        assert_eq!(r, vec![0.0, 2.5, 5.0, 0.0]);
    }

    proptest! {
        #[test]
        fn bounds(a in prop::collection::vec(-200.0f64..200.0, 2..50), noise in prop::collection::vec(-20.0f64..20.0, 50)) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| x + n).collect();
            let m = compare_series(&a, &b).unwrap();
            prop_assert!(m.nrmse >= 0.0);
            prop_assert!(m.pearson_r.abs() <= 1.0);
            prop_assert!(m.rmse <= m.max_pointwise_diff + 1e-12);
        }
    }
}

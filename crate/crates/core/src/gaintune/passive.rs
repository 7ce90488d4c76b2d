use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PassiveConfig {
    pub gain_default: f64,
    /// Consecutive first-difference sign reversals that count as oscillation.
    pub reversal_count: usize,
    pub step_frac: f64,
    pub floor_frac: f64,
    /// Detection window length.
    pub window_s: f64,
    pub restore_after_s: f64,
}

impl Default for PassiveConfig {
    fn default() -> Self {
        Self {
            gain_default: 12.75,
            reversal_count: 5,
            step_frac: 0.2,
            floor_frac: 0.4,
            window_s: 0.5,
            restore_after_s: 5.0,
        }
    }
}

/// Steps `gain` down once per detection window in which the signal (e.g. the
/// converter current command) reverses direction `reversal_count` times in a
/// row; restores the default after `restore_after_s` without a trigger. The
/// result stays within `[gain_default * floor_frac, gain_default]`.
pub fn passive_gain_adjust(signal: &[f64], dt: f64, gain: f64, cfg: &PassiveConfig) -> f64 {
    let floor = cfg.gain_default * cfg.floor_frac;
    let mut g = gain.clamp(floor, cfg.gain_default);
    if signal.len() < 3 || !(dt > 0.0) {
        return g;
    }
    let window = ((cfg.window_s / dt).round() as usize).max(2);
    let restore = (cfg.restore_after_s / dt).round() as usize;

    let mut quiet = 0usize;
    let mut run = 0usize;
    let mut last_sign = 0.0f64;
    let mut triggered = false;
    for (k, w) in signal.windows(2).enumerate() {
        if k % window == 0 {
            run = 0;
            triggered = false;
        }
        let sign = (w[1] - w[0]).signum();
        if w[1] != w[0] {
            if last_sign != 0.0 && sign != last_sign {
                run += 1;
            } else {
                run = 0;
            }
            last_sign = sign;
        }
        if run >= cfg.reversal_count && !triggered {
            triggered = true;
            quiet = 0;
            g = (g * (1.0 - cfg.step_frac)).max(floor);
        } else {
            quiet += 1;
            if quiet >= restore && g != cfg.gain_default {
                g = cfg.gain_default;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 1.0 / 9600.0;

    #[test]
    fn monotone_signal_leaves_gain() {
        let sig: Vec<f64> = (0..100).map(f64::from).collect();
        let cfg = PassiveConfig::default();
        assert_eq!(passive_gain_adjust(&sig, DT, 12.75, &cfg), 12.75);
        assert_eq!(passive_gain_adjust(&sig, DT, 10.0, &cfg), 10.0);
    }

    #[test]
    fn six_reversals_step_once() {
        let sig = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let cfg = PassiveConfig::default();
        assert!((passive_gain_adjust(&sig, DT, 12.75, &cfg) - 12.75 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn sustained_oscillation_floors() {
        let sig: Vec<f64> = (0..96_00)
            .map(|k| if k % 2 == 0 { 0.0 } else { 1.0 })
            .collect();
        let cfg = PassiveConfig {
            window_s: 0.05,
            ..PassiveConfig::default()
        };
        assert_eq!(passive_gain_adjust(&sig, DT, 12.75, &cfg), 12.75 * 0.4);
    }

    #[test]
    fn quiet_period_restores_default() {
        let mut sig = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        sig.extend(std::iter::repeat_n(1.0, 6 * 9600));
        let cfg = PassiveConfig::default();
        assert_eq!(passive_gain_adjust(&sig, DT, 12.75, &cfg), 12.75);
    }

    proptest! {
        #[test]
        fn bounded(sig in prop::collection::vec(-1.0f64..1.0, 0..400), gain in 0.0f64..40.0) {
            let cfg = PassiveConfig { window_s: 0.002, restore_after_s: 0.02, ..PassiveConfig::default() };
            let g = passive_gain_adjust(&sig, DT, gain, &cfg);
            prop_assert!(g <= cfg.gain_default);
            prop_assert!(g >= cfg.gain_default * cfg.floor_frac);
        }
    }
}

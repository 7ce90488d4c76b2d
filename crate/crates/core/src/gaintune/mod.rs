//! Short-circuit-level probing and gain scheduling: the dQ/dV probe, the
//! dQ/dV to gain lookup, the reactance calibration sweep with its polynomial
//! fit and inverse, and the passive oscillation-triggered gain reduction.

mod fit;
mod passive;
mod probe;
mod table;

pub use fit::{fit_gain_reactance, reactance_from_gain, PolyFit, DEFAULT_BRACKET, GAIN_CEILING};
pub use passive::{passive_gain_adjust, PassiveConfig};
pub use probe::{auto_gain_adjust, probe_dqdv, probe_dqdv_from, AutoGainHook, ProbeConfig};
pub use table::{calibrate, gain_from_dqdv, CalibrationPoint, CalibrationTable};

use thiserror::Error;

use crate::simcore::SimError;

#[derive(Debug, Error)]
pub enum GainTuneError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("probe requires a Thevenin grid")]
    NotThevenin,
    #[error("system not settled before probing: |dV/dt| = {rate:.3e} pu/s exceeds {tol:.3e}")]
    NotSettled { rate: f64, tol: f64 },
    #[error("probe produced no measurable voltage change")]
    ZeroDeltaV,
    #[error("invalid calibration table: {0}")]
    InvalidTable(String),
    #[error("calibration sweep is not monotone: {0}")]
    NonMonotonic(String),
    #[error("need at least {needed} distinct points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("least-squares system is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("gain {gain} outside the valid range [{min:.4}, {max:.4}]")]
    GainOutOfRange { gain: f64, min: f64, max: f64 },
    #[error("no reactance in [{lo}, {hi}] H yields gain {gain}")]
    NoRootInBracket { gain: f64, lo: f64, hi: f64 },
    #[error("fit is not monotone over its calibration span")]
    NotMonotone,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = GainTuneError> = std::result::Result<T, E>;

//! Fault-recorder waveform sets: the in-memory [`Recording`], the ASCII
//! cfg/dat reader and writer, one-cycle phasor extraction, symmetrical
//! components and reactive-power computation.

mod comtrade;
mod phasor;
mod prelude;

pub use comtrade::{parse_comtrade, write_comtrade};
pub use phasor::{
    compute_q, extract_phasors, positive_sequence, Orientation, Phasor, PhasorSeries,
};
pub use prelude::{prepend_prelude, PreludeSpec};

use std::collections::HashSet;
use std::fmt;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default fault-recorder sampling rate in samples per second.
pub const DEFAULT_SAMPLE_RATE: f64 = 9600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordsError {
    #[error("malformed cfg line {line}: {reason}")]
    MalformedConfig { line: usize, reason: String },
    #[error("malformed dat row {row}: {reason}")]
    MalformedData { row: usize, reason: String },
    #[error("dat row {row} carries {found} values, cfg declares {expected}")]
    ChannelCountMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample count mismatch: {0}")]
    SampleCountMismatch(String),
    #[error("recording has no channels")]
    EmptyRecording,
    #[error("channel `{0}` not found")]
    ChannelNotFound(String),
    #[error("sample rate {sample_rate} Hz is not an integer multiple of {fundamental_hz} Hz")]
    IncommensurateRate {
        sample_rate: f64,
        fundamental_hz: f64,
    },
    #[error("recording lacks a kV channel for each of phases A, B and C")]
    MissingPhaseChannels,
    #[error("invalid recording: {0}")]
    Invalid(String),
}

pub type Result<T, E = RecordsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "kV")]
    KiloVolt,
    #[serde(rename = "kA")]
    KiloAmp,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::KiloVolt => "kV",
            Unit::KiloAmp => "kA",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseTag {
    A,
    B,
    C,
    #[serde(rename = "none")]
    None,
}

impl PhaseTag {
    pub const ABC: [PhaseTag; 3] = [PhaseTag::A, PhaseTag::B, PhaseTag::C];

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::A => "A",
            PhaseTag::B => "B",
            PhaseTag::C => "C",
            PhaseTag::None => "",
        }
    }
}

/// One analog channel of instantaneous samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogChannel {
    pub name: String,
    pub unit: Unit,
    pub phase: PhaseTag,
    pub values: Vec<f64>,
}

impl AnalogChannel {
    pub fn new(name: impl Into<String>, unit: Unit, phase: PhaseTag, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            unit,
            phase,
            values,
        }
    }
}

/// A multi-channel sampled waveform set captured at the point of
/// interconnection.
///
/// Construct through [`Recording::new`], which enforces the shape
/// invariants: at least one channel, equal channel lengths, unique names and
/// a positive sample rate. Fields are read-only afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    station_id: String,
    sample_rate: f64,
    line_freq_hz: f64,
    start_time: NaiveDateTime,
    channels: Vec<AnalogChannel>,
    n_samples: usize,
}

impl Recording {
    pub fn new(
        station_id: impl Into<String>,
        sample_rate: f64,
        line_freq_hz: f64,
        start_time: NaiveDateTime,
        channels: Vec<AnalogChannel>,
    ) -> Result<Self> {
        let station_id = station_id.into();
        if station_id.contains([',', '\n', '\r']) {
            return Err(RecordsError::Invalid(
                "station id must not contain commas or line breaks".into(),
            ));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(RecordsError::Invalid(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(line_freq_hz.is_finite() && line_freq_hz > 0.0) {
            return Err(RecordsError::Invalid(format!(
                "line frequency must be positive, got {line_freq_hz}"
            )));
        }
        let first = channels.first().ok_or(RecordsError::EmptyRecording)?;
        let n_samples = first.values.len();
        if n_samples == 0 {
            return Err(RecordsError::Invalid("recording has zero samples".into()));
        }
        let mut seen = HashSet::new();
        for ch in &channels {
            if ch.name.is_empty() || ch.name.contains([',', '\n', '\r']) {
                return Err(RecordsError::Invalid(format!(
                    "channel name `{}` is empty or contains a comma",
                    ch.name
                )));
            }
            if !seen.insert(ch.name.as_str()) {
                return Err(RecordsError::Invalid(format!(
                    "duplicate channel name `{}`",
                    ch.name
                )));
            }
            if ch.values.len() != n_samples {
                return Err(RecordsError::SampleCountMismatch(format!(
                    "channel `{}` has {} samples, expected {n_samples}",
                    ch.name,
                    ch.values.len()
                )));
            }
            if let Some(v) = ch.values.iter().find(|v| !v.is_finite()) {
                return Err(RecordsError::Invalid(format!(
                    "channel `{}` carries non-finite sample {v}",
                    ch.name
                )));
            }
        }
        // Held at microsecond resolution, the cfg timestamp grid.
        let start_time = start_time
            .with_nanosecond(start_time.nanosecond() / 1_000 * 1_000)
            .unwrap_or(start_time);
        Ok(Self {
            station_id,
            sample_rate,
            line_freq_hz,
            start_time,
            channels,
            n_samples,
        })
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn line_freq_hz(&self) -> f64 {
        self.line_freq_hz
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    pub fn channels(&self) -> &[AnalogChannel] {
        &self.channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate
    }

    pub fn channel(&self, name: &str) -> Result<&AnalogChannel> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| RecordsError::ChannelNotFound(name.to_string()))
    }

    /// Names of the first channel with `unit` tagged A, B and C, in phase
    /// order.
    pub fn phase_channels(&self, unit: Unit) -> Option<[&str; 3]> {
        let find = |tag: PhaseTag| {
            self.channels
                .iter()
                .find(|c| c.unit == unit && c.phase == tag)
                .map(|c| c.name.as_str())
        };
        Some([find(PhaseTag::A)?, find(PhaseTag::B)?, find(PhaseTag::C)?])
    }

    pub fn into_channels(self) -> Vec<AnalogChannel> {
        self.channels
    }
}

//! ASCII cfg/dat reader and writer (analog channels only).
//!
//! cfg grammar, one item per line:
//!
//! ```text
//! station_id[,rec_dev_id[,rev_year]]
//! N,NA[,0D]                          e.g. `6,6A`
//! idx,name,phase,unit,multiplier,offset   (N lines, idx = 1..N)
//! line_frequency_hz
//! sample_rate,end_sample
//! dd/mm/yyyy,hh:mm:ss.ffffff         first sample
//! dd/mm/yyyy,hh:mm:ss.ffffff         trigger
//! ```
//!
//! dat rows are `index,timestamp_us,v1,...,vN`. Engineering values are
//! `multiplier * raw + offset`. Units `V` and `A` are accepted and rescaled to
//! kV and kA.

use chrono::NaiveDateTime;

use super::{AnalogChannel, PhaseTag, Recording, RecordsError, Result, Unit};

const TIME_FORMAT_IN: &str = "%d/%m/%Y,%H:%M:%S%.f";
const TIME_FORMAT_OUT: &str = "%d/%m/%Y,%H:%M:%S%.6f";
const RATE_TOLERANCE: f64 = 0.01;

struct ChannelSpec {
    name: String,
    unit: Unit,
    phase: PhaseTag,
    multiplier: f64,
    offset: f64,
}

fn cfg_err(line: usize, reason: impl Into<String>) -> RecordsError {
    RecordsError::MalformedConfig {
        line,
        reason: reason.into(),
    }
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| cfg_err(line, format!("bad {what} `{}`", field.trim())))
}

fn parse_count(field: &str, suffix: char, line: usize) -> Result<usize> {
    let f = field.trim();
    let digits = f
        .strip_suffix(suffix)
        .or_else(|| f.strip_suffix(suffix.to_ascii_lowercase()))
        .ok_or_else(|| cfg_err(line, format!("expected `<n>{suffix}`, got `{f}`")))?;
    digits
        .parse()
        .map_err(|_| cfg_err(line, format!("bad channel count `{f}`")))
}

fn parse_channel(text: &str, line: usize, expected_idx: usize) -> Result<ChannelSpec> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != 6 {
        return Err(cfg_err(
            line,
            format!("channel line needs 6 fields, found {}", fields.len()),
        ));
    }
    let idx: usize = fields[0]
        .trim()
        .parse()
        .map_err(|_| cfg_err(line, format!("bad channel index `{}`", fields[0].trim())))?;
    if idx != expected_idx {
        return Err(cfg_err(
            line,
            format!("channel index {idx} out of order, expected {expected_idx}"),
        ));
    }
    let name = fields[1].trim().to_string();
    if name.is_empty() {
        return Err(cfg_err(line, "empty channel name"));
    }
    let phase = match fields[2].trim() {
        "A" | "a" => PhaseTag::A,
        "B" | "b" => PhaseTag::B,
        "C" | "c" => PhaseTag::C,
        "" | "N" | "n" | "none" => PhaseTag::None,
        other => return Err(cfg_err(line, format!("unknown phase `{other}`"))),
    };
    let mut multiplier = parse_f64(fields[4], line, "multiplier")?;
    let mut offset = parse_f64(fields[5], line, "offset")?;
    let unit = match fields[3].trim() {
        "kV" | "KV" | "kv" => Unit::KiloVolt,
        "kA" | "KA" | "ka" => Unit::KiloAmp,
        "V" | "v" | "A" | "a" => {
            multiplier *= 1e-3;
            offset *= 1e-3;
            if fields[3].trim().eq_ignore_ascii_case("v") {
                Unit::KiloVolt
            } else {
                Unit::KiloAmp
            }
        }
        other => return Err(cfg_err(line, format!("unsupported unit `{other}`"))),
    };
    Ok(ChannelSpec {
        name,
        unit,
        phase,
        multiplier,
        offset,
    })
}

/// Parses a cfg/dat pair into a [`Recording`].
pub fn parse_comtrade(cfg_text: &str, dat_text: &str) -> Result<Recording> {
    let mut lines = cfg_text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| cfg_err(0, format!("unexpected end of cfg, missing {what}")))
    };

    let (_, station_line) = next("station line")?;
    let station_id = station_line
        .split(',')
        .next()
        .unwrap_or("")
        .trim()
        .to_string();

    let (ln, counts) = next("channel count line")?;
    let fields: Vec<&str> = counts.split(',').collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(cfg_err(ln, "expected `N,NA[,0D]`"));
    }
    let total: usize = fields[0]
        .trim()
        .parse()
        .map_err(|_| cfg_err(ln, format!("bad channel total `{}`", fields[0].trim())))?;
    let analog = parse_count(fields[1], 'A', ln)?;
    let digital = match fields.get(2) {
        Some(f) => parse_count(f, 'D', ln)?,
        None => 0,
    };
    if digital != 0 {
        return Err(cfg_err(ln, "digital channels are not supported"));
    }
    if total != analog {
        return Err(cfg_err(
            ln,
            format!("channel total {total} disagrees with {analog} analog channels"),
        ));
    }
    if analog == 0 {
        return Err(RecordsError::EmptyRecording);
    }

    let mut specs = Vec::with_capacity(analog);
    for idx in 1..=analog {
        let (ln, text) = next("channel line")?;
        specs.push(parse_channel(text, ln, idx)?);
    }

    let (ln, freq) = next("frequency line")?;
    let line_freq_hz = parse_f64(freq, ln, "line frequency")?;

    let (ln, rates) = next("rates line")?;
    let fields: Vec<&str> = rates.split(',').collect();
    if fields.len() != 2 {
        return Err(cfg_err(ln, "expected `rate,endsample`"));
    }
    let sample_rate = parse_f64(fields[0], ln, "sample rate")?;
    if sample_rate <= 0.0 {
        return Err(cfg_err(ln, "sample rate must be positive"));
    }
    let end_sample: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| cfg_err(ln, format!("bad end sample `{}`", fields[1].trim())))?;

    let (ln, start) = next("start timestamp")?;
    let start_time = NaiveDateTime::parse_from_str(start, TIME_FORMAT_IN)
        .map_err(|e| cfg_err(ln, format!("bad timestamp `{start}`: {e}")))?;
    let (ln, trigger) = next("trigger timestamp")?;
    NaiveDateTime::parse_from_str(trigger, TIME_FORMAT_IN)
        .map_err(|e| cfg_err(ln, format!("bad timestamp `{trigger}`: {e}")))?;

    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(end_sample); analog];
    let mut stamps: Vec<i64> = Vec::with_capacity(end_sample);
    for (row, line) in dat_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| (i + 1, l))
    {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != analog + 2 {
            return Err(RecordsError::ChannelCountMismatch {
                row,
                expected: analog,
                found: fields.len().saturating_sub(2),
            });
        }
        let data_err = |reason: String| RecordsError::MalformedData { row, reason };
        let stamp: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| data_err(format!("bad timestamp `{}`", fields[1].trim())))?;
        if let Some(&prev) = stamps.last() {
            if stamp <= prev {
                return Err(data_err(format!(
                    "timestamp {stamp} does not advance past {prev}"
                )));
            }
        }
        stamps.push(stamp);
        for ((field, spec), column) in fields[2..].iter().zip(&specs).zip(values.iter_mut()) {
            let raw: f64 = field
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| data_err(format!("bad sample `{}`", field.trim())))?;
            column.push(spec.multiplier * raw + spec.offset);
        }
    }

    if stamps.len() != end_sample {
        return Err(RecordsError::SampleCountMismatch(format!(
            "cfg declares {end_sample} samples, dat holds {}",
            stamps.len()
        )));
    }
    if stamps.len() > 1 {
        let span_us = (stamps[stamps.len() - 1] - stamps[0]) as f64;
        let implied = (stamps.len() - 1) as f64 * 1e6 / span_us;
        if ((implied - sample_rate) / sample_rate).abs() > RATE_TOLERANCE {
            return Err(RecordsError::SampleCountMismatch(format!(
                "dat timestamps imply {implied:.3} samples/s, cfg declares {sample_rate}"
            )));
        }
    }

    let channels = specs
        .into_iter()
        .zip(values)
        .map(|(s, v)| AnalogChannel::new(s.name, s.unit, s.phase, v))
        .collect();
    Recording::new(station_id, sample_rate, line_freq_hz, start_time, channels)
}

/// Writes `rec` as a cfg/dat pair with unit multipliers and zero offsets.
///
/// Output is a pure function of the recording, so repeated writes are
/// byte-identical.
pub fn write_comtrade(rec: &Recording) -> Result<(String, String)> {
    use std::fmt::Write;

    let chans = rec.channels();
    if chans.is_empty() {
        return Err(RecordsError::EmptyRecording);
    }
    let n = chans.len();
    let mut cfg = String::new();
    let stamp = rec.start_time().format(TIME_FORMAT_OUT).to_string();
    // Writing into a String cannot fail.
    let _ = writeln!(cfg, "{},statcom-eval,1999", rec.station_id());
    let _ = writeln!(cfg, "{n},{n}A");
    for (i, ch) in chans.iter().enumerate() {
        let _ = writeln!(
            cfg,
            "{},{},{},{},1,0",
            i + 1,
            ch.name,
            ch.phase.as_str(),
            ch.unit
        );
    }
    let _ = writeln!(cfg, "{}", rec.line_freq_hz());
    let _ = writeln!(cfg, "{},{}", rec.sample_rate(), rec.n_samples());
    let _ = writeln!(cfg, "{stamp}");
    let _ = writeln!(cfg, "{stamp}");

    let mut dat = String::with_capacity(rec.n_samples() * (n + 2) * 12);
    let rate = rec.sample_rate();
    for k in 0..rec.n_samples() {
        let us = (k as f64 * 1e6 / rate).round() as i64;
        let _ = write!(dat, "{},{us}", k + 1);
        for ch in chans {
            let _ = write!(dat, ",{}", ch.values[k]);
        }
        dat.push('\n');
    }
    Ok((cfg, dat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal_cfg(mult: f64, offset: f64) -> String {
        format!(
            "SUB1,DFR,1999\n1,1A,0D\n1,VA,A,kV,{mult},{offset}\n60\n9600,2\n\
             12/03/2018,14:22:05.000000\n12/03/2018,14:22:05.000000\n"
        )
    }

    #[test]
    fn parses_minimal_file_with_scaling() {
        let (a, b) = (2.5, -0.25);
        let rec = parse_comtrade(&minimal_cfg(a, b), "1,0,1.0\n2,104,2.0\n").unwrap();
        assert_eq!(rec.n_samples(), 2);
        assert_eq!(rec.sample_rate(), 9600.0);
        assert_eq!(rec.station_id(), "SUB1");
        let ch = rec.channel("VA").unwrap();
        assert_eq!(ch.values, vec![1.0 * a + b, 2.0 * a + b]);
        assert_eq!(ch.phase, PhaseTag::A);
    }

    #[test]
    fn volts_are_rescaled_to_kilovolts() {
        let cfg = minimal_cfg(1.0, 0.0).replace(",kV,", ",V,");
        let rec = parse_comtrade(&cfg, "1,0,1000\n2,104,2000\n").unwrap();
        let ch = rec.channel("VA").unwrap();
        assert_eq!(ch.unit, Unit::KiloVolt);
        assert_eq!(ch.values, vec![1.0, 2.0]);
    }

    #[test]
    fn short_row_is_channel_count_mismatch() {
        let cfg = "S,D,1999\n3,3A\n1,VA,A,kV,1,0\n2,VB,B,kV,1,0\n3,VC,C,kV,1,0\n60\n9600,1\n\
                   01/01/2020,00:00:00.000000\n01/01/2020,00:00:00.000000\n";
        assert_eq!(
            parse_comtrade(cfg, "1,0,1.0,2.0\n"),
            Err(RecordsError::ChannelCountMismatch {
                row: 1,
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn row_count_and_rate_are_checked() {
        let cfg = minimal_cfg(1.0, 0.0);
        assert!(matches!(
            parse_comtrade(&cfg, "1,0,1.0\n"),
            Err(RecordsError::SampleCountMismatch(_))
        ));
        // 200 us spacing implies 5000 samples/s against a declared 9600.
        assert!(matches!(
            parse_comtrade(&cfg, "1,0,1.0\n2,200,2.0\n"),
            Err(RecordsError::SampleCountMismatch(_))
        ));
    }

    #[test]
    fn malformed_cfg_lines() {
        let bad_unit = minimal_cfg(1.0, 0.0).replace(",kV,", ",psi,");
        assert!(matches!(
            parse_comtrade(&bad_unit, "1,0,1\n2,104,2\n"),
            Err(RecordsError::MalformedConfig { line: 3, .. })
        ));
        let digital = minimal_cfg(1.0, 0.0).replace("1,1A,0D", "2,1A,1D");
        assert!(matches!(
            parse_comtrade(&digital, ""),
            Err(RecordsError::MalformedConfig { line: 2, .. })
        ));
        assert!(matches!(
            parse_comtrade("S\n", ""),
            Err(RecordsError::MalformedConfig { .. })
        ));
        let bad_time = minimal_cfg(1.0, 0.0).replacen("12/03/2018,14:22:05.000000", "yesterday", 1);
        assert!(matches!(
            parse_comtrade(&bad_time, "1,0,1\n2,104,2\n"),
            Err(RecordsError::MalformedConfig { line: 6, .. })
        ));
    }

    #[test]
    fn writer_emits_documented_layout() {
        let rec = parse_comtrade(&minimal_cfg(1.0, 0.0), "1,0,1.5\n2,104,-2\n").unwrap();
        let (cfg, dat) = write_comtrade(&rec).unwrap();
        assert_eq!(
            cfg,
            "SUB1,statcom-eval,1999\n1,1A\n1,VA,A,kV,1,0\n60\n9600,2\n\
             12/03/2018,14:22:05.000000\n12/03/2018,14:22:05.000000\n"
        );
        assert_eq!(dat, "1,0,1.5\n2,104,-2\n");
    }

    fn arb_recording() -> impl Strategy<Value = Recording> {
        let phases = prop_oneof![
            Just(PhaseTag::A),
            Just(PhaseTag::B),
            Just(PhaseTag::C),
            Just(PhaseTag::None)
        ];
        let unit = prop_oneof![Just(Unit::KiloVolt), Just(Unit::KiloAmp)];
        (
            1usize..6,
            1usize..40,
            prop_oneof![Just(9600.0), Just(4800.0), Just(1920.0), Just(7200.5)],
            0i64..2_000_000_000,
            0u32..1_000_000,
        )
            .prop_flat_map(move |(n_ch, n_s, rate, secs, micros)| {
                let chan = (
                    unit.clone(),
                    phases.clone(),
                    prop::collection::vec(-500.0f64..500.0, n_s),
                );
                (
                    prop::collection::vec(chan, n_ch),
                    Just(rate),
                    Just(secs),
                    Just(micros),
                )
            })
            .prop_map(|(chans, rate, secs, micros)| {
                let start = chrono::DateTime::from_timestamp(secs, micros * 1000)
                    .unwrap()
                    .naive_utc();
                let channels = chans
                    .into_iter()
                    .enumerate()
                    .map(|(i, (u, p, v))| AnalogChannel::new(format!("CH{i}"), u, p, v))
                    .collect();
                Recording::new("STN", rate, 60.0, start, channels).unwrap()
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(rec in arb_recording()) {
            let (cfg, dat) = write_comtrade(&rec).unwrap();
            let back = parse_comtrade(&cfg, &dat).unwrap();
            prop_assert_eq!(&back, &rec);
            let (cfg2, dat2) = write_comtrade(&back).unwrap();
            prop_assert_eq!(cfg, cfg2);
            prop_assert_eq!(dat, dat2);
        }
    }
}

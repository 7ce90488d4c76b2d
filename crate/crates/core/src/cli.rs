//! The `statcom-eval` command line.
//!
//! Exit codes: 0 success or PASS, 1 evaluation FAIL, 2 input error,
//! 3 internal error. Diagnostics go to stderr prefixed `error:`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::evalpipe::{
    evaluate, load_ems_settings, prepare_model, render_report, EmsSettings, EvalConfig, EvalError,
    EvaluationReport, ReportFormat, Verdict,
};
use crate::gaintune::{
    calibrate, fit_gain_reactance, gain_from_dqdv, probe_dqdv, CalibrationTable, GainTuneError,
    PolyFit,
};
use crate::records::{parse_comtrade, write_comtrade, Recording, RecordsError};
use crate::simcore::{GridEquivalent, SimError};
use crate::synthgen::{gen_event, synth_currents, synth_measured_q, EventSpec, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok = 0,
    Fail = 1,
    Input = 2,
    Internal = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            status: Status::Input,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: Status::Internal,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn sim_status(e: &SimError) -> Status {
    match e {
        SimError::InvalidParams(_) | SimError::InvalidStep(_) | SimError::StepTooLarge { .. } => {
            Status::Input
        }
        SimError::MissingPlaybackSample | SimError::Hook { .. } => Status::Internal,
    }
}

fn tune_status(e: &GainTuneError) -> Status {
    match e {
        GainTuneError::Sim(s) => sim_status(s),
        GainTuneError::NotSettled { .. }
        | GainTuneError::ZeroDeltaV
        | GainTuneError::NotThevenin => Status::Internal,
        _ => Status::Input,
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let status = match &e {
            EvalError::Schema(_)
            | EvalError::Range(_)
            | EvalError::InvalidConfig(_)
            | EvalError::Records(_) => Status::Input,
            EvalError::Sim(s) => sim_status(s),
            EvalError::Tune(t) => tune_status(t),
            EvalError::PreludeUnstable(_)
            | EvalError::LengthMismatch { .. }
            | EvalError::EmptySeries => Status::Internal,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<GainTuneError> for CliError {
    fn from(e: GainTuneError) -> Self {
        Self {
            status: tune_status(&e),
            message: e.to_string(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let status = match &e {
            SynthError::Sim(s) => sim_status(s),
            _ => Status::Input,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<RecordsError> for CliError {
    fn from(e: RecordsError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self {
            status: sim_status(&e),
            message: e.to_string(),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

/// Site and model configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub v_base_kv: f64,
    pub f0: f64,
    /// dQ/dV to gain schedule of the vendor; the reference table when absent.
    pub vendor_table: Option<CalibrationTable>,
    pub eval: EvalConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            v_base_kv: 230.0,
            f0: 60.0,
            vendor_table: None,
            eval: EvalConfig::default(),
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.v_base_kv > 0.0 && self.f0 > 0.0) {
            return Err(EvalError::InvalidConfig(
                "v_base_kv and f0 must be positive".into(),
            ));
        }
        self.eval.validate()
    }

    pub fn vendor_table(&self) -> CalibrationTable {
        self.vendor_table
            .clone()
            .unwrap_or_else(CalibrationTable::reference)
    }
}

/// Output of `calibrate`, input of `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub table: CalibrationTable,
    pub fit: PolyFit,
}

/// Jobs for `batch`. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    pub fit: PathBuf,
    #[serde(default)]
    pub settings: Option<PathBuf>,
    pub jobs: Vec<BatchJob>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchJob {
    pub recording: PathBuf,
    pub ems: PathBuf,
    pub report: PathBuf,
    #[serde(default)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "statcom-eval",
    version,
    about = "Replay fault records through a STATCOM model and score the response"
)]
pub struct Cli {
    /// More log output (repeatable); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe a reactance sweep and fit gain against reactance.
    Calibrate {
        /// Comma-separated source inductances, H.
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_negative_numbers = true
        )]
        l_values: Vec<f64>,
        #[arg(long)]
        settings: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one recording; exits 1 on FAIL.
    Evaluate {
        /// cfg or dat path, or their common stem.
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        ems: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Report path; .csv and .svg select those formats, JSON otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Generate a synthetic event as a cfg/dat pair.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Drive the currents with the model `evaluate` would build from
        /// these EMS settings (requires --fit).
        #[arg(long, requires = "fit")]
        ems: Option<PathBuf>,
        #[arg(long, requires = "ems")]
        fit: Option<PathBuf>,
        /// Writes `<out>.cfg` and `<out>.dat`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure dQ/dV at one source inductance and print the scheduled gain.
    Probe {
        #[arg(long, allow_negative_numbers = true)]
        l_henry: f64,
        #[arg(long)]
        settings: Option<PathBuf>,
    },
    /// Evaluate every job of a manifest.
    Batch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        thresholds: Thresholds,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Thresholds {
    #[arg(long)]
    pub nrmse_max: Option<f64>,
    #[arg(long)]
    pub maxq_rel_max: Option<f64>,
}

impl Thresholds {
    fn apply(&self, cfg: &mut EvalConfig) {
        if let Some(v) = self.nrmse_max {
            cfg.nrmse_max = v;
        }
        if let Some(v) = self.maxq_rel_max {
            cfg.maxq_rel_max = v;
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli.command) {
        Ok(s) => s.into(),
        Err(e) => {
            eprintln!("error: {e}");
            e.status.into()
        }
    }
}

pub fn run(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Calibrate {
            l_values,
            settings,
            degree,
            out,
        } => cmd_calibrate(&l_values, settings.as_deref(), degree, &out),
        Command::Evaluate {
            recording,
            ems,
            fit,
            settings,
            report,
            plot,
            thresholds,
        } => {
            let mut s = load_settings(settings.as_deref())?;
            thresholds.apply(&mut s.eval);
            let fit = load_fit(&fit)?;
            let rep = evaluate_one(&recording, &ems, &fit, &s)?;
            write_outputs(&rep, report.as_deref(), plot.as_deref())?;
            println!("{}", summary_line(&rep));
            Ok(verdict_status(rep.verdict))
        }
        Command::Synth {
            spec,
            settings,
            ems,
            fit,
            out,
        } => cmd_synth(
            &spec,
            settings.as_deref(),
            ems.as_deref().zip(fit.as_deref()),
            &out,
        ),
        Command::Probe { l_henry, settings } => cmd_probe(l_henry, settings.as_deref()),
        Command::Batch {
            manifest,
            jobs,
            thresholds,
        } => cmd_batch(&manifest, jobs, thresholds),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn load_settings(path: Option<&Path>) -> Result<Settings> {
    let s: Settings = match path {
        Some(p) => parse_json(p)?,
        None => Settings::default(),
    };
    s.validate()?;
    Ok(s)
}

fn load_fit(path: &Path) -> Result<FitFile> {
    parse_json(path)
}

fn load_ems(path: &Path) -> Result<EmsSettings> {
    load_ems_settings(&read_text(path)?).map_err(|e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    })
}

/// `x.cfg`, `x.dat` and `x` all name the pair `x.cfg` / `x.dat`.
fn comtrade_pair(path: &Path) -> (PathBuf, PathBuf) {
    let ext = path.extension().map(|e| e.to_ascii_lowercase());
    let stem = match ext.as_deref().and_then(|e| e.to_str()) {
        Some("cfg") | Some("dat") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |e: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(e);
        PathBuf::from(s)
    };
    (with("cfg"), with("dat"))
}

pub fn load_recording(path: &Path) -> Result<Recording> {
    let (cfg, dat) = comtrade_pair(path);
    let rec = parse_comtrade(&read_text(&cfg)?, &read_text(&dat)?)?;
    Ok(rec)
}

fn verdict_status(v: Verdict) -> Status {
    match v {
        Verdict::Pass => Status::Ok,
        Verdict::Fail => Status::Fail,
    }
}

fn summary_line(rep: &EvaluationReport) -> String {
    format!(
        "{} {} nrmse={:.4} maxq_rel={:.4} max_q_meas={:.2} max_q_sim={:.2} l_est={:.5}",
        rep.station_id,
        rep.verdict,
        rep.metrics.nrmse,
        rep.metrics.max_q_rel_diff,
        rep.metrics.max_q_meas,
        rep.metrics.max_q_sim,
        rep.estimated_l
    )
}

fn report_format(path: &Path) -> ReportFormat {
    path.extension()
        .and_then(|e| e.to_str())
        .and_then(|e| e.parse().ok())
        .unwrap_or(ReportFormat::Json)
}

fn write_outputs(rep: &EvaluationReport, report: Option<&Path>, plot: Option<&Path>) -> Result<()> {
    if let Some(p) = report {
        write_text(p, &render_report(rep, report_format(p)))?;
    }
    if let Some(p) = plot {
        write_text(p, &render_report(rep, ReportFormat::Svg))?;
    }
    Ok(())
}

fn evaluate_one(
    recording: &Path,
    ems: &Path,
    fit: &FitFile,
    s: &Settings,
) -> Result<EvaluationReport> {
    let rec = load_recording(recording)?;
    let ems = load_ems(ems)?;
    Ok(evaluate(&rec, &ems, &fit.fit, &fit.table, &s.eval)?)
}

fn cmd_calibrate(
    l_values: &[f64],
    settings: Option<&Path>,
    degree: usize,
    out: &Path,
) -> Result<Status> {
    let s = load_settings(settings)?;
    let table = calibrate(
        l_values,
        &s.eval.model,
        &s.eval.probe,
        &s.vendor_table(),
        s.v_base_kv,
        s.f0,
    )?;
    let fit = fit_gain_reactance(&table, degree)?;
    for p in table.points() {
        println!("L={:.5} dqdv={:.4} gain={:.4}", p.l_henry, p.dqdv, p.gain);
    }
    let doc = serde_json::to_string_pretty(&FitFile { table, fit })
        .map_err(|e| CliError::internal(e.to_string()))?;
    write_text(out, &(doc + "\n"))?;
    Ok(Status::Ok)
}

fn cmd_probe(l_henry: f64, settings: Option<&Path>) -> Result<Status> {
    if !(l_henry > 0.0 && l_henry.is_finite()) {
        return Err(CliError::input(format!(
            "--l-henry must be a positive inductance, got {l_henry}"
        )));
    }
    let s = load_settings(settings)?;
    let grid = GridEquivalent::thevenin(l_henry, 1.0).with_base(s.v_base_kv, s.f0);
    let dqdv = probe_dqdv(&s.eval.model, &grid, &s.eval.probe)?;
    let gain = gain_from_dqdv(dqdv, &s.vendor_table());
    println!("dqdv {dqdv:.4}");
    println!("gain {gain:.4}");
    Ok(Status::Ok)
}

fn cmd_synth(
    spec: &Path,
    settings: Option<&Path>,
    model: Option<(&Path, &Path)>,
    out: &Path,
) -> Result<Status> {
    let s = load_settings(settings)?;
    let spec: EventSpec = parse_json(spec)?;
    let voltages = gen_event(&spec)?;
    let rec = match model {
        Some((ems, fit)) => {
            let ems = load_ems(ems)?;
            let fit = load_fit(fit)?;
            let dt = 1.0 / spec.sample_rate;
            let mut prepared = prepare_model(&ems, &fit.fit, &fit.table, &s.eval, dt)?;
            synth_currents(&voltages, spec.v_base_kv, &mut prepared.simulator)?.0
        }
        None => synth_measured_q(&voltages, &s.eval.model, spec.v_base_kv)?,
    };
    let (cfg, dat) = write_comtrade(&rec)?;
    let (cfg_path, dat_path) = comtrade_pair(out);
    write_text(&cfg_path, &cfg)?;
    write_text(&dat_path, &dat)?;
    println!("{} {}", cfg_path.display(), dat_path.display());
    Ok(Status::Ok)
}

fn cmd_batch(manifest: &Path, jobs: usize, thresholds: Thresholds) -> Result<Status> {
    if jobs == 0 {
        return Err(CliError::input("--jobs must be at least 1"));
    }
    let m: BatchManifest = parse_json(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| base.join(p);
    let mut s = load_settings(m.settings.as_deref().map(resolve).as_deref())?;
    thresholds.apply(&mut s.eval);
    let fit = load_fit(&resolve(&m.fit))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<EvaluationReport>>>> =
        Mutex::new((0..m.jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(m.jobs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = m.jobs.get(k) else { break };
                let r = evaluate_one(&resolve(&job.recording), &resolve(&job.ems), &fit, &s)
                    .and_then(|rep| {
                        write_outputs(
                            &rep,
                            Some(&resolve(&job.report)),
                            job.plot.as_deref().map(resolve).as_deref(),
                        )?;
                        Ok(rep)
                    });
                results.lock().expect("results lock")[k] = Some(r);
            });
        }
    });

    let mut worst = Status::Ok;
    let results = results.into_inner().expect("results lock");
    for (job, r) in m.jobs.iter().zip(results) {
        match r.expect("every job ran") {
            Ok(rep) => {
                println!("{} {}", job.recording.display(), summary_line(&rep));
                worst = worst.max(verdict_status(rep.verdict));
            }
            Err(e) => {
                eprintln!("error: {}: {e}", job.recording.display());
                worst = worst.max(e.status);
            }
        }
    }
    Ok(worst)
}

//! Command-line front end.
//!
//! Every verb stages its outputs and moves them into `--out` only after the
//! whole command succeeded. Exit codes: 0 success, 1 configuration or input
//! validation, 2 I/O, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::Calibration;
use crate::error::{Error, Result};
use crate::evaluation::{
    emit_report, error_stats, fit_distribution, histogram, histogram_csv, ks_test, ks_test_bootstrap, reference,
    FitResult, ReportInputs, DEFAULT_SIGNIFICANCE,
};
use crate::par::{map_indexed, Execution};
use crate::reconstruction::OpCounter;
use crate::simulator::config::{is_numeric_key, resolve_key};
use crate::simulator::io::{
    estimates_from_csv, estimates_to_csv, frames_from_csv, frames_to_csv, EstimateSummary, OutputSet,
};
use crate::simulator::{calibrate, run_scenario, Frame, Pipeline, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "rti", version, about = "Detector-based radio tomographic imaging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set gamma=0.35`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        ScenarioConfig::load(&self.config, &self.overrides, self.seed)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and run the full pipeline on it.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Parametric-bootstrap replicates for the KS p-values (0 = asymptotic).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
    },
    /// Estimate baselines and fade levels from the vacant frames of a frame file.
    Calibrate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        frames: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Replay a frame file through detection, reconstruction and localization.
    Localize {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        frames: PathBuf,
        #[arg(long, value_name = "PATH")]
        calibration: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Error statistics, distribution fits and report of an estimates file.
    Evaluate {
        /// Echo this config in the report and compare against its reference experiment.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_name = "PATH")]
        estimates: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
    },
    /// Rerun a scenario for each value of one numeric parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "KEY")]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Check a config and print the resolved model parameters.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(msg) => {
            if !cli.quiet && !msg.is_empty() {
                print!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Run a parsed command; returns the text to print on success.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate { config, out, bootstrap } => simulate(&config.load()?, out, *bootstrap),
        Command::Calibrate { config, frames, out } => {
            let config = config.load()?;
            let frames = read_frames(frames, &config)?;
            let n_cal = config.calibration_frames();
            let vacant: Vec<Frame> = frames.into_iter().filter(|f| f.id < n_cal).collect();
            let cal = calibrate(&config, &vacant)?;
            let mut set = OutputSet::new();
            set.add("calibration.txt", cal.to_kv_string());
            set.commit(out)?;
            Ok(format!(
                "calibrated {} links from {} frames; {} of {} pairs usable\n",
                cal.baselines.len(),
                vacant.len(),
                cal.pair_usable.iter().filter(|u| **u).count(),
                cal.pair_usable.len()
            ))
        }
        Command::Localize {
            config,
            frames,
            calibration,
            out,
        } => {
            let config = config.load()?;
            let frames = read_frames(frames, &config)?;
            let cal = read_calibration(calibration, &config)?;
            let n_cal = config.calibration_frames();
            let first = frames.partition_point(|f| f.id < n_cal);
            let mut pipeline = Pipeline::new(&config, &cal, Execution::default())?;
            let processed = pipeline.process(&config, &frames[first..])?;
            let csv = estimates_to_csv(&processed.estimates);
            let located = processed.estimates.iter().filter(|e| e.estimate.is_some()).count();
            let mut set = OutputSet::new();
            set.add("estimates.csv", csv);
            set.add("detections.bin", processed.bitstream);
            set.commit(out)?;
            Ok(format!(
                "localized {located} of {} frames\n",
                processed.estimates.len()
            ))
        }
        Command::Evaluate {
            config,
            overrides,
            estimates,
            out,
            bootstrap,
            seed,
        } => {
            let config = match config {
                Some(p) => Some(ScenarioConfig::load(p, overrides, *seed)?),
                None if !overrides.is_empty() => {
                    return Err(Error::config("--set", "overrides need --config"));
                }
                None => None,
            };
            let text = fs::read_to_string(estimates).map_err(|e| Error::io(estimates, e))?;
            let summary = estimates_from_csv(&text, &estimates.display().to_string())?;
            let mut set = OutputSet::new();
            let seed = seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
            let mean = add_report(&mut set, config.as_ref(), &summary, None, *bootstrap, seed)?;
            set.commit(out)?;
            Ok(format!("{} errors, mean {}\n", summary.errors.len(), fmt_mean(mean)))
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => sweep(config, param, values, out),
        Command::ValidateConfig { config } => Ok(config.load()?.summary()),
    }
}

fn fmt_mean(mean: Option<f64>) -> String {
    mean.map_or_else(|| "n/a".to_string(), |m| format!("{m:.4} m"))
}

fn read_frames(path: &Path, config: &ScenarioConfig) -> Result<Vec<Frame>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    frames_from_csv(&text, &path.display().to_string(), &config.deployment)
}

fn read_calibration(path: &Path, config: &ScenarioConfig) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Calibration::from_kv_str(&text, &path.display().to_string(), &config.deployment)
}

fn simulate(config: &ScenarioConfig, out: &Path, bootstrap: usize) -> Result<String> {
    let run = run_scenario(config, Execution::default())?;
    let estimates_csv = estimates_to_csv(&run.estimates);
    let mut ops = OpCounter::default();
    for e in &run.estimates {
        ops += e.ops;
    }
    // the report reads the estimates back so it matches `evaluate` on the
    // same file
    let summary = estimates_from_csv(&estimates_csv, "estimates.csv")?;
    let mut set = OutputSet::new();
    set.add("frames.csv", frames_to_csv(&run.frames, &config.deployment));
    set.add("calibration.txt", run.calibration.to_kv_string());
    set.add("detections.bin", run.bitstream);
    set.add("estimates.csv", estimates_csv);
    for (frame, pgm) in run.snapshots {
        set.add(format!("snapshots/frame_{frame:06}.pgm"), pgm);
    }
    let mean = add_report(&mut set, Some(config), &summary, Some(ops), bootstrap, config.seed)?;
    set.commit(out)?;
    Ok(format!(
        "{}: {} frames, {} estimates, mean error {}\n",
        config.name,
        run.frames.len(),
        summary.frames_with_estimate,
        fmt_mean(mean)
    ))
}

/// Adds `report.txt`, its CSV tables and one histogram per fitted family.
/// Returns the mean error, if any.
fn add_report(
    set: &mut OutputSet,
    config: Option<&ScenarioConfig>,
    summary: &EstimateSummary,
    ops: Option<OpCounter>,
    bootstrap: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let stats = if summary.errors.is_empty() {
        None
    } else {
        Some(error_stats(&summary.errors)?)
    };
    // zero errors are outside the support of every family
    let positive: Vec<f64> = summary.errors.iter().copied().filter(|e| *e > 0.0).collect();
    let distinct = positive.windows(2).any(|w| w[0] != w[1]);
    let mut fits = Vec::new();
    if distinct {
        for family in crate::evaluation::Family::ALL {
            let fitted = fit_distribution(&positive, family)?;
            let ks = if bootstrap > 0 {
                ks_test_bootstrap(&positive, &fitted, DEFAULT_SIGNIFICANCE, bootstrap, seed, Execution::default())?
            } else {
                ks_test(&positive, &fitted, DEFAULT_SIGNIFICANCE)?
            };
            fits.push(FitResult { fitted, ks });
        }
    }
    let comparisons: Vec<_> = config
        .and_then(|c| c.report_experiment)
        .and_then(reference)
        .into_iter()
        .copied()
        .collect();
    let summary_text = config.map_or_else(String::new, ScenarioConfig::summary);
    let report = emit_report(&ReportInputs {
        config_summary: &summary_text,
        frames: summary.frames,
        frames_with_object: summary.frames_with_object,
        frames_with_estimate: summary.frames_with_estimate,
        stats,
        fits: &fits,
        significance: DEFAULT_SIGNIFICANCE,
        ops,
        comparisons: &comparisons,
    });
    set.add("report.txt", report.text);
    for (name, csv) in report.tables {
        set.add(name, csv);
    }
    if !positive.is_empty() {
        let bins = histogram(&positive)?;
        for f in &fits {
            set.add(format!("histogram_{}.csv", f.fitted.family().name()), histogram_csv(&bins, &f.fitted));
        }
    }
    Ok(stats.map(|s| s.mean))
}

pub const SWEEP_HEADER: &str = "parameter,value,mean_error_m,variance_m2,skewness,detection_rate,additions,mean_support_pixels,threshold_min_db,threshold_max_db";

#[derive(Debug, Clone, Copy, PartialEq)]
struct SweepRow {
    mean: Option<f64>,
    variance: Option<f64>,
    skewness: Option<f64>,
    detection_rate: f64,
    additions: u64,
    mean_support: Option<f64>,
    threshold_min: f64,
    threshold_max: f64,
}

fn sweep_point(config: &ScenarioConfig) -> Result<SweepRow> {
    let run = run_scenario(config, Execution::Sequential)?;
    let errors: Vec<f64> = run.estimates.iter().filter_map(|e| e.error()).collect();
    let stats = if errors.is_empty() { None } else { Some(error_stats(&errors)?) };
    let usable = run.calibration.pair_usable.iter().filter(|u| **u).count();
    // fraction of usable pairs reporting presence while the object is there
    let with_object: Vec<_> = run.estimates.iter().filter(|e| e.truth.is_some()).collect();
    let detection_rate = if with_object.is_empty() || usable == 0 {
        0.0
    } else {
        with_object.iter().map(|e| e.detecting as f64).sum::<f64>() / (with_object.len() * usable) as f64
    };
    let supports: Vec<usize> = run.estimates.iter().filter_map(|e| e.estimate.map(|p| p.support)).collect();
    let mean_support = (!supports.is_empty()).then(|| supports.iter().sum::<usize>() as f64 / supports.len() as f64);
    let detector = crate::detector::DetectorConfig::for_deployment(
        &config.deployment,
        config.gamma,
        config.eta,
        config.max_excess,
    )?;
    let threshold_min = detector.thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold_max = detector.thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepRow {
        mean: stats.map(|s| s.mean),
        variance: stats.map(|s| s.variance),
        skewness: stats.and_then(|s| s.skewness),
        detection_rate,
        additions: run.estimates.iter().map(|e| e.ops.additions).sum(),
        mean_support,
        threshold_min,
        threshold_max,
    })
}

fn sweep(args: &ConfigArgs, param: &str, values: &[String], out: &Path) -> Result<String> {
    let key = resolve_key(param)?;
    if !is_numeric_key(&key) {
        return Err(Error::config(key, "sweeps need a numeric key"));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let v = v.trim();
        crate::kv::parse_f64(&key, v)?;
        let mut overrides = args.overrides.clone();
        overrides.push(format!("{key}={v}"));
        configs.push(ScenarioConfig::load(&args.config, &overrides, args.seed)?);
    }
    let rows = map_indexed(Execution::default(), configs.len(), |i| sweep_point(&configs[i]));
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}"));
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for (v, row) in values.iter().zip(rows) {
        let r = row?;
        let _ = writeln!(
            csv,
            "{key},{},{},{},{},{:.6},{},{},{:.6},{:.6}",
            v.trim(),
            opt(r.mean),
            opt(r.variance),
            opt(r.skewness),
            r.detection_rate,
            r.additions,
            opt(r.mean_support),
            r.threshold_min,
            r.threshold_max
        );
    }
    let mut set = OutputSet::new();
    set.add("sweep.csv", csv);
    set.commit(out)?;
    Ok(format!("swept {key} over {} values\n", values.len()))
}

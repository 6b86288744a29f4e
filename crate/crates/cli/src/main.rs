use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use whisker_cli::config::{ExperimentKind, ScenarioConfig};
use whisker_cli::csvio::read_record;
use whisker_cli::experiments::{self, ExperimentOutput};
use whisker_cli::report::{compare_to_targets, ExperimentReport};
use whisker_cli::CliError;
use whisker_core::sensor_model::DriveAxis;

#[derive(Parser)]
#[command(
    name = "whisker",
    version,
    about = "Whisker flow sensor twin: simulation, calibration and localization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Defaults to `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the metric summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Drive {
    Longitudinal,
    Transverse,
}

impl From<Drive> for DriveAxis {
    fn from(d: Drive) -> Self {
        match d {
            Drive::Longitudinal => DriveAxis::Longitudinal,
            Drive::Transverse => DriveAxis::Transverse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one tank trial and write its record CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "longitudinal")]
        drive: Drive,
        /// Longitudinal distance [mm].
        #[arg(long, default_value_t = 20.0)]
        l_mm: f64,
        /// Transverse offset [mm].
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t_mm: f64,
    },
    /// Static bending calibration.
    CalibrateStatic {
        #[command(flatten)]
        common: Common,
    },
    /// Cyclic loading drift test, simulated or from a resistance record.
    Fatigue {
        #[command(flatten)]
        common: Common,
        /// Record CSV in ohms to analyze instead of simulating.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Frequency tracking sweep.
    SweepFreq {
        #[command(flatten)]
        common: Common,
    },
    /// Amplitude against longitudinal distance.
    SweepLong {
        #[command(flatten)]
        common: Common,
    },
    /// Amplitude against transverse offset.
    SweepTrans {
        #[command(flatten)]
        common: Common,
    },
    /// Localization round trip, or localize a recorded trial with `--input`.
    Localize {
        #[command(flatten)]
        common: Common,
        /// Record CSV in volts.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Known drive axis for `--input`; both are tried when omitted.
        #[arg(long, value_enum)]
        drive: Option<Drive>,
    },
    /// Fit drag gain, coupling and noise floor to the anchor set.
    FitDefaults {
        #[command(flatten)]
        common: Common,
    },
    /// Re-check a written report.json against its targets.
    Report {
        report: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

fn load_config(common: &Common, kind: ExperimentKind, strict_kind: bool) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let cfg = ScenarioConfig::load(path)?;
            if strict_kind && cfg.experiment != kind {
                return Err(CliError::Config(format!(
                    "at `experiment`: config is for `{}`, subcommand runs `{}`",
                    cfg.experiment.name(),
                    kind.name()
                )));
            }
            cfg
        }
        None => {
            let mut cfg = ScenarioConfig::new(kind, 0);
            cfg.seed = None;
            cfg
        }
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.experiment = kind;
    Ok(cfg)
}

fn finish(cfg: &ScenarioConfig, common: &Common, output: ExperimentOutput) -> Result<bool, CliError> {
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(cfg.experiment.name()));
    let report = experiments::write_outputs(cfg, &output, &dir)?;
    Ok(summarize(&report, common.quiet, Some(&dir)))
}

fn summarize(report: &ExperimentReport, quiet: bool, dir: Option<&Path>) -> bool {
    let cmp = compare_to_targets(report);
    if !quiet {
        for line in &cmp.lines {
            println!("{line}");
        }
        if let Some(d) = dir {
            println!("wrote {} file(s) to {}", report.artifacts.len(), d.display());
        }
    }
    if !cmp.passed() {
        eprintln!("failed metrics: {}", cmp.failed.join(", "));
    }
    cmp.passed()
}

fn execute(command: Command) -> Result<bool, CliError> {
    let experiment = |common: Common, kind: ExperimentKind| -> Result<bool, CliError> {
        let cfg = load_config(&common, kind, true)?;
        let output = experiments::run(&cfg)?;
        finish(&cfg, &common, output)
    };
    match command {
        Command::Simulate {
            common,
            drive,
            l_mm,
            t_mm,
        } => {
            let kind = match drive {
                Drive::Longitudinal => ExperimentKind::LongitudinalSweep,
                Drive::Transverse => ExperimentKind::TransverseSweep,
            };
            let cfg = load_config(&common, kind, false)?;
            let output = experiments::simulate_single(&cfg, drive.into(), l_mm * 1e-3, t_mm * 1e-3)?;
            finish(&cfg, &common, output)
        }
        Command::CalibrateStatic { common } => experiment(common, ExperimentKind::StaticSweep),
        Command::Fatigue { common, input } => {
            let cfg = load_config(&common, ExperimentKind::Fatigue, true)?;
            let output = experiments::fatigue(&cfg, input.as_deref())?;
            finish(&cfg, &common, output)
        }
        Command::SweepFreq { common } => experiment(common, ExperimentKind::FreqSweep),
        Command::SweepLong { common } => experiment(common, ExperimentKind::LongitudinalSweep),
        Command::SweepTrans { common } => experiment(common, ExperimentKind::TransverseSweep),
        Command::Localize { common, input, drive } => match input {
            None => experiment(common, ExperimentKind::Localize),
            Some(path) => {
                let cfg = load_config(&common, ExperimentKind::Localize, true)?;
                let record = read_record(&path)?;
                let hypotheses: Vec<DriveAxis> = match drive {
                    Some(d) => vec![d.into()],
                    None => DriveAxis::ALL.to_vec(),
                };
                let output = experiments::localize_record(&cfg, &record, &hypotheses)?;
                finish(&cfg, &common, output)
            }
        },
        Command::FitDefaults { common } => experiment(common, ExperimentKind::FitDefaults),
        Command::Report { report, quiet } => {
            let r = ExperimentReport::load(&report)?;
            Ok(summarize(&r, quiet, None))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

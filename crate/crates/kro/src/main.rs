//! Command-line front end: train, calibrate, reach, verify, and report, all
//! driven by one experiment config. Artifacts are plain JSON in an output
//! directory, so stages can be run separately and rerun deterministically.
//!
//! Exit codes: 0 on success, 1 for configuration and file problems, 2 for
//! numerical failures at run time.

use clap::{Args, Parser, Subcommand};
use kro::boundprop::compute_krs;
use kro::conformal::inflate;
use kro::dynamics::System;
use kro::geom::IntervalBox;
use kro::harness::{self, plot, ExperimentConfig};
use kro::io;
use kro::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kro",
    version,
    about = "Koopman surrogates with LQR tracking and calibrated reach tubes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it to the output directory.
    Train(TrainArgs),
    /// Calibrate conformal error margins for a trained model.
    Calibrate(CalibrateArgs),
    /// Compute the plain and inflated reach tubes.
    Reach(ReachArgs),
    /// Estimate a tube's coverage with fresh closed-loop rollouts.
    Verify(VerifyArgs),
    /// Run the whole pipeline and write artifacts, report, and plots.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; takes precedence over the config's seed and KRO_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory artifacts are read from and written to.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model file; defaults to <out>/model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Miscoverage level override.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct ReachArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model file; defaults to <out>/model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Calibration file; defaults to <out>/calibration.json.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Reference horizon override.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model file; defaults to <out>/model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Tube file to check; defaults to <out>/ckrs.json.
    #[arg(long)]
    tube: Option<PathBuf>,
    /// Number of fresh rollouts; defaults to the config's evaluation size.
    #[arg(long)]
    rollouts: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Miscoverage level override.
    #[arg(long)]
    delta: Option<f64>,
    /// Reference horizon override.
    #[arg(long)]
    horizon: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Configuration and file problems are usage errors; failures of the
/// numerics are runtime errors.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Invalid(_) | Error::Dimension(_) | Error::Io { .. } | Error::Format { .. } => 1,
        Error::Numerical(_) | Error::Divergence(_) | Error::GimbalLock(_) => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Reach(args) => cmd_reach(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, u64)> {
    let cfg: ExperimentConfig = io::read_json(&common.config)?;
    let seed = common
        .seed
        .or(cfg.seed)
        .or_else(|| std::env::var("KRO_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    Ok((cfg, seed))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn model_path(common: &Common, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| common.out.join("model.json"))
}

/// Reference plan, gain schedule, and initial box reconstructed from the
/// config, exactly as the other stages derive them.
fn planning_artifacts(
    system: &System,
    model: &kro::koopman::KoopmanModel,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(kro::controller::ReferencePlan, kro::controller::GainSchedule, IntervalBox)> {
    let (plan, gains) = harness::plan_and_gains(system, model, cfg, seed)?;
    let x0 = IntervalBox::ball(&plan.x_ref.states[0], cfg.x0_radius)?;
    Ok((plan, gains, x0))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (cfg, seed) = load_config(&args.common)?;
    cfg.validate()?;
    let system = System::by_name(&cfg.system)?;
    let model = harness::train_model(&system, &cfg, seed)?;
    ensure_out_dir(&args.common.out)?;
    let path = args.common.out.join("model.json");
    io::write_model(&path, &model)?;
    let loss = model.meta.as_ref().map_or(f64::NAN, |m| m.final_loss);
    eprintln!("trained {} model, final loss {loss:.6}", cfg.system);
    println!("{}", path.display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let (mut cfg, seed) = load_config(&args.common)?;
    if let Some(delta) = args.delta {
        cfg.conformal.delta = delta;
    }
    cfg.validate()?;
    let system = System::by_name(&cfg.system)?;
    let model = io::read_model(&model_path(&args.common, &args.model))?;
    let (plan, gains, x0) = planning_artifacts(&system, &model, &cfg, seed)?;
    let bounds = harness::calibrate(&system, &model, &plan, &gains, &x0, &cfg, seed)?;
    if !bounds.is_bounded() {
        eprintln!(
            "warning: {} calibration samples cannot support delta = {}; margins are unbounded",
            bounds.calibration_size, bounds.delta
        );
    }
    ensure_out_dir(&args.common.out)?;
    let path = args.common.out.join("calibration.json");
    let file = io::ConformalFile::from_bounds(&bounds, &harness::config_hash(&cfg, seed));
    io::write_json(&path, &file)?;
    eprintln!(
        "calibrated margins over {} rollouts, quantile {}",
        bounds.calibration_size,
        if bounds.is_bounded() {
            format!("{:.6}", bounds.c)
        } else {
            "unbounded".to_string()
        }
    );
    println!("{}", path.display());
    Ok(())
}

fn cmd_reach(args: ReachArgs) -> Result<()> {
    let (mut cfg, seed) = load_config(&args.common)?;
    if let Some(horizon) = args.horizon {
        cfg.reference.horizon = horizon;
    }
    cfg.validate()?;
    let system = System::by_name(&cfg.system)?;
    let model = io::read_model(&model_path(&args.common, &args.model))?;
    let calibration_path = args
        .calibration
        .clone()
        .unwrap_or_else(|| args.common.out.join("calibration.json"));
    let calibration: io::ConformalFile = io::read_json(&calibration_path)?;
    if calibration.config_hash != harness::config_hash(&cfg, seed) {
        eprintln!(
            "warning: calibration in {} was computed for a different configuration",
            calibration_path.display()
        );
    }
    let bounds = calibration.to_bounds()?;
    let (plan, gains, x0) = planning_artifacts(&system, &model, &cfg, seed)?;
    let krs = compute_krs(&model, &plan, &gains, &x0)?;
    let ckrs = inflate(&krs, &bounds)?;
    if ckrs.provenance.unbounded {
        eprintln!("warning: inflated tube has unbounded faces");
    }
    ensure_out_dir(&args.common.out)?;
    for (name, tube) in [("krs", &krs), ("ckrs", &ckrs)] {
        io::write_json(
            &args.common.out.join(format!("{name}.json")),
            &io::TubeFile::from_tube(tube),
        )?;
        write_text(
            &args.common.out.join(format!("{name}.csv")),
            &io::tube_to_csv(tube),
        )?;
        println!("{}", args.common.out.join(format!("{name}.json")).display());
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let (cfg, seed) = load_config(&args.common)?;
    cfg.validate()?;
    let system = System::by_name(&cfg.system)?;
    let model = io::read_model(&model_path(&args.common, &args.model))?;
    let tube_path = args
        .tube
        .clone()
        .unwrap_or_else(|| args.common.out.join("ckrs.json"));
    let tube = io::read_json::<io::TubeFile>(&tube_path)?.to_tube()?;
    if tube.provenance.model_hash != io::model_content_hash(&model) {
        eprintln!(
            "warning: tube in {} was computed from a different model",
            tube_path.display()
        );
    }
    let (plan, gains, x0) = planning_artifacts(&system, &model, &cfg, seed)?;
    let rollouts = args
        .rollouts
        .or_else(|| cfg.evaluation.as_ref().map(|e| e.test_rollouts))
        .unwrap_or(200);
    let report = harness::evaluate_coverage(
        &system,
        &model,
        &plan,
        &gains,
        &x0,
        &tube,
        rollouts,
        harness::evaluation_seed(seed),
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::format("coverage report".to_string(), e.to_string()))?
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let (mut cfg, seed) = load_config(&args.common)?;
    if let Some(delta) = args.delta {
        cfg.conformal.delta = delta;
    }
    if let Some(horizon) = args.horizon {
        cfg.reference.horizon = horizon;
    }
    let out = harness::run_pipeline(&cfg, seed)?;
    let dir = &args.common.out;
    ensure_out_dir(dir)?;

    io::write_model(&dir.join("model.json"), &out.model)?;
    let system = System::by_name(&cfg.system)?;
    io::write_json(
        &dir.join("plan.json"),
        &io::PlanFile::from_plan(&out.plan, &out.report.model_hash, system.name(), system.dt()),
    )?;
    io::write_json(
        &dir.join("gains.json"),
        &io::GainsFile::from_gains(&out.gains, &out.report.model_hash),
    )?;
    io::write_json(
        &dir.join("calibration.json"),
        &io::ConformalFile::from_bounds(&out.bounds, &out.report.config_hash),
    )?;
    for (name, tube) in [("krs", &out.krs), ("ckrs", &out.ckrs)] {
        io::write_json(&dir.join(format!("{name}.json")), &io::TubeFile::from_tube(tube))?;
        write_text(&dir.join(format!("{name}.csv")), &io::tube_to_csv(tube))?;
    }
    io::write_json(&dir.join("report.json"), &out.report)?;
    let plots = plot::write_tube_plots(dir, &out.ckrs, Some(&out.plan.x_ref))?;

    if out.report.c_unbounded {
        eprintln!("warning: conformal margins are unbounded at this configuration");
    }
    if let Some(coverage) = &out.report.coverage {
        eprintln!(
            "coverage {}/{} = {:.3} (target {:.3})",
            coverage.successes,
            coverage.trials,
            coverage.rate,
            1.0 - out.bounds.delta
        );
    }
    eprintln!("wrote report and {} plots", plots.len());
    println!("{}", dir.join("report.json").display());
    Ok(())
}

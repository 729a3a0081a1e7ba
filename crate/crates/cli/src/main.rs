use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rs_oracle::calibration::{self, CalibrationConfig, CalibrationProfile, Grid};
use rs_oracle::experiments::{self, ExperimentConfig, DEFAULT_SERVER_COUNTS};
use rs_oracle::network::{NetworkSpec, QueueClass};
use rs_oracle::predict::{predict_rs, ParentObservation};
use rs_oracle::sim::MINUTES_PER_DAY;
use rs_oracle::simplify::{SimplificationOp, DEFAULT_KDE_BANDWIDTH};
use rs_oracle::timing::{self, TimingClock};
use rs_oracle::{Error, Result};

#[derive(Parser)]
#[command(name = "rs-oracle", version, about = "Runtime-savings prediction for simplified queueing simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Base seed; replication j uses seed + j.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Warm-up span in days.
    #[arg(long, default_value_t = 200.0)]
    warmup_days: f64,
    /// Measured span in days.
    #[arg(long, default_value_t = 10.0)]
    run_days: f64,
    /// Digest rounds per executed instruction in timed runs.
    #[arg(long, default_value_t = rs_oracle::kernel::DEFAULT_INSTRUCTION_COST)]
    cost: u32,
    /// cpu or wall.
    #[arg(long, default_value = "cpu")]
    clock: TimingClock,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = calibration::GRID_MIN)]
    grid_lo: f64,
    #[arg(long, default_value_t = calibration::GRID_MAX)]
    grid_hi: f64,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit theta and runtime-savings models for one or more classes.
    Calibrate {
        #[arg(long = "class", required = true, num_args = 1..)]
        classes: Vec<QueueClass>,
        #[command(flatten)]
        grid: GridArgs,
        /// Replications per grid point, for both stages.
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[command(flatten)]
        run: RunArgs,
        /// Existing profile to extend with the new classes.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Profile JSON to write; audit CSVs go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict runtime savings of an operation from parent observations.
    Predict {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        op: PathBuf,
        /// Report JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit LOS models from a pilot run and write the simplified network.
    Simplify {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        op: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_KDE_BANDWIDTH)]
        bandwidth: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation on two-stage parents with the second stage abstracted.
    Validate1 {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Validation on the branching four-subsystem parent.
    Validate2 {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 1)]
        scenario: u8,
    },
    /// Runtime against server count for single-stage systems.
    Scaling {
        #[arg(long, default_value = "mm")]
        class: QueueClass,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SERVER_COUNTS)]
        servers: Vec<u32>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean second-stage queue wait against occupancy.
    Waitcurve {
        #[arg(long = "class", num_args = 1.., default_values_t = QueueClass::ALL)]
        classes: Vec<QueueClass>,
        #[arg(long, default_value_t = 0.05)]
        grid_lo: f64,
        #[arg(long, default_value_t = calibration::GRID_MAX)]
        grid_hi: f64,
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[command(flatten)]
        run: RunArgs,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    class: QueueClass,
    /// Number of occupancy draws.
    #[arg(long, default_value_t = 20)]
    draws: usize,
    #[arg(long, default_value_t = calibration::GRID_MIN)]
    rho_lo: f64,
    #[arg(long, default_value_t = calibration::GRID_MAX)]
    rho_hi: f64,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[command(flatten)]
    run: RunArgs,
    /// Skip the replication CV guard.
    #[arg(long)]
    no_cv_guard: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl ExpArgs {
    fn config(&self) -> ExperimentConfig {
        ExperimentConfig {
            n_draws: self.draws,
            rho_lo: self.rho_lo,
            rho_hi: self.rho_hi,
            reps: self.reps,
            seed: self.run.seed,
            warmup: self.run.warmup_days * MINUTES_PER_DAY,
            run_length: self.run.run_days * MINUTES_PER_DAY,
            instruction_cost: self.run.cost,
            clock: self.run.clock,
            cv_max: (!self.no_cv_guard).then(timing::cv_max_from_env),
            kde_bandwidth: DEFAULT_KDE_BANDWIDTH,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn log(msg: String) {
    eprintln!("{msg}");
}

fn calibrate(classes: &[QueueClass], grid: &GridArgs, reps: usize, run: &RunArgs, base: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = CalibrationConfig {
        grid: Grid::new(grid.grid_lo, grid.grid_hi, grid.grid_step)?,
        r_theta: reps,
        r_timing: reps,
        seed: run.seed,
        warmup: run.warmup_days * MINUTES_PER_DAY,
        run_length: run.run_days * MINUTES_PER_DAY,
        instruction_cost: run.cost,
        clock: run.clock,
        ..Default::default()
    };
    let mut profile = match base {
        Some(p) => calibration::load_profile(p)?,
        None => CalibrationProfile::new(Some(cfg.clone())),
    };
    profile.fingerprint = calibration::Fingerprint::current();
    profile.config = Some(cfg.clone());
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("profile").to_string();
    for &class in classes {
        let cal = calibration::calibrate_class(class, &cfg, &mut log)?;
        let audit = out.with_file_name(format!("{stem}.{class}.csv"));
        calibration::write_dataset_csv(&cal.stage1, &cal.stage2, create(&audit)?)?;
        println!("{class}:");
        for (name, m) in cal.profile.models() {
            println!("  {name:<8} r2={:.4}", m.r_squared);
        }
        profile.classes.insert(class, cal.profile);
    }
    calibration::save_profile(&profile, out)?;
    println!("profile written to {}", out.display());
    Ok(())
}

fn predict(profile: &Path, obs: &Path, op: &Path, out: Option<&Path>) -> Result<()> {
    let profile = calibration::load_profile(profile)?;
    let obs: ParentObservation = read_json(obs)?;
    let op: SimplificationOp = read_json(op)?;
    let report = predict_rs(&profile, &obs, &op)?;
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(p) => {
            fs::write(p, json)?;
            eprintln!("{}", report.summary());
        }
        None => {
            println!("{json}");
            eprintln!("{}", report.summary());
        }
    }
    Ok(())
}

fn simplify(network: &Path, op: &Path, run: &RunArgs, bandwidth: f64, out: &Path) -> Result<()> {
    let parent: NetworkSpec = read_json(network)?;
    parent.validate()?;
    let op: SimplificationOp = read_json(op)?;
    let (spec, fitted) = experiments::build_simplified(
        &parent,
        &op,
        run.warmup_days * MINUTES_PER_DAY,
        run.run_days * MINUTES_PER_DAY,
        run.seed,
        bandwidth,
    )?;
    for (k, f) in &fitted {
        println!("{k}: {}", f.describe());
    }
    fs::write(out, serde_json::to_string_pretty(&spec)?)?;
    Ok(())
}

fn write_validation(report: &experiments::ValidationReport, profile: &CalibrationProfile, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let base = format!("{}_{}", report.experiment, report.class);
    experiments::write_validation_csv(report, Some(profile), create(&out.join(format!("{base}.csv")))?)?;
    experiments::write_metrics_csv(report, create(&out.join(format!("{base}_metrics.csv")))?)?;
    match report.metrics {
        Some(m) => println!(
            "{base}: MAPE {:.2}%  MPE {:.2}%  RMSE {:.4}  R2 {:.4}  (n={})",
            m.mape, m.mpe, m.rmse, m.r_squared, m.n
        ),
        None => println!("{base}: metrics undefined for these rows"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { classes, grid, reps, run, profile, out } => {
            calibrate(&classes, &grid, reps, &run, profile.as_deref(), &out)
        }
        Command::Predict { profile, obs, op, out } => predict(&profile, &obs, &op, out.as_deref()),
        Command::Simplify { network, op, run, bandwidth, out } => simplify(&network, &op, &run, bandwidth, &out),
        Command::Validate1 { exp } => {
            let profile = calibration::load_profile(&exp.profile)?;
            let report = experiments::validate1(&profile, exp.class, &exp.config(), &mut log)?;
            write_validation(&report, &profile, &exp.out)
        }
        Command::Validate2 { exp, scenario } => {
            let profile = calibration::load_profile(&exp.profile)?;
            let report = experiments::validate2(&profile, exp.class, scenario, &exp.config(), &mut log)?;
            write_validation(&report, &profile, &exp.out)
        }
        Command::Scaling { class, servers, reps, run, out } => {
            let cfg = ExperimentConfig {
                reps,
                seed: run.seed,
                warmup: run.warmup_days * MINUTES_PER_DAY,
                run_length: run.run_days * MINUTES_PER_DAY,
                instruction_cost: run.cost,
                clock: run.clock,
                cv_max: Some(timing::cv_max_from_env()),
                ..Default::default()
            };
            let (reps, summary) = experiments::scaling_experiment(class, &servers, &cfg, &mut log)?;
            fs::create_dir_all(&out)?;
            experiments::write_scaling_csv(
                &reps,
                &summary,
                run.seed,
                create(&out.join(format!("scaling_{class}_reps.csv")))?,
                create(&out.join(format!("scaling_{class}.csv")))?,
            )?;
            for s in &summary {
                println!("n={:<5} mean={:.4}s sd={:.4}s", s.n_servers, s.mean_runtime, s.sd_runtime);
            }
            Ok(())
        }
        Command::Waitcurve { classes, grid_lo, grid_hi, grid_step, reps, run, out } => {
            if !(grid_step > 0.0 && grid_lo > 0.0 && grid_lo <= grid_hi) {
                return Err(Error::Config("waitcurve grid must satisfy 0 < lo <= hi with a positive step".into()));
            }
            let n = ((grid_hi - grid_lo) / grid_step + 1e-9).floor() as usize;
            let rhos: Vec<f64> = (0..=n).map(|i| ((grid_lo + i as f64 * grid_step) * 1e9).round() / 1e9).collect();
            let rows = experiments::waiting_curve(
                &classes,
                &rhos,
                reps,
                run.warmup_days * MINUTES_PER_DAY,
                run.run_days * MINUTES_PER_DAY,
                run.seed,
            )?;
            experiments::write_wait_csv(&rows, run.seed, create(&out)?)?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

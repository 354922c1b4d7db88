use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use flagellum::config::RunConfig;
use flagellum::control::{run_closed_loop, tracking_summary, WaypointQueue};
use flagellum::io;
use flagellum::learning::{
    calibrate, fit_inverse_maps, fit_joint_inverse_map, generate_dataset, Calibration,
};
use flagellum::params::Preset;
use flagellum::stepper::{AngularVelocityProfile, HeadTrajectory};
use flagellum::{rpm_to_rad_s, Error, Result};

/// Uniflagellar robot: simulation, inverse-map learning and closed-loop
/// steering.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Physical parameter preset, replacing the config's parameters.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for dataset generation.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop run; writes trajectory.csv.
    Simulate {
        /// JSON array of `[t, omega_rpm]` breakpoints.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Also write the full state at every sample to dump.jsonl.
        #[arg(long)]
        dump: bool,
    },
    /// Steering dataset; writes dataset.csv and rejections.jsonl.
    GenData,
    /// Fits the inverse maps; writes the model files to the output directory.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Reuse a stored calibration instead of running one.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Also fit the joint `(h, alpha) -> (t_H, t_L)` map.
        #[arg(long)]
        joint: bool,
    },
    /// Closed-loop waypoint following; writes trajectory.csv,
    /// control_log.jsonl, tracking_error.csv and passes.json.
    Control {
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        waypoints: Option<PathBuf>,
    },
    /// Tracking-error summary of a trajectory; writes summary.json.
    Eval {
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        waypoints: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::InvalidInput(format!("no {what} given (flag or config paths)")))
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        config.seed = s;
    }
    if let Some(p) = c.preset {
        config.preset = p;
        config.physical = None;
    }
    config.validate()?;
    if let Some(n) = c.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    std::fs::create_dir_all(&c.out).map_err(|e| Error::File {
        path: c.out.display().to_string(),
        message: e.to_string(),
    })?;
    let out = c.out.as_path();
    let paths = config.paths.clone();
    match cli.command {
        Command::Simulate { profile, dump } => {
            simulate(&config, profile.or(paths.profile), dump, out)
        }
        Command::GenData => gen_data(&config, out),
        Command::Train {
            dataset,
            calibration,
            joint,
        } => train(
            &config,
            &required(dataset.or(paths.dataset), "dataset")?,
            calibration,
            joint,
            out,
        ),
        Command::Control { models, waypoints } => control(
            &config,
            &required(models.or(paths.models), "models directory")?,
            &required(waypoints.or(paths.waypoints), "waypoints file")?,
            out,
        ),
        Command::Eval {
            trajectory,
            waypoints,
        } => eval(
            &config,
            &required(trajectory.or(paths.trajectory), "trajectory file")?,
            &required(waypoints.or(paths.waypoints), "waypoints file")?,
            out,
        ),
    }
}

fn read_profile(path: &Path) -> Result<AngularVelocityProfile> {
    let raw: Vec<(f64, f64)> = io::read_json(path)?;
    AngularVelocityProfile::new(raw.into_iter().map(|(t, w)| (t, rpm_to_rad_s(w))).collect())
        .map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

fn simulate(config: &RunConfig, profile: Option<PathBuf>, dump: bool, out: &Path) -> Result<()> {
    let sim = config.simulator()?;
    let profile = match profile {
        Some(p) => read_profile(&p)?,
        None => AngularVelocityProfile::constant(rpm_to_rad_s(config.simulate.omega_rpm)),
    };
    let s = &config.simulate;
    let mut traj = HeadTrajectory::default();
    let mut dump_buf = Vec::new();
    let state = sim.initial_state()?;
    let result = sim.simulate_into(
        &state,
        &profile,
        s.duration,
        s.interval,
        dump.then_some(&mut dump_buf as &mut dyn std::io::Write),
        &mut traj,
    );
    let failure = result.as_ref().err().map(|e| e.to_string());
    io::write_atomic(
        &out.join("trajectory.csv"),
        io::trajectory_csv(&traj.samples, failure.as_deref()).as_bytes(),
    )?;
    if dump {
        io::write_atomic(&out.join("dump.jsonl"), &dump_buf)?;
    }
    info!("{} samples written", traj.len());
    result.map(|_| ())
}

fn gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    let sim = config.simulator()?;
    let spec = config.dataset_spec();
    let report = generate_dataset(&sim, &spec)?;
    io::write_atomic(
        &out.join("dataset.csv"),
        io::dataset_csv(&report.points).as_bytes(),
    )?;
    io::write_atomic(
        &out.join("rejections.jsonl"),
        &io::json_lines(&report.rejections)?,
    )?;
    info!(
        "{} datapoints, {} rejections",
        report.points.len(),
        report.rejections.len()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct TrainReport<'a> {
    datapoints: usize,
    calibration: Calibration,
    models: Vec<(&'a str, &'a flagellum::learning::TrainingRecord)>,
}

fn train(
    config: &RunConfig,
    dataset: &Path,
    calibration: Option<PathBuf>,
    joint: bool,
    out: &Path,
) -> Result<()> {
    let data = io::read_dataset_csv(dataset)?;
    let calibration = match calibration {
        Some(p) => io::read_json::<Calibration>(&p)?,
        None => {
            let k = &config.calibration;
            let cal = calibrate(
                &config.simulator()?,
                config.dataset.omega_l_rpm,
                k.transient,
                k.span,
            )?;
            info!("calibration: {cal:?}");
            cal
        }
    };
    let spec = config.dataset_spec();
    let controls = config.train_controls();
    let mut maps = fit_inverse_maps(&data, calibration, &spec, &controls)?;
    if joint {
        maps.joint = Some(fit_joint_inverse_map(
            &data,
            calibration.v_omega_l,
            true,
            &controls,
        )?);
    }
    io::save_models(out, &maps)?;
    let mut models = vec![
        ("f_H", &maps.f_h.training),
        ("f_L", &maps.f_l.training),
        ("f_beta", &maps.f_beta.training),
        ("f_l", &maps.f_lpos.training),
    ];
    if let Some(j) = &maps.joint {
        models.push(("joint", &j.model.training));
    }
    let report = TrainReport {
        datapoints: data.len(),
        calibration,
        models,
    };
    io::write_json(&out.join("training_report.json"), &report)
}

fn control(config: &RunConfig, models: &Path, waypoints: &Path, out: &Path) -> Result<()> {
    let maps = io::load_models(models)?;
    let points = io::read_waypoints(waypoints)?;
    let sim = config.simulator()?;
    let (run, failure) =
        match run_closed_loop(&sim, &maps, WaypointQueue::new(points)?, config.control) {
            Ok(r) => (r, None),
            Err(i) => (i.run, Some(i.error)),
        };
    let msg = failure.as_ref().map(|e| e.to_string());
    io::write_atomic(
        &out.join("trajectory.csv"),
        io::trajectory_csv(&run.trajectory.samples, msg.as_deref()).as_bytes(),
    )?;
    io::write_atomic(&out.join("control_log.jsonl"), &io::json_lines(&run.log)?)?;
    io::write_atomic(
        &out.join("tracking_error.csv"),
        io::tracking_csv(&run.tracking_error).as_bytes(),
    )?;
    io::write_json(&out.join("passes.json"), &run.passes)?;
    info!(
        "{} samples, {} waypoints passed{}",
        run.trajectory.len(),
        run.passes.len(),
        if run.timed_out { ", timed out" } else { "" }
    );
    failure.map_or(Ok(()), Err)
}

fn eval(config: &RunConfig, trajectory: &Path, waypoints: &Path, out: &Path) -> Result<()> {
    let samples = io::read_trajectory_csv(trajectory)?;
    let points = io::read_waypoints(waypoints)?;
    let split = 0.5 * rpm_to_rad_s(config.control.omega_l_rpm + config.control.omega_h_rpm);
    let summary = tracking_summary(&samples, &points, split)?;
    info!("max {:.3e} m, median {:.3e} m", summary.max, summary.median);
    io::write_json(&out.join("summary.json"), &summary)
}

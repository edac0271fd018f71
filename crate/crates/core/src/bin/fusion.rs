use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fusion_core::io::{Dataset, GroundTruth, NoiseModelKind, RunConfig, Trajectory, DATASET_FILE, GROUND_TRUTH_FILE, TRAJECTORY_FILE};
use fusion_core::pipeline::fuse;
use fusion_core::sim::{evaluate, generate, Metrics, Scenario, TrajectoryPoint};
use fusion_core::state::NavState;
use fusion_core::Error;

const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Parser)]
#[command(name = "fusion", version, about = "Tightly coupled GNSS/IMU/4D-radar sliding-window estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseModelArg {
    Gaussian,
    Gmm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    JsonLines,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset, ground truth and a matching run configuration.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the estimator over a dataset.
    Fuse {
        /// Dataset directory, or the dataset file itself.
        #[arg(long)]
        data: PathBuf,
        /// Run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        noise_model: Option<NoiseModelArg>,
        #[arg(long)]
        no_radar: bool,
        #[arg(long)]
        no_tdcp: bool,
    },
    /// Compare an estimated trajectory with ground truth.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        /// Ground-truth records or another trajectory file.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Io(_)
        | Error::Config(_)
        | Error::InfeasibleScenario(_)
        | Error::EmptyInput(_)
        | Error::NonMonotonicTime { .. }
        | Error::InvalidArgument(_)
        | Error::InsufficientOverlap(_) => 2,
        _ => 3,
    }
}

fn resolve(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

fn simulate(scenario: &Path, out: &Path, seed: Option<u64>) -> fusion_core::Result<()> {
    let text = std::fs::read_to_string(scenario)?;
    let mut spec = Scenario::from_toml(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let sim = generate(&spec)?;
    std::fs::create_dir_all(out)?;
    let dataset = Dataset { imu: sim.imu.clone(), radar: sim.radar.clone(), gnss: sim.gnss.clone() };
    dataset.write(&out.join(DATASET_FILE))?;
    GroundTruth { enu_origin: sim.frames.enu_origin, states: sim.truth.clone() }.write(&out.join(GROUND_TRUTH_FILE))?;
    std::fs::write(out.join(RUN_CONFIG_FILE), RunConfig::for_scenario(&spec).to_toml()?)?;
    log::info!(
        "{}: {} IMU samples, {} radar scans, {} GNSS epochs written to {}",
        spec.name,
        sim.imu.len(),
        sim.radar.len(),
        sim.gnss.len(),
        out.display()
    );
    Ok(())
}

fn run_fuse(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    noise_model: Option<NoiseModelArg>,
    no_radar: bool,
    no_tdcp: bool,
) -> fusion_core::Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = noise_model {
        cfg.ablation.noise_model = match m {
            NoiseModelArg::Gaussian => NoiseModelKind::Gaussian,
            NoiseModelArg::Gmm => NoiseModelKind::Gmm,
        };
    }
    cfg.ablation.enable_radar &= !no_radar;
    cfg.ablation.enable_tdcp &= !no_tdcp;
    let dataset = Dataset::read(&resolve(data, DATASET_FILE))?;
    let result = fuse(&dataset, &cfg)?;
    std::fs::create_dir_all(out)?;
    Trajectory { enu_origin: result.enu_origin, states: result.trajectory.clone() }.write(&out.join(TRAJECTORY_FILE))?;
    let mut diag = String::new();
    for d in &result.diagnostics {
        diag.push_str(&serde_json::to_string(d).map_err(|e| Error::Io(e.into()))?);
        diag.push('\n');
    }
    std::fs::write(out.join(DIAGNOSTICS_FILE), diag)?;
    let rejected: usize = result.diagnostics.iter().map(|d| d.tdcp_rejected).sum();
    log::info!("{} epochs fused, {rejected} TDCP measurements rejected", result.trajectory.len());
    Ok(())
}

fn points(states: &[NavState]) -> Vec<TrajectoryPoint> {
    states.iter().map(|x| TrajectoryPoint { t: x.timestamp, position: x.position, orientation: x.orientation }).collect()
}

fn load_trajectory(path: &Path) -> fusion_core::Result<(fusion_core::geodesy::GeodeticPoint, Vec<NavState>)> {
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl" || e == "json");
    if is_jsonl {
        let g = GroundTruth::read(path)?;
        Ok((g.enu_origin, g.states))
    } else {
        let t = Trajectory::read(path)?;
        Ok((t.enu_origin, t.states))
    }
}

fn report(m: &Metrics, format: Format) -> String {
    match format {
        Format::JsonLines => serde_json::to_string(m).expect("metrics serialize"),
        Format::Text => {
            let deg = |r: f64| r.to_degrees();
            format!(
                "matched epochs : {}\nMAE  E/N/U (m) : {:.4} {:.4} {:.4}\nRMSE E/N/U (m) : {:.4} {:.4} {:.4}\nRMSE 2D (m)    : {:.4}\nattitude RMSE roll/pitch/yaw (deg) : {:.4} {:.4} {:.4}",
                m.matched,
                m.mae[0],
                m.mae[1],
                m.mae[2],
                m.rmse[0],
                m.rmse[1],
                m.rmse[2],
                m.rmse_2d,
                deg(m.attitude_rmse[0]),
                deg(m.attitude_rmse[1]),
                deg(m.attitude_rmse[2]),
            )
        }
    }
}

fn run_evaluate(estimate: &Path, truth: &Path, format: Format) -> fusion_core::Result<()> {
    let (eo, es) = load_trajectory(estimate)?;
    let (to, ts) = load_trajectory(truth)?;
    let m = evaluate(&points(&es), &eo, &points(&ts), &to)?;
    println!("{}", report(&m, format));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate { scenario, out, seed } => simulate(scenario, out, *seed),
        Command::Fuse { data, config, out, noise_model, no_radar, no_tdcp } => {
            run_fuse(data, config.as_deref(), out, *noise_model, *no_radar, *no_tdcp)
        }
        Command::Evaluate { estimate, truth, format } => run_evaluate(estimate, truth, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rslam_core::config::PipelineConfig;
use rslam_core::ingest::{angle_delay_from_sweeps, sweeps_from_csv, Window};
use rslam_core::io;
use rslam_core::map::OccupancyGrid;
use rslam_core::pipeline::{self, heading_rmse_deg, position_rmse, relative_to_first};
use rslam_core::pose::{Estimator, Resampling};
use rslam_core::sim::{generate_trajectory, SceneMap, SimConfig, TrajectoryKind};
use rslam_core::track::Pose;

#[derive(Parser)]
#[command(name = "rslam", version, about = "Radar SLAM from angle-delay scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a dataset from the built-in scene or a scene file.
    Simulate(SimulateArgs),
    /// Convert per-position frequency sweeps into angle-delay scans.
    Ingest(IngestArgs),
    /// Run the full chain over a dataset directory.
    Run(RunArgs),
    /// Compare a trajectory file against ground truth.
    Metrics(MetricsArgs),
    /// Re-threshold a saved log-odds map into a PGM image.
    MapExport(MapExportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Dataset directory to create.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "line-boresight")]
    trajectory: TrajectoryKind,
    /// Scene description; the laboratory scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Noise standard deviation relative to the strongest echo.
    #[arg(long, default_value_t = 0.0)]
    noise_floor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Range bins of 1 cm.
    #[arg(long, default_value_t = 900)]
    bins: usize,
    /// Azimuth integration step, degrees.
    #[arg(long, default_value_t = 0.25)]
    azimuth_step: f64,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of sweep CSV files (`angle_deg,freq_hz,re,im`), one per position, in name order.
    #[arg(long)]
    input: PathBuf,
    /// Dataset directory to create.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "hann")]
    window: Window,
    /// Steering step of the output grid, degrees.
    #[arg(long, default_value_t = 1.0)]
    angle_step: f64,
    #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
    angle_start: f64,
    #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
    angle_end: f64,
    /// Keep only the first delay bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Ground truth to copy into the dataset.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the effective configuration to this file.
    #[arg(long)]
    write_config: Option<PathBuf>,
    #[arg(long)]
    pose: Option<Estimator>,
    #[arg(long)]
    eta_cl: Option<f64>,
    #[arg(long)]
    eta_cf: Option<f64>,
    #[arg(long)]
    eta_sv: Option<f64>,
    #[arg(long)]
    cell_size: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    window: Option<bool>,
    #[arg(long)]
    translation_window: Option<bool>,
    #[arg(long)]
    subpixel: Option<bool>,
    #[arg(long)]
    resampling: Option<Resampling>,
    #[arg(long)]
    peak_box: Option<usize>,
    #[arg(long)]
    search_x: Option<usize>,
    #[arg(long)]
    search_y: Option<usize>,
    #[arg(long)]
    search_theta: Option<usize>,
    #[arg(long)]
    t_f: Option<f64>,
    #[arg(long)]
    w0: Option<f64>,
    #[arg(long)]
    w_theta: Option<f64>,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    sigma_y: Option<f64>,
    #[arg(long)]
    sigma_theta: Option<f64>,
    #[arg(long)]
    q_min: Option<f64>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Trajectory CSV written by `run`.
    #[arg(long)]
    trajectory: PathBuf,
    /// Ground truth CSV of the dataset.
    #[arg(long)]
    ground_truth: PathBuf,
}

#[derive(Args)]
struct MapExportArgs {
    /// Output directory of `run` holding the log-odds map and its header.
    #[arg(long)]
    input: PathBuf,
    /// PGM file to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    tau_occupied: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tau_free: Option<f64>,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => SceneMap::parse(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => SceneMap::laboratory(),
    };
    let cfg = SimConfig {
        n_bins: a.bins,
        noise_floor: a.noise_floor,
        seed: a.seed,
        azimuth_step_deg: a.azimuth_step,
        ..SimConfig::room()
    };
    let poses = generate_trajectory(a.trajectory);
    let (scans, truth) = pipeline::simulate_dataset(&scene, &poses, &cfg)?;
    pipeline::save_dataset(&a.output, &scans, Some(&truth), Some(&scene))?;
    println!("wrote {} scans to {}", scans.len(), a.output.display());
    Ok(())
}

fn sweep_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no sweep files in {}", dir.display());
    }
    Ok(files)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut scans = Vec::new();
    for path in sweep_files(&a.input)? {
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let set = sweeps_from_csv(&text).with_context(|| path.display().to_string())?;
        let (m, clamped) = angle_delay_from_sweeps(
            &set,
            a.window,
            a.angle_start,
            a.angle_end,
            a.angle_step,
            a.bins,
        )
        .with_context(|| path.display().to_string())?;
        if clamped > 0 {
            eprintln!(
                "warning: {}: {clamped} steering angles outside the measured span were clamped",
                path.display()
            );
        }
        scans.push(m);
    }
    let truth = match &a.ground_truth {
        Some(p) => Some(io::ground_truth_from_csv(&fs::read_to_string(p)?)?),
        None => None,
    };
    pipeline::save_dataset(&a.output, &scans, truth.as_ref(), None)?;
    println!("wrote {} scans to {}", scans.len(), a.output.display());
    Ok(())
}

fn run_config(a: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::parse(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => PipelineConfig::default(),
    };
    let r = &mut cfg.registration;
    macro_rules! apply {
        ($($flag:expr => $field:expr),* $(,)?) => {
            $(if let Some(v) = $flag.clone() { $field = v; })*
        };
    }
    apply!(
        a.cell_size => r.cell_size,
        a.image_size => r.image_size,
        a.window => r.window,
        a.translation_window => r.translation_window,
        a.subpixel => r.subpixel,
        a.resampling => r.resampling,
        a.peak_box => r.peak_box,
    );
    apply!(
        a.pose => cfg.estimator,
        a.eta_cl => cfg.eta_cl,
        a.eta_cf => cfg.eta_cf,
        a.eta_sv => cfg.eta_sv,
        a.search_x => cfg.lsm.search_x,
        a.search_y => cfg.lsm.search_y,
        a.search_theta => cfg.lsm.search_theta,
        a.t_f => cfg.t_f,
        a.w0 => cfg.w0,
        a.w_theta => cfg.w_theta,
        a.sigma_x => cfg.sigma_x,
        a.sigma_y => cfg.sigma_y,
        a.sigma_theta => cfg.sigma_theta,
        a.q_min => cfg.q_min,
    );
    for (i, kv) in a.set.iter().enumerate() {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        cfg.set(k, v, i + 1)?;
    }
    if a.input.is_some() {
        cfg.input = a.input.clone();
    }
    if a.output.is_some() {
        cfg.output = a.output.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = run_config(a)?;
    if let Some(p) = &a.write_config {
        fs::write(p, cfg.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    let out = pipeline::run_dataset(&cfg)?;
    print!("{}", io::key_values_to_text(&out.metrics.to_key_values()));
    Ok(())
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let rows = io::trajectory_from_csv(&fs::read_to_string(&a.trajectory)?)?;
    let truth = io::ground_truth_from_csv(&fs::read_to_string(&a.ground_truth)?)?;
    if rows.len() != truth.poses.len() {
        bail!(
            "{} trajectory rows for {} ground-truth poses",
            rows.len(),
            truth.poses.len()
        );
    }
    let estimate: Vec<Pose> = rows.iter().map(|r| r.pose).collect();
    let aligned = relative_to_first(&truth.poses);
    let (e, g) = (estimate[estimate.len() - 1], aligned[aligned.len() - 1]);
    println!("poses = {}", rows.len());
    println!("rmse_position_m = {}", position_rmse(&estimate, &aligned));
    println!(
        "rmse_heading_deg = {}",
        heading_rmse_deg(&estimate, &aligned)
    );
    println!("final_position_error_m = {}", (e.x - g.x).hypot(e.y - g.y));
    Ok(())
}

fn map_export(a: &MapExportArgs) -> Result<()> {
    let header = fs::read_to_string(a.input.join(pipeline::MAP_HEADER_FILE))?;
    let geometry = io::parse_map_header(&header)?;
    let grid: OccupancyGrid = io::log_odds_from_csv(
        geometry,
        &fs::read_to_string(a.input.join(pipeline::MAP_LOG_ODDS_FILE))?,
    )?;
    let saved = io::parse_key_values(&header, "map header")?;
    let saved_tau = |k: &str| {
        saved
            .iter()
            .find(|(key, _)| key == k)
            .and_then(|(_, v)| v.parse::<f64>().ok())
    };
    let defaults = PipelineConfig::default();
    let tau_occupied = a
        .tau_occupied
        .or(saved_tau("tau_occupied"))
        .unwrap_or(defaults.tau_occupied);
    let tau_free = a
        .tau_free
        .or(saved_tau("tau_free"))
        .unwrap_or(defaults.tau_free);
    if tau_free > tau_occupied {
        bail!("tau_free {tau_free} exceeds tau_occupied {tau_occupied}");
    }
    fs::write(&a.output, io::map_to_pgm(&grid, tau_occupied, tau_free))?;
    println!(
        "wrote {}x{} map to {}",
        geometry.width,
        geometry.height,
        a.output.display()
    );
    Ok(())
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, result) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(a)),
        Command::Ingest(a) => ("ingest", ingest(a)),
        Command::Run(a) => ("run", run(a)),
        Command::Metrics(a) => ("metrics", metrics(a)),
        Command::MapExport(a) => ("map-export", map_export(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{stage}]: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

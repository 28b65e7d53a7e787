//! End-to-end processing: clean, register, track, map.

use std::fs;
use std::path::Path;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{self, GroundTruth, TrajectoryRow};
use crate::map::{init_grid, update_grid, OccupancyGrid};
use crate::pose::{estimate_relative_pose, FramePair, RelativePose};
use crate::preprocess::{clean, extract_scan_vector, AngleDelayMatrix, Frame, ScanVector};
use crate::sim::{self, SceneMap, SimConfig};
use crate::track::{wrap_angle, MotionModel, ObservationModel, Pose, Tracker};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const POSE_LOG_FILE: &str = "poses.csv";
pub const MAP_PGM_FILE: &str = "map.pgm";
pub const MAP_LOG_ODDS_FILE: &str = "map_logodds.csv";
pub const MAP_HEADER_FILE: &str = "map.txt";
pub const METRICS_FILE: &str = "metrics.txt";

/// Summary figures of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n_scans: usize,
    pub estimator: String,
    pub mean_q: f64,
    /// Position RMSE of the filtered track, meters.
    pub rmse_position: Option<f64>,
    /// Position RMSE of the raw composed track, meters.
    pub rmse_position_raw: Option<f64>,
    /// Heading RMSE of the filtered track, degrees.
    pub rmse_heading_deg: Option<f64>,
    pub final_position_error: Option<f64>,
}

impl Metrics {
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("scans".to_string(), self.n_scans.to_string()),
            ("estimator".to_string(), self.estimator.clone()),
            ("mean_q".to_string(), self.mean_q.to_string()),
        ];
        for (k, v) in [
            ("rmse_position_m", self.rmse_position),
            ("rmse_position_raw_m", self.rmse_position_raw),
            ("rmse_heading_deg", self.rmse_heading_deg),
            ("final_position_error_m", self.final_position_error),
        ] {
            if let Some(v) = v {
                kv.push((k.to_string(), v.to_string()));
            }
        }
        kv
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub trajectory: Vec<TrajectoryRow>,
    /// Composed relative poses before filtering.
    pub raw: Vec<Pose>,
    /// Estimated increment for each scan `k >= 1`.
    pub pose_log: Vec<(usize, RelativePose)>,
    pub grid: OccupancyGrid,
    pub metrics: Metrics,
}

/// Re-expresses poses relative to the first one, which becomes the origin
/// with zero heading.
pub fn relative_to_first(poses: &[Pose]) -> Vec<Pose> {
    let Some(first) = poses.first() else {
        return Vec::new();
    };
    poses
        .iter()
        .map(|p| {
            let (x, y) = first.inverse_transform_point(p.x, p.y);
            Pose::new(x, y, p.theta - first.theta)
        })
        .collect()
}

/// Root mean square Euclidean position error.
pub fn position_rmse(estimate: &[Pose], truth: &[Pose]) -> f64 {
    let n = estimate.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.x - t.x).powi(2) + (e.y - t.y).powi(2))
        .sum();
    (sum / n as f64).sqrt()
}

/// Root mean square heading error, degrees.
pub fn heading_rmse_deg(estimate: &[Pose], truth: &[Pose]) -> f64 {
    let n = estimate.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| wrap_angle(e.theta - t.theta).to_degrees().powi(2))
        .sum();
    (sum / n as f64).sqrt()
}

/// Runs the chain over `scans` in order. `truth`, when given, holds the
/// sensor pose of every scan in any global frame.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    scans: &[AngleDelayMatrix],
    truth: Option<&[Pose]>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if scans.is_empty() {
        return Err(Error::InvalidParameter("no scans to process".into()));
    }
    let model =
        MotionModel::new(cfg.t_f, cfg.w0, cfg.w_theta).map_err(|e| e.at_stage("track", 0))?;
    let mut obs = ObservationModel::new(cfg.sigma_x, cfg.sigma_y, cfg.sigma_theta)
        .map_err(|e| e.at_stage("track", 0))?;
    obs.q_min = cfg.q_min;
    let mut tracker = Tracker::new(model, obs);
    let mut grid = init_grid(cfg.map).map_err(|e| e.at_stage("map", 0))?;
    grid.clamp = cfg.log_odds_clamp;

    let prepare = |k: usize, h: &AngleDelayMatrix| -> Result<(Frame, ScanVector)> {
        let frame = clean(h, cfg.eta_cl, cfg.eta_cf, k).map_err(|e| e.at_stage("preprocess", k))?;
        let scan =
            extract_scan_vector(&frame, cfg.eta_sv).map_err(|e| e.at_stage("scan-vector", k))?;
        Ok((frame, scan))
    };

    let (mut prev_frame, mut prev_scan) = prepare(0, &scans[0])?;
    let state = tracker.state();
    let mut trajectory = vec![TrajectoryRow {
        k: 0,
        pose: state.pose(),
        q: 1.0,
        cov_xx: state.cov[(0, 0)],
        cov_yy: state.cov[(1, 1)],
        cov_tt: state.cov[(4, 4)],
    }];
    let mut raw = vec![tracker.raw_pose()];
    let mut pose_log = Vec::with_capacity(scans.len().saturating_sub(1));
    update_grid(
        &mut grid,
        &prev_scan,
        &state.pose(),
        cfg.p_hit,
        cfg.evidence,
    )
    .map_err(|e| e.at_stage("map", 0))?;

    for (k, h) in scans.iter().enumerate().skip(1) {
        let (frame, scan) = prepare(k, h)?;
        let pair = FramePair {
            current: &frame,
            previous: &prev_frame,
            current_scan: &scan,
            previous_scan: &prev_scan,
        };
        let rel = estimate_relative_pose(cfg.estimator, &pair, &cfg.registration, &cfg.lsm)
            .map_err(|e| e.at_stage("pose", k))?;
        let state = tracker.step(&rel);
        let pose = state.pose();
        trajectory.push(TrajectoryRow {
            k,
            pose,
            q: rel.q,
            cov_xx: state.cov[(0, 0)],
            cov_yy: state.cov[(1, 1)],
            cov_tt: state.cov[(4, 4)],
        });
        raw.push(tracker.raw_pose());
        pose_log.push((k, rel));
        update_grid(&mut grid, &scan, &pose, cfg.p_hit, cfg.evidence)
            .map_err(|e| e.at_stage("map", k))?;
        prev_frame = frame;
        prev_scan = scan;
    }

    let filtered: Vec<Pose> = trajectory.iter().map(|r| r.pose).collect();
    let aligned = truth.map(relative_to_first);
    let mean_q = if pose_log.is_empty() {
        1.0
    } else {
        pose_log.iter().map(|(_, r)| r.q).sum::<f64>() / pose_log.len() as f64
    };
    let metrics = Metrics {
        n_scans: scans.len(),
        estimator: cfg.estimator.to_string(),
        mean_q,
        rmse_position: aligned.as_deref().map(|t| position_rmse(&filtered, t)),
        rmse_position_raw: aligned.as_deref().map(|t| position_rmse(&raw, t)),
        rmse_heading_deg: aligned.as_deref().map(|t| heading_rmse_deg(&filtered, t)),
        final_position_error: aligned.as_deref().and_then(|t| {
            let (e, g) = (filtered.last()?, t.get(filtered.len() - 1)?);
            Some((e.x - g.x).hypot(e.y - g.y))
        }),
    };
    Ok(PipelineOutput {
        trajectory,
        raw,
        pose_log,
        grid,
        metrics,
    })
}

/// Synthesises one scan per pose and the matching ground truth.
pub fn simulate_dataset(
    scene: &SceneMap,
    poses: &[Pose],
    cfg: &SimConfig,
) -> Result<(Vec<AngleDelayMatrix>, GroundTruth)> {
    let mut scans = Vec::with_capacity(poses.len());
    let mut truth = GroundTruth {
        poses: poses.to_vec(),
        angles_deg: (0..cfg.n_angles)
            .map(|n| cfg.angle_start_deg + n as f64 * cfg.angle_step_deg)
            .collect(),
        first_hit: Vec::with_capacity(poses.len()),
    };
    for (k, pose) in poses.iter().enumerate() {
        let scan =
            sim::synthesize_scan(scene, pose, cfg, k).map_err(|e| e.at_stage("simulate", k))?;
        scans.push(scan.matrix);
        truth.first_hit.push(scan.first_hit);
    }
    Ok((scans, truth))
}

/// Writes scans, and optionally ground truth and scene, as a dataset directory.
pub fn save_dataset(
    dir: &Path,
    scans: &[AngleDelayMatrix],
    truth: Option<&GroundTruth>,
    scene: Option<&SceneMap>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, m) in scans.iter().enumerate() {
        io::save_matrix(&dir.join(io::scan_file_name(k)), m)?;
    }
    if let Some(gt) = truth {
        fs::write(dir.join(io::GROUND_TRUTH_FILE), io::ground_truth_to_csv(gt))?;
    }
    if let Some(scene) = scene {
        fs::write(dir.join(io::SCENE_FILE), scene.to_text())?;
    }
    Ok(())
}

/// Loads every scan of a dataset directory and its ground truth, if present.
pub fn load_dataset(dir: &Path) -> Result<(Vec<AngleDelayMatrix>, Option<GroundTruth>)> {
    let paths = io::dataset_scan_paths(dir).map_err(|e| e.at_stage("load", 0))?;
    let scans = paths
        .iter()
        .enumerate()
        .map(|(k, p)| io::load_matrix(p).map_err(|e| e.at_stage("load", k)))
        .collect::<Result<Vec<_>>>()?;
    let gt_path = dir.join(io::GROUND_TRUTH_FILE);
    let truth = if gt_path.exists() {
        let text = fs::read_to_string(&gt_path).map_err(|e| Error::from(e).at_stage("load", 0))?;
        Some(io::ground_truth_from_csv(&text).map_err(|e| e.at_stage("load", 0))?)
    } else {
        None
    };
    Ok((scans, truth))
}

/// Writes the run artifacts into `dir`.
pub fn write_outputs(dir: &Path, cfg: &PipelineConfig, out: &PipelineOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(TRAJECTORY_FILE),
        io::trajectory_to_csv(&out.trajectory),
    )?;
    fs::write(dir.join(POSE_LOG_FILE), io::pose_log_to_csv(&out.pose_log))?;
    fs::write(
        dir.join(MAP_PGM_FILE),
        io::map_to_pgm(&out.grid, cfg.tau_occupied, cfg.tau_free),
    )?;
    fs::write(dir.join(MAP_LOG_ODDS_FILE), io::log_odds_to_csv(&out.grid))?;
    fs::write(
        dir.join(MAP_HEADER_FILE),
        io::map_header(&out.grid, cfg.tau_occupied, cfg.tau_free),
    )?;
    fs::write(
        dir.join(METRICS_FILE),
        io::key_values_to_text(&out.metrics.to_key_values()),
    )?;
    Ok(())
}

/// Loads `cfg.input`, runs the chain and writes into `cfg.output`.
pub fn run_dataset(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("no input dataset configured".into()))?;
    let (scans, truth) = load_dataset(input)?;
    if let Some(gt) = &truth {
        if gt.poses.len() != scans.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ground-truth poses for {} scans",
                gt.poses.len(),
                scans.len()
            ))
            .at_stage("load", 0));
        }
    }
    let out = run_pipeline(cfg, &scans, truth.as_ref().map(|g| g.poses.as_slice()))?;
    if let Some(dir) = &cfg.output {
        write_outputs(dir, cfg, &out)
            .map_err(|e| e.at_stage("write", scans.len().saturating_sub(1)))?;
    }
    Ok(out)
}

//! File formats: matrices, datasets, trajectories, maps and reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! text file re-parses to the exact values and identical inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::channel::{EcdfFit, SpreadReport};
use crate::error::{Error, Result};
use crate::map::{CellState, GridGeometry, OccupancyGrid};
use crate::pose::RelativePose;
use crate::preprocess::{AngleDelayMatrix, Axes};
use crate::track::Pose;

/// Leading bytes of the binary matrix format.
pub const MATRIX_MAGIC: &[u8; 8] = b"RSLAMADM";

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const SCENE_FILE: &str = "scene.txt";

/// Binary layout: magic, `u64` N and M, `f64` t_min, t_s, angle start and
/// step, then N*M `f64` row-major; all little-endian.
pub fn write_matrix_binary<W: Write>(mut w: W, m: &AngleDelayMatrix) -> Result<()> {
    let a = m.axes();
    let mut buf = Vec::with_capacity(56 + 8 * m.values().len());
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(m.n_angles() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.n_bins() as u64).to_le_bytes());
    for v in [a.t_min, a.t_s, a.angle_start_deg, a.angle_step_deg] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in m.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix_binary<R: Read>(mut r: R) -> Result<AngleDelayMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::parse("matrix file", msg);
    if bytes.len() < 56 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("missing header"));
    }
    let word = |i: usize| <[u8; 8]>::try_from(&bytes[8 + 8 * i..16 + 8 * i]).expect("8 bytes");
    let n = u64::from_le_bytes(word(0)) as usize;
    let m = u64::from_le_bytes(word(1)) as usize;
    let f = |i: usize| f64::from_le_bytes(word(i));
    let axes = Axes {
        t_min: f(2),
        t_s: f(3),
        angle_start_deg: f(4),
        angle_step_deg: f(5),
    };
    let count = n.checked_mul(m).ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() != 56 + 8 * count {
        return Err(bad(&format!(
            "payload holds {} bytes, expected {}",
            bytes.len() - 56,
            8 * count
        )));
    }
    let values = bytes[56..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    AngleDelayMatrix::new(values, n, m, axes)
}

/// CSV layout: `# key = value` header lines for the axes, then one
/// comma-separated row per angle.
pub fn matrix_to_csv(m: &AngleDelayMatrix) -> String {
    let a = m.axes();
    let mut s = String::new();
    let _ = writeln!(s, "# angle_start = {}", a.angle_start_deg);
    let _ = writeln!(s, "# angle_step = {}", a.angle_step_deg);
    let _ = writeln!(s, "# t_min = {}", a.t_min);
    let _ = writeln!(s, "# t_s = {}", a.t_s);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<AngleDelayMatrix> {
    let (mut start, mut step, mut t_min, mut t_s) = (None, None, None, None);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let loc = format!("matrix csv line {}", i + 1);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let Some((k, v)) = meta.split_once('=') else {
                continue;
            };
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::parse(&loc, format!("{e}")))?;
            match k.trim() {
                "angle_start" => start = Some(v),
                "angle_step" => step = Some(v),
                "t_min" => t_min = Some(v),
                "t_s" => t_s = Some(v),
                _ => {}
            }
            continue;
        }
        rows.push(parse_floats(line, &loc)?);
    }
    let missing = |k: &str| Error::parse("matrix csv", format!("missing `{k}` header"));
    let axes = Axes {
        angle_start_deg: start.ok_or_else(|| missing("angle_start"))?,
        angle_step_deg: step.ok_or_else(|| missing("angle_step"))?,
        t_min: t_min.ok_or_else(|| missing("t_min"))?,
        t_s: t_s.ok_or_else(|| missing("t_s"))?,
    };
    AngleDelayMatrix::from_rows(&rows, axes)
}

fn parse_floats(line: &str, loc: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|e| Error::parse(loc, format!("`{t}`: {e}")))
        })
        .collect()
}

/// Loads a matrix, choosing CSV for `.csv` paths and binary otherwise.
pub fn load_matrix(path: &Path) -> Result<AngleDelayMatrix> {
    let at = |e: Error| Error::parse(path.display().to_string(), e.to_string());
    if path.extension().is_some_and(|e| e == "csv") {
        matrix_from_csv(&fs::read_to_string(path)?).map_err(at)
    } else {
        read_matrix_binary(fs::File::open(path)?).map_err(at)
    }
}

pub fn save_matrix(path: &Path, m: &AngleDelayMatrix) -> Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        fs::write(path, matrix_to_csv(m))?;
    } else {
        write_matrix_binary(std::io::BufWriter::new(fs::File::create(path)?), m)?;
    }
    Ok(())
}

pub fn scan_file_name(k: usize) -> String {
    format!("scan_{k:04}.adm")
}

/// Scan files of a dataset directory in index order.
pub fn dataset_scan_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| {
                n.starts_with("scan_") && (n.ends_with(".adm") || n.ends_with(".csv"))
            })
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::parse(
            dir.display().to_string(),
            "no scan_*.adm files",
        ));
    }
    Ok(paths)
}

/// Per-scan ground truth: the sensor pose and first-hit range per angle.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<Pose>,
    pub angles_deg: Vec<f64>,
    /// `first_hit[k][n]`, infinite on a miss.
    pub first_hit: Vec<Vec<f64>>,
}

fn opt_field(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// `k,x,y,theta,angle_deg,first_hit_m`; an empty range means no return.
pub fn ground_truth_to_csv(gt: &GroundTruth) -> String {
    let mut s = String::from("k,x,y,theta,angle_deg,first_hit_m\n");
    for (k, (p, hits)) in gt.poses.iter().zip(&gt.first_hit).enumerate() {
        for (a, r) in gt.angles_deg.iter().zip(hits) {
            let _ = writeln!(s, "{k},{},{},{},{a},{}", p.x, p.y, p.theta, opt_field(*r));
        }
    }
    s
}

pub fn ground_truth_from_csv(text: &str) -> Result<GroundTruth> {
    let mut gt = GroundTruth {
        poses: Vec::new(),
        angles_deg: Vec::new(),
        first_hit: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("ground truth line {}", i + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(
                &loc,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(&loc, format!("`{t}`: {e}")))
        };
        let k: usize = f[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(&loc, format!("{e}")))?;
        let pose = Pose {
            x: num(f[1])?,
            y: num(f[2])?,
            theta: num(f[3])?,
        };
        let angle = num(f[4])?;
        let hit = if f[5].trim().is_empty() {
            f64::INFINITY
        } else {
            num(f[5])?
        };
        if k == gt.poses.len() {
            gt.poses.push(pose);
            gt.first_hit.push(Vec::new());
        } else if k + 1 != gt.poses.len() {
            return Err(Error::parse(&loc, format!("scan index {k} out of order")));
        }
        if k == 0 {
            gt.angles_deg.push(angle);
        }
        gt.first_hit[k].push(hit);
    }
    Ok(gt)
}

/// One row of the trajectory output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub pose: Pose,
    pub q: f64,
    pub cov_xx: f64,
    pub cov_yy: f64,
    pub cov_tt: f64,
}

pub fn trajectory_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from("k,x,y,theta,q,cov_xx,cov_yy,cov_tt\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.k, r.pose.x, r.pose.y, r.pose.theta, r.q, r.cov_xx, r.cov_yy, r.cov_tt
        );
    }
    s
}

pub fn trajectory_from_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("trajectory line {}", i + 1);
        let v = parse_floats(line, &loc)?;
        if v.len() != 8 {
            return Err(Error::parse(
                &loc,
                format!("expected 8 fields, found {}", v.len()),
            ));
        }
        out.push(TrajectoryRow {
            k: v[0] as usize,
            pose: Pose {
                x: v[1],
                y: v[2],
                theta: v[3],
            },
            q: v[4],
            cov_xx: v[5],
            cov_yy: v[6],
            cov_tt: v[7],
        });
    }
    Ok(out)
}

/// `k,dx,dy,dtheta_deg,q` for each estimated increment.
pub fn pose_log_to_csv(log: &[(usize, RelativePose)]) -> String {
    let mut s = String::from("k,dx,dy,dtheta_deg,q\n");
    for (k, r) in log {
        let _ = writeln!(s, "{k},{},{},{},{}", r.dx, r.dy, r.dtheta, r.q);
    }
    s
}

/// Binary PGM, top row at the largest y.
pub fn map_to_pgm(grid: &OccupancyGrid, tau_occupied: f64, tau_free: f64) -> Vec<u8> {
    let g = grid.geometry();
    let states = grid.export_map(tau_occupied, tau_free);
    let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
    for iy in (0..g.height).rev() {
        out.extend(
            states[iy * g.width..(iy + 1) * g.width]
                .iter()
                .map(CellState::gray),
        );
    }
    out
}

/// Raw log-odds, one line per grid row, top row (largest y) first.
pub fn log_odds_to_csv(grid: &OccupancyGrid) -> String {
    let g = grid.geometry();
    let mut s = String::new();
    for iy in (0..g.height).rev() {
        let row: Vec<String> = grid.log_odds()[iy * g.width..(iy + 1) * g.width]
            .iter()
            .map(|v| v.to_string())
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn log_odds_from_csv(geometry: GridGeometry, text: &str) -> Result<OccupancyGrid> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_floats(l, &format!("log-odds line {}", i + 1)))
        .collect::<Result<_>>()?;
    if rows.len() != geometry.height || rows.iter().any(|r| r.len() != geometry.width) {
        return Err(Error::ShapeMismatch(format!(
            "log-odds table does not match a {}x{} grid",
            geometry.width, geometry.height
        )));
    }
    let values = rows.into_iter().rev().flatten().collect();
    OccupancyGrid::from_log_odds(geometry, values)
}

/// Sidecar header describing a map export.
pub fn map_header(grid: &OccupancyGrid, tau_occupied: f64, tau_free: f64) -> String {
    let g = grid.geometry();
    format!(
        "origin_x = {}\norigin_y = {}\ncell_size = {}\nwidth = {}\nheight = {}\nrow_order = top_down\ntau_occupied = {tau_occupied}\ntau_free = {tau_free}\n",
        g.origin_x, g.origin_y, g.cell_size, g.width, g.height
    )
}

pub fn parse_map_header(text: &str) -> Result<GridGeometry> {
    let kv = parse_key_values(text, "map header")?;
    let get = |k: &str| {
        kv.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::parse("map header", format!("missing `{k}`")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|e| Error::parse("map header", format!("{k}: {e}")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|e| Error::parse("map header", format!("{k}: {e}")))
    };
    Ok(GridGeometry {
        origin_x: num("origin_x")?,
        origin_y: num("origin_y")?,
        cell_size: num("cell_size")?,
        width: int("width")?,
        height: int("height")?,
    })
}

/// `key = value` pairs in file order; `#` starts a comment.
pub fn parse_key_values(text: &str, what: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(format!("{what} line {}", i + 1), "expected `key = value`")
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn key_values_to_text(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// `k,tau_mean_s,tau_rms_s,phi_mean_re,phi_mean_im,phi_spread,phi_spread_deg_equiv`.
pub fn spreads_to_csv(report: &SpreadReport) -> String {
    let mut s = String::from(
        "k,tau_mean_s,tau_rms_s,phi_mean_re,phi_mean_im,phi_spread,phi_spread_deg_equiv\n",
    );
    for (k, st) in &report.positions {
        let _ = writeln!(
            s,
            "{k},{},{},{},{},{},{}",
            st.tau_mean,
            st.tau_rms,
            st.phi_mean.re,
            st.phi_mean.im,
            st.phi_spread,
            st.phi_spread_deg_equiv()
        );
    }
    s
}

/// `value,cdf` step points.
pub fn ecdf_to_csv(fit: &EcdfFit) -> String {
    let mut s = String::from("value,cdf\n");
    for (v, f) in fit.points() {
        let _ = writeln!(s, "{v},{f}");
    }
    s
}

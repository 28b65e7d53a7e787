//! Correlative scan matching on a smoothed likelihood raster.
//!
//! The current scan is rasterised into a Gaussian-blurred likelihood grid.
//! Each candidate `(dtheta, u)` maps the previous scan's points `p` to
//! `R(dtheta) p - u`, with `u` a whole number of cells, and is scored by the
//! summed grid likelihood of the mapped points. The search is exhaustive over
//! the window; a max-pooled bound prunes translation blocks without ever
//! discarding a candidate that could win.

use std::cmp::Ordering;

use super::{wrap_deg, RelativePose};
use crate::error::{Error, Result};
use crate::preprocess::ScanVector;

#[derive(Debug, Clone, PartialEq)]
pub struct LsmConfig {
    /// Raster cell size, meters.
    pub cell_size: f64,
    /// Half-width of the x search window, cells.
    pub search_x: usize,
    /// Half-width of the y search window, cells.
    pub search_y: usize,
    /// Half-width of the rotation window, angular bins of the scan.
    pub search_theta: usize,
    /// Gaussian smoothing radius, cells.
    pub sigma_cells: f64,
    /// Translation block edge used for pruning, cells.
    pub block: usize,
}

impl Default for LsmConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.02,
            search_x: 25,
            search_y: 25,
            search_theta: 12,
            sigma_cells: 1.5,
            block: 8,
        }
    }
}

impl LsmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || !(self.sigma_cells > 0.0) || self.block == 0 {
            return Err(Error::InvalidParameter(
                "scan matcher needs positive cell size, smoothing and block size".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian-smoothed occupancy likelihood of one scan.
#[derive(Debug, Clone)]
pub struct LikelihoodGrid {
    origin: (f64, f64),
    cell_size: f64,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LikelihoodGrid {
    pub fn from_points(
        points: &[(f64, f64)],
        cell_size: f64,
        sigma_cells: f64,
        margin_cells: usize,
    ) -> Self {
        let radius = (3.0 * sigma_cells).ceil() as i64;
        let pad = (margin_cells as i64 + radius + 1) as f64 * cell_size;
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &(x, y) in points {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        let origin = (min_x - pad, min_y - pad);
        let width = ((max_x + pad - origin.0) / cell_size).ceil() as usize + 1;
        let height = ((max_y + pad - origin.1) / cell_size).ceil() as usize + 1;
        let mut grid = Self {
            origin,
            cell_size,
            width,
            height,
            data: vec![0.0; width * height],
        };
        let inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
        for &(x, y) in points {
            let (cx, cy) = grid.cell_of(x, y);
            let (fx, fy) = (
                (x - origin.0) / cell_size - 0.5,
                (y - origin.1) / cell_size - 0.5,
            );
            for iy in cy - radius..=cy + radius {
                for ix in cx - radius..=cx + radius {
                    if let Some(i) = grid.index(ix, iy) {
                        let d2 = (ix as f64 - fx).powi(2) + (iy as f64 - fy).powi(2);
                        let v = (-d2 * inv).exp();
                        if v > grid.data[i] {
                            grid.data[i] = v;
                        }
                    }
                }
            }
        }
        grid
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.cell_size).floor() as i64,
            ((y - self.origin.1) / self.cell_size).floor() as i64,
        )
    }

    fn index(&self, ix: i64, iy: i64) -> Option<usize> {
        (ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height)
            .then(|| iy as usize * self.width + ix as usize)
    }

    pub fn value(&self, ix: i64, iy: i64) -> f64 {
        self.index(ix, iy).map_or(0.0, |i| self.data[i])
    }

    /// Max over each `block x block` window anchored at its lower corner,
    /// covering anchors from `-(block-1)` to the grid edge.
    fn max_pooled(&self, block: usize) -> PooledGrid {
        let b = block as i64;
        let (w, h) = (self.width as i64 + b - 1, self.height as i64 + b - 1);
        let mut rows = vec![0.0; (w * self.height as i64) as usize];
        for iy in 0..self.height as i64 {
            for ax in 0..w {
                let x0 = ax - (b - 1);
                let m = (x0..x0 + b)
                    .map(|ix| self.value(ix, iy))
                    .fold(0.0, f64::max);
                rows[(iy * w + ax) as usize] = m;
            }
        }
        let mut data = vec![0.0; (w * h) as usize];
        for ay in 0..h {
            let y0 = ay - (b - 1);
            for ax in 0..w {
                let m = (y0..y0 + b)
                    .filter(|iy| *iy >= 0 && *iy < self.height as i64)
                    .map(|iy| rows[(iy * w + ax) as usize])
                    .fold(0.0, f64::max);
                data[(ay * w + ax) as usize] = m;
            }
        }
        PooledGrid {
            offset: b - 1,
            width: w,
            height: h,
            data,
        }
    }
}

struct PooledGrid {
    offset: i64,
    width: i64,
    height: i64,
    data: Vec<f64>,
}

impl PooledGrid {
    fn value(&self, ax: i64, ay: i64) -> f64 {
        let (x, y) = (ax + self.offset, ay + self.offset);
        if x < 0 || y < 0 || x >= self.width || y >= self.height {
            0.0
        } else {
            self.data[(y * self.width + x) as usize]
        }
    }
}

/// Winning candidate of a scan match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanMatch {
    /// Rotation in angular bins.
    pub theta_index: i64,
    /// Translation `u` in cells (current-frame axes).
    pub shift_x: i64,
    pub shift_y: i64,
    pub score: f64,
}

impl ScanMatch {
    fn rank(&self, other: &ScanMatch) -> Ordering {
        // Higher score first, then the smallest motion, then lexicographic.
        other
            .score
            .total_cmp(&self.score)
            .then(self.theta_index.abs().cmp(&other.theta_index.abs()))
            .then(
                (self.shift_x.abs() + self.shift_y.abs())
                    .cmp(&(other.shift_x.abs() + other.shift_y.abs())),
            )
            .then(self.theta_index.cmp(&other.theta_index))
            .then(self.shift_x.cmp(&other.shift_x))
            .then(self.shift_y.cmp(&other.shift_y))
    }

    fn better_than(&self, other: &Option<ScanMatch>) -> bool {
        other.map_or(true, |o| self.rank(&o) == Ordering::Less)
    }
}

fn canonical_returns(scan: &ScanVector) -> Vec<(f64, f64)> {
    let mut r: Vec<(f64, f64)> = scan.returns().collect();
    r.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    r
}

fn angle_bin(scan: &ScanVector) -> f64 {
    let mut a = scan.angles_deg.clone();
    a.sort_by(f64::total_cmp);
    let step = a
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 1e-9)
        .fold(f64::INFINITY, f64::min);
    if step.is_finite() {
        step
    } else {
        1.0
    }
}

/// Base cells of the previous scan rotated by `theta_index` bins.
fn rotated_cells(
    grid: &LikelihoodGrid,
    returns: &[(f64, f64)],
    dtheta_deg: f64,
) -> Vec<(i64, i64)> {
    returns
        .iter()
        .map(|&(a, r)| {
            let (s, c) = (a + dtheta_deg).to_radians().sin_cos();
            grid.cell_of(r * c, r * s)
        })
        .collect()
}

fn score(grid: &LikelihoodGrid, cells: &[(i64, i64)], ux: i64, uy: i64) -> f64 {
    cells
        .iter()
        .map(|&(cx, cy)| grid.value(cx - ux, cy - uy))
        .sum()
}

struct Problem {
    grid: LikelihoodGrid,
    previous: Vec<(f64, f64)>,
    bin: f64,
    self_score: f64,
}

fn setup(current: &ScanVector, previous: &ScanVector, cfg: &LsmConfig) -> Result<Option<Problem>> {
    cfg.validate()?;
    let cur = canonical_returns(current);
    let prev = canonical_returns(previous);
    if cur.is_empty() || prev.is_empty() {
        return Ok(None);
    }
    let points: Vec<(f64, f64)> = cur
        .iter()
        .map(|&(a, r)| {
            let (s, c) = a.to_radians().sin_cos();
            (r * c, r * s)
        })
        .collect();
    let grid = LikelihoodGrid::from_points(&points, cfg.cell_size, cfg.sigma_cells, 0);
    let self_cells: Vec<(i64, i64)> = points.iter().map(|&(x, y)| grid.cell_of(x, y)).collect();
    let self_score = score(&grid, &self_cells, 0, 0);
    Ok(Some(Problem {
        grid,
        previous: prev,
        bin: angle_bin(current),
        self_score,
    }))
}

/// Full enumeration of the search window, without pruning.
pub fn brute_force_scan_match(
    current: &ScanVector,
    previous: &ScanVector,
    cfg: &LsmConfig,
) -> Result<Option<ScanMatch>> {
    let Some(p) = setup(current, previous, cfg)? else {
        return Ok(None);
    };
    let (sx, sy, st) = (
        cfg.search_x as i64,
        cfg.search_y as i64,
        cfg.search_theta as i64,
    );
    let mut best = None;
    for j in -st..=st {
        let cells = rotated_cells(&p.grid, &p.previous, j as f64 * p.bin);
        for ux in -sx..=sx {
            for uy in -sy..=sy {
                let cand = ScanMatch {
                    theta_index: j,
                    shift_x: ux,
                    shift_y: uy,
                    score: score(&p.grid, &cells, ux, uy),
                };
                if cand.better_than(&best) {
                    best = Some(cand);
                }
            }
        }
    }
    Ok(best)
}

fn pruned_scan_match(p: &Problem, cfg: &LsmConfig) -> Option<ScanMatch> {
    let (sx, sy, st) = (
        cfg.search_x as i64,
        cfg.search_y as i64,
        cfg.search_theta as i64,
    );
    let b = cfg.block as i64;
    let pooled = p.grid.max_pooled(cfg.block);
    let rotations: Vec<Vec<(i64, i64)>> = (-st..=st)
        .map(|j| rotated_cells(&p.grid, &p.previous, j as f64 * p.bin))
        .collect();

    // (bound, rotation slot, block x0, block y0)
    let mut blocks = Vec::new();
    for (slot, cells) in rotations.iter().enumerate() {
        let mut bx = -sx;
        while bx <= sx {
            let mut by = -sy;
            while by <= sy {
                // Shifts in [bx, bx+b) move a cell c to [c-bx-b+1, c-bx].
                let bound: f64 = cells
                    .iter()
                    .map(|&(cx, cy)| pooled.value(cx - bx - b + 1, cy - by - b + 1))
                    .sum();
                blocks.push((bound, slot, bx, by));
                by += b;
            }
            bx += b;
        }
    }
    blocks.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<ScanMatch> = None;
    for (bound, slot, bx, by) in blocks {
        if best.is_some_and(|m| bound < m.score) {
            break;
        }
        let cells = &rotations[slot];
        let j = slot as i64 - st;
        for ux in bx..(bx + b).min(sx + 1) {
            for uy in by..(by + b).min(sy + 1) {
                let cand = ScanMatch {
                    theta_index: j,
                    shift_x: ux,
                    shift_y: uy,
                    score: score(&p.grid, cells, ux, uy),
                };
                if cand.better_than(&best) {
                    best = Some(cand);
                }
            }
        }
    }
    best
}

/// Exhaustive search with pruning; identical result to [`brute_force_scan_match`].
pub fn scan_match(
    current: &ScanVector,
    previous: &ScanVector,
    cfg: &LsmConfig,
) -> Result<Option<ScanMatch>> {
    Ok(setup(current, previous, cfg)?.and_then(|p| pruned_scan_match(&p, cfg)))
}

/// Relative pose from two scan vectors by correlative scan matching.
pub fn estimate_relative_pose_lsm(
    current: &ScanVector,
    previous: &ScanVector,
    cfg: &LsmConfig,
) -> Result<RelativePose> {
    let Some(p) = setup(current, previous, cfg)? else {
        return Ok(RelativePose::ZERO);
    };
    let Some(m) = pruned_scan_match(&p, cfg) else {
        return Ok(RelativePose::ZERO);
    };
    let dtheta = m.theta_index as f64 * p.bin;
    let (ux, uy) = (
        m.shift_x as f64 * cfg.cell_size,
        m.shift_y as f64 * cfg.cell_size,
    );
    // u = R(dtheta) * displacement, so the displacement is R(-dtheta) * u.
    let (s, c) = dtheta.to_radians().sin_cos();
    let q = if p.self_score > 0.0 {
        (m.score / p.self_score).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(RelativePose {
        dx: c * ux + s * uy,
        dy: -s * ux + c * uy,
        dtheta: wrap_deg(dtheta),
        q,
    })
}

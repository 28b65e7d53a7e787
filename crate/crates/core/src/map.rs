//! Log-odds occupancy grid.
//!
//! Each beam of a scan vector is traced from the sensor to its return. The
//! return cell receives `log(p / (1 - p))` and, under
//! [`EvidencePolicy::HitAndFree`], every cell crossed before it receives
//! `log((1 - p) / p)`. Cells beyond the return and beams without a return
//! contribute nothing.

use crate::error::{Error, Result};
use crate::preprocess::ScanVector;
use crate::track::Pose;

pub const DEFAULT_P_HIT: f64 = 0.9;
pub const DEFAULT_LOG_ODDS_CLAMP: f64 = 10.0;

/// Placement and resolution of a grid. `origin` is the lower-left corner of
/// cell `(0, 0)`; cell `(ix, iy)` is stored at `iy * width + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    /// Continuous cell coordinates of a world point.
    pub fn to_cell_coords(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.cell_size,
            (y - self.origin_y) / self.cell_size,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        let (gx, gy) = self.to_cell_coords(x, y);
        (gx.floor() as i64, gy.floor() as i64)
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_x + (ix as f64 + 0.5) * self.cell_size,
            self.origin_y + (iy as f64 + 0.5) * self.cell_size,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvidencePolicy {
    /// Return cell occupied, cells before it free.
    #[default]
    HitAndFree,
    /// Only the return cell is updated.
    HitOnly,
}

impl std::str::FromStr for EvidencePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hit-and-free" => Ok(Self::HitAndFree),
            "hit-only" => Ok(Self::HitOnly),
            other => Err(Error::InvalidParameter(format!(
                "unknown evidence policy `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for EvidencePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::HitAndFree => "hit-and-free",
            Self::HitOnly => "hit-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    geometry: GridGeometry,
    log_odds: Vec<f64>,
    /// Symmetric bound on every cell's log-odds; `None` disables clamping.
    pub clamp: Option<f64>,
}

pub fn init_grid(geometry: GridGeometry) -> Result<OccupancyGrid> {
    if geometry.width == 0 || geometry.height == 0 {
        return Err(Error::InvalidParameter(
            "occupancy grid must have nonzero size".into(),
        ));
    }
    if !(geometry.cell_size > 0.0 && geometry.cell_size.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cell size must be positive, got {}",
            geometry.cell_size
        )));
    }
    if !(geometry.origin_x.is_finite() && geometry.origin_y.is_finite()) {
        return Err(Error::InvalidParameter("grid origin must be finite".into()));
    }
    Ok(OccupancyGrid {
        geometry,
        log_odds: vec![0.0; geometry.n_cells()],
        clamp: Some(DEFAULT_LOG_ODDS_CLAMP),
    })
}

/// `log(b / (1 - b))`.
pub fn log_odds(belief: f64) -> f64 {
    belief.ln() - (-belief).ln_1p()
}

/// Logistic inverse of [`log_odds`].
pub fn belief_of(l: f64) -> f64 {
    let e = l.exp();
    if e.is_infinite() {
        1.0
    } else {
        e / (1.0 + e)
    }
}

impl OccupancyGrid {
    /// Wraps existing log-odds values.
    pub fn from_log_odds(geometry: GridGeometry, log_odds: Vec<f64>) -> Result<Self> {
        let mut grid = init_grid(geometry)?;
        if log_odds.len() != geometry.n_cells() {
            return Err(Error::ShapeMismatch(format!(
                "{} log-odds for {} cells",
                log_odds.len(),
                geometry.n_cells()
            )));
        }
        if log_odds.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidParameter("log-odds must be finite".into()));
        }
        grid.log_odds = log_odds;
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n_cells(&self) -> usize {
        self.log_odds.len()
    }

    pub fn log_odds(&self) -> &[f64] {
        &self.log_odds
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.log_odds[iy * self.geometry.width + ix]
    }

    /// Adds evidence to one cell, honouring the clamp.
    pub fn add(&mut self, ix: usize, iy: usize, delta: f64) {
        let i = iy * self.geometry.width + ix;
        let mut v = self.log_odds[i] + delta;
        if let Some(c) = self.clamp {
            v = v.clamp(-c, c);
        }
        self.log_odds[i] = v;
    }

    pub fn belief(&self) -> Vec<f64> {
        self.log_odds.iter().map(|&l| belief_of(l)).collect()
    }

    /// Ternary map: occupied above `tau_occupied`, free below `tau_free`.
    pub fn export_map(&self, tau_occupied: f64, tau_free: f64) -> Vec<CellState> {
        self.log_odds
            .iter()
            .map(|&l| {
                if l > tau_occupied {
                    CellState::Occupied
                } else if l < tau_free {
                    CellState::Free
                } else {
                    CellState::Unknown
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Free,
    Unknown,
    Occupied,
}

impl CellState {
    /// Graymap byte: 0 free, 128 unknown, 255 occupied.
    pub fn gray(&self) -> u8 {
        match self {
            CellState::Free => 0,
            CellState::Unknown => 128,
            CellState::Occupied => 255,
        }
    }
}

pub const DEFAULT_TAU_OCCUPIED: f64 = 2.0;
pub const DEFAULT_TAU_FREE: f64 = -2.0;

/// Cells crossed by the segment from `a` to `b` (world coordinates), in
/// order, including both end cells. Cells outside the grid are included; the
/// caller filters them.
pub fn trace_cells(geometry: &GridGeometry, a: (f64, f64), b: (f64, f64)) -> Vec<(i64, i64)> {
    let (x0, y0) = geometry.to_cell_coords(a.0, a.1);
    let (x1, y1) = geometry.to_cell_coords(b.0, b.1);
    let (mut ix, mut iy) = (x0.floor() as i64, y0.floor() as i64);
    let (ex, ey) = (x1.floor() as i64, y1.floor() as i64);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 {
        (1.0 / dx).abs()
    } else {
        f64::INFINITY
    };
    let t_delta_y = if dy != 0.0 {
        (1.0 / dy).abs()
    } else {
        f64::INFINITY
    };
    let mut t_max_x = if dx > 0.0 {
        ((ix + 1) as f64 - x0) / dx
    } else if dx < 0.0 {
        (ix as f64 - x0) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((iy + 1) as f64 - y0) / dy
    } else if dy < 0.0 {
        (iy as f64 - y0) / dy
    } else {
        f64::INFINITY
    };
    let n_steps = (ex - ix).abs() + (ey - iy).abs();
    let mut cells = Vec::with_capacity(n_steps as usize + 1);
    cells.push((ix, iy));
    for _ in 0..n_steps {
        if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
        cells.push((ix, iy));
    }
    cells
}

/// Integrates one scan taken at `pose`.
pub fn update_grid(
    grid: &mut OccupancyGrid,
    scan: &ScanVector,
    pose: &Pose,
    p_hit: f64,
    policy: EvidencePolicy,
) -> Result<()> {
    if !(p_hit > 0.5 && p_hit < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "hit likelihood must be in (0.5, 1), got {p_hit}"
        )));
    }
    if !pose.is_finite() {
        return Err(Error::InvalidParameter("pose must be finite".into()));
    }
    let l_hit = log_odds(p_hit);
    let l_free = -l_hit;
    let geometry = grid.geometry;
    let origin = (pose.x, pose.y);
    for (angle, range) in scan.returns() {
        let (s, c) = angle.to_radians().sin_cos();
        let end = pose.transform_point(range * c, range * s);
        let cells = trace_cells(&geometry, origin, end);
        let (last, before) = cells.split_last().expect("trace has at least one cell");
        if policy == EvidencePolicy::HitAndFree {
            for &(ix, iy) in before {
                if geometry.contains(ix, iy) {
                    grid.add(ix as usize, iy as usize, l_free);
                }
            }
        }
        if geometry.contains(last.0, last.1) {
            grid.add(last.0 as usize, last.1 as usize, l_hit);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(w: usize, h: usize) -> GridGeometry {
        GridGeometry {
            origin_x: -5.0,
            origin_y: -5.0,
            cell_size: 0.5,
            width: w,
            height: h,
        }
    }

    fn one_beam(angle: f64, range: f64) -> ScanVector {
        ScanVector {
            ranges: vec![range],
            angles_deg: vec![angle],
        }
    }

    #[test]
    fn fresh_grid_is_uncertain() {
        let g = init_grid(geometry(10, 10)).unwrap();
        assert_eq!(g.n_cells(), 100);
        assert!(g.log_odds().iter().all(|l| *l == 0.0));
        assert!(g.belief().iter().all(|b| *b == 0.5));
        assert!(init_grid(geometry(0, 10)).is_err());
    }

    #[test]
    fn single_hit_gives_point_nine() {
        let mut g = init_grid(geometry(20, 20)).unwrap();
        update_grid(
            &mut g,
            &one_beam(0.0, 2.2),
            &Pose::default(),
            DEFAULT_P_HIT,
            EvidencePolicy::HitAndFree,
        )
        .unwrap();
        let (ix, iy) = g.geometry().cell_of(2.2, 0.0);
        let l = g.get(ix as usize, iy as usize);
        assert!((l - 9f64.ln()).abs() < 1e-15);
        assert!((belief_of(l) - 0.9).abs() < 1e-15);
        update_grid(
            &mut g,
            &one_beam(0.0, 2.2),
            &Pose::default(),
            DEFAULT_P_HIT,
            EvidencePolicy::HitAndFree,
        )
        .unwrap();
        let l = g.get(ix as usize, iy as usize);
        assert!((l - 2.0 * 9f64.ln()).abs() < 1e-15);
        assert!((belief_of(l) - 81.0 / 82.0).abs() < 1e-12);
        // Cells between sensor and return are free, cells behind untouched.
        let (sx, sy) = g.geometry().cell_of(0.0, 0.0);
        assert!(g.get(sx as usize, sy as usize) < 0.0);
        assert_eq!(g.get(ix as usize + 1, iy as usize), 0.0);
    }

    #[test]
    fn hit_only_policy_skips_free_space() {
        let mut g = init_grid(geometry(20, 20)).unwrap();
        update_grid(
            &mut g,
            &one_beam(30.0, 3.0),
            &Pose::default(),
            DEFAULT_P_HIT,
            EvidencePolicy::HitOnly,
        )
        .unwrap();
        assert_eq!(g.log_odds().iter().filter(|l| **l != 0.0).count(), 1);
    }

    #[test]
    fn no_return_and_out_of_extent() {
        let mut g = init_grid(geometry(20, 20)).unwrap();
        let scan = ScanVector {
            ranges: vec![crate::preprocess::NO_RETURN, 50.0],
            angles_deg: vec![0.0, 90.0],
        };
        update_grid(
            &mut g,
            &scan,
            &Pose::default(),
            DEFAULT_P_HIT,
            EvidencePolicy::HitAndFree,
        )
        .unwrap();
        // Beam at +90 deg (left, +y) is clipped: only free cells inside the grid.
        assert!(g.log_odds().iter().all(|l| *l <= 0.0));
        assert_eq!(g.log_odds().iter().filter(|l| **l < 0.0).count(), 10);
    }

    #[test]
    fn clamp_bounds_log_odds() {
        let mut g = init_grid(geometry(4, 4)).unwrap();
        for _ in 0..20 {
            g.add(1, 1, 9f64.ln());
        }
        assert_eq!(g.get(1, 1), DEFAULT_LOG_ODDS_CLAMP);
        g.clamp = None;
        g.add(1, 1, 9f64.ln());
        assert!(g.get(1, 1) > DEFAULT_LOG_ODDS_CLAMP);
    }

    #[test]
    fn belief_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..1000 {
            let l: f64 = rng.gen_range(-5.0..5.0);
            assert!((log_odds(belief_of(l)) - l).abs() < 1e-12);
        }
        assert_eq!(belief_of(0.0), 0.5);
        assert!((belief_of(9f64.ln()) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn export_thresholds() {
        let g = OccupancyGrid::from_log_odds(geometry(3, 1), vec![-3.0, 0.0, 2.5]).unwrap();
        assert_eq!(
            g.export_map(DEFAULT_TAU_OCCUPIED, DEFAULT_TAU_FREE),
            vec![CellState::Free, CellState::Unknown, CellState::Occupied]
        );
        assert!(OccupancyGrid::from_log_odds(geometry(3, 1), vec![0.0]).is_err());
    }

    /// Cells whose open interior the segment crosses, by exhaustive slab tests.
    fn brute_cells(g: &GridGeometry, a: (f64, f64), b: (f64, f64)) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        for iy in -2..g.height as i64 + 2 {
            for ix in -2..g.width as i64 + 2 {
                let (lo_x, lo_y) = (
                    g.origin_x + ix as f64 * g.cell_size,
                    g.origin_y + iy as f64 * g.cell_size,
                );
                let (hi_x, hi_y) = (lo_x + g.cell_size, lo_y + g.cell_size);
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                let mut hit = true;
                for (p, d, lo, hi) in [(a.0, b.0 - a.0, lo_x, hi_x), (a.1, b.1 - a.1, lo_y, hi_y)] {
                    if d.abs() < 1e-15 {
                        if p <= lo || p >= hi {
                            hit = false;
                        }
                    } else {
                        let (mut ta, mut tb) = ((lo - p) / d, (hi - p) / d);
                        if ta > tb {
                            std::mem::swap(&mut ta, &mut tb);
                        }
                        t0 = t0.max(ta);
                        t1 = t1.min(tb);
                    }
                }
                if hit && t0 < t1 {
                    out.push((ix, iy));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn traversal_matches_exhaustive_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = geometry(12, 9);
        for _ in 0..2000 {
            let a = (rng.gen_range(-5.0..1.0), rng.gen_range(-5.0..-0.5));
            let b = (rng.gen_range(-5.0..1.0), rng.gen_range(-5.0..-0.5));
            let mut cells = trace_cells(&g, a, b);
            let n = cells.len();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), n, "cells visited twice");
            assert_eq!(cells, brute_cells(&g, a, b), "{a:?} -> {b:?}");
        }
    }

    #[test]
    fn update_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let scans: Vec<(ScanVector, Pose)> = (0..6)
            .map(|_| {
                let angles: Vec<f64> = (0..19).map(|i| -90.0 + 10.0 * i as f64).collect();
                let ranges = angles.iter().map(|_| rng.gen_range(0.5..4.0)).collect();
                (
                    ScanVector {
                        ranges,
                        angles_deg: angles,
                    },
                    Pose::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-3.0..3.0),
                    ),
                )
            })
            .collect();
        let run = |order: &[usize]| {
            let mut g = init_grid(geometry(20, 20)).unwrap();
            g.clamp = None;
            for &i in order {
                update_grid(
                    &mut g,
                    &scans[i].0,
                    &scans[i].1,
                    DEFAULT_P_HIT,
                    EvidencePolicy::HitAndFree,
                )
                .unwrap();
            }
            g
        };
        let a = run(&[0, 1, 2, 3, 4, 5]);
        let b = run(&[5, 3, 1, 0, 4, 2]);
        for (x, y) in a.log_odds().iter().zip(b.log_odds()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

//! Angle-delay matrix construction and cleaning.
//!
//! A scan is a set of sampled backscatter impulse responses, one per steering
//! angle. Their magnitudes form the angle-delay matrix (rows are angles,
//! columns are delay bins). Two threshold passes clean it:
//!
//! * ghost-effect mitigation ([`gem`]) thresholds each delay column against its
//!   own maximum, removing echoes that sidelobes pick up from other directions;
//! * noise masking ([`nm`]) thresholds the whole matrix against its global
//!   maximum.
//!
//! The cleaned matrix is a [`Frame`]. Frames yield lidar-like [`ScanVector`]s
//! and the detected [`PathSet`] used for channel statistics.

use num_complex::Complex64;
use std::ops::Deref;

use crate::error::{check_threshold, Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sentinel range for a steering angle without any return.
pub const NO_RETURN: f64 = f64::INFINITY;

const ANGLE_GRID_TOLERANCE: f64 = 1e-6;

/// Angle and delay axes of an angle-delay matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    /// First steering angle, degrees.
    pub angle_start_deg: f64,
    /// Steering step, degrees (positive).
    pub angle_step_deg: f64,
    /// Minimum two-way delay, seconds.
    pub t_min: f64,
    /// Delay sampling time, seconds.
    pub t_s: f64,
}

impl Axes {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_s must be positive, got {}",
                self.t_s
            )));
        }
        if !(self.t_min >= 0.0 && self.t_min.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_min must be non-negative, got {}",
                self.t_min
            )));
        }
        if !(self.angle_step_deg > 0.0 && self.angle_step_deg.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "angle step must be positive, got {}",
                self.angle_step_deg
            )));
        }
        if !self.angle_start_deg.is_finite() {
            return Err(Error::InvalidParameter("angle start must be finite".into()));
        }
        Ok(())
    }

    /// Minimum detection distance `c * t_min / 2`.
    pub fn d_min(&self) -> f64 {
        SPEED_OF_LIGHT * self.t_min / 2.0
    }

    /// Range step per delay bin `c * t_s / 2`.
    pub fn range_step(&self) -> f64 {
        SPEED_OF_LIGHT * self.t_s / 2.0
    }

    pub fn angle_deg(&self, n: usize) -> f64 {
        self.angle_start_deg + n as f64 * self.angle_step_deg
    }

    pub fn range_m(&self, m: usize) -> f64 {
        self.d_min() + m as f64 * self.range_step()
    }

    pub fn delay_s(&self, m: usize) -> f64 {
        self.t_min + m as f64 * self.t_s
    }
}

/// Nonnegative backscatter magnitudes, `n_angles` rows by `n_bins` delay columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDelayMatrix {
    values: Vec<f64>,
    n_angles: usize,
    n_bins: usize,
    axes: Axes,
}

impl AngleDelayMatrix {
    /// Wraps a row-major buffer after checking shape, axes and sign.
    pub fn new(values: Vec<f64>, n_angles: usize, n_bins: usize, axes: Axes) -> Result<Self> {
        if n_angles == 0 || n_bins == 0 {
            return Err(Error::ShapeMismatch(format!(
                "angle-delay matrix needs at least one row and column, got {n_angles}x{n_bins}"
            )));
        }
        if values.len() != n_angles * n_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_angles}x{n_bins} matrix",
                values.len()
            )));
        }
        axes.validate()?;
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "matrix entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self {
            values,
            n_angles,
            n_bins,
            axes,
        })
    }

    pub fn zeros(n_angles: usize, n_bins: usize, axes: Axes) -> Result<Self> {
        Self::new(vec![0.0; n_angles * n_bins], n_angles, n_bins, axes)
    }

    pub fn from_rows(rows: &[Vec<f64>], axes: Axes) -> Result<Self> {
        let n_bins = rows.first().map_or(0, Vec::len);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n_bins {
                return Err(Error::Ragged {
                    row,
                    len: r.len(),
                    expected: n_bins,
                });
            }
        }
        Self::new(rows.concat(), rows.len(), n_bins, axes)
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.n_bins + m]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_bins..(n + 1) * self.n_bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_bins)
    }

    pub fn angle_deg(&self, n: usize) -> f64 {
        self.axes.angle_deg(n)
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        (0..self.n_angles).map(|n| self.angle_deg(n)).collect()
    }

    pub fn range_m(&self, m: usize) -> f64 {
        self.axes.range_m(m)
    }

    /// Largest range represented by the delay axis.
    pub fn max_range(&self) -> f64 {
        self.range_m(self.n_bins - 1)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn column_max(&self, m: usize) -> f64 {
        (0..self.n_angles)
            .map(|n| self.get(n, m))
            .fold(0.0, f64::max)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let n_bins = self.n_bins;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / n_bins, i % n_bins, v))
            .collect();
        Self {
            values,
            n_angles: self.n_angles,
            n_bins,
            axes: self.axes,
        }
    }
}

/// A cleaned angle-delay matrix at scan index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    matrix: AngleDelayMatrix,
    scan_index: usize,
}

impl Frame {
    /// Wraps a matrix as a frame without re-checking the cleaning thresholds.
    pub fn from_matrix(matrix: AngleDelayMatrix, scan_index: usize) -> Self {
        Self { matrix, scan_index }
    }

    pub fn scan_index(&self) -> usize {
        self.scan_index
    }

    pub fn matrix(&self) -> &AngleDelayMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> AngleDelayMatrix {
        self.matrix
    }
}

impl Deref for Frame {
    type Target = AngleDelayMatrix;

    fn deref(&self) -> &AngleDelayMatrix {
        &self.matrix
    }
}

/// Builds the angle-delay matrix from per-angle complex impulse responses.
///
/// `angles_deg` must be strictly increasing and uniformly spaced. A single
/// angle is accepted; its step is recorded as one degree.
pub fn build_angle_delay_matrix(
    cirs: &[Vec<Complex64>],
    angles_deg: &[f64],
    t_min: f64,
    t_s: f64,
) -> Result<AngleDelayMatrix> {
    if cirs.len() != angles_deg.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} impulse responses for {} angles",
            cirs.len(),
            angles_deg.len()
        )));
    }
    let step = uniform_step(angles_deg)?;
    let n_bins = cirs.first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(cirs.len() * n_bins);
    for (row, cir) in cirs.iter().enumerate() {
        if cir.len() != n_bins {
            return Err(Error::Ragged {
                row,
                len: cir.len(),
                expected: n_bins,
            });
        }
        values.extend(cir.iter().map(|h| h.norm()));
    }
    let axes = Axes {
        angle_start_deg: angles_deg.first().copied().unwrap_or(0.0),
        angle_step_deg: step,
        t_min,
        t_s,
    };
    AngleDelayMatrix::new(values, cirs.len(), n_bins, axes)
}

/// Checks that a grid is strictly increasing and uniform; returns its step.
pub(crate) fn uniform_step(angles_deg: &[f64]) -> Result<f64> {
    if angles_deg.len() < 2 {
        return Ok(1.0);
    }
    let step = angles_deg[1] - angles_deg[0];
    if !(step > 0.0) {
        return Err(Error::NonUniformAngles {
            index: 1,
            found: step,
            expected: step.abs().max(f64::MIN_POSITIVE),
        });
    }
    for (i, w) in angles_deg.windows(2).enumerate() {
        let d = w[1] - w[0];
        if (d - step).abs() > ANGLE_GRID_TOLERANCE * step.max(1.0) {
            return Err(Error::NonUniformAngles {
                index: i + 1,
                found: d,
                expected: step,
            });
        }
    }
    Ok(step)
}

/// Ghost-effect mitigation: per delay column, zero every entry below
/// `eta_cl` times the column maximum.
pub fn gem(h: &AngleDelayMatrix, eta_cl: f64) -> Result<AngleDelayMatrix> {
    check_threshold("eta_cl", eta_cl)?;
    let thresholds: Vec<f64> = (0..h.n_bins()).map(|m| eta_cl * h.column_max(m)).collect();
    Ok(h.map_values(|_, m, v| if v >= thresholds[m] { v } else { 0.0 }))
}

/// Noise masking: zero every entry below `eta_cf` times the global maximum.
pub fn nm(h: &AngleDelayMatrix, eta_cf: f64, scan_index: usize) -> Result<Frame> {
    check_threshold("eta_cf", eta_cf)?;
    let threshold = eta_cf * h.max_value();
    let matrix = h.map_values(|_, _, v| if v >= threshold { v } else { 0.0 });
    Ok(Frame::from_matrix(matrix, scan_index))
}

/// GEM followed by NM.
pub fn clean(h: &AngleDelayMatrix, eta_cl: f64, eta_cf: f64, scan_index: usize) -> Result<Frame> {
    nm(&gem(h, eta_cl)?, eta_cf, scan_index)
}

/// Lidar-like range vector: per steering angle, the first range whose
/// magnitude reaches `eta_sv` times the row maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanVector {
    /// Ranges in meters, [`NO_RETURN`] where a row holds no energy.
    pub ranges: Vec<f64>,
    /// Steering angles in degrees.
    pub angles_deg: Vec<f64>,
}

impl ScanVector {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.iter().all(|r| !r.is_finite())
    }

    /// `(angle_deg, range)` pairs with an actual return.
    pub fn returns(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.angles_deg
            .iter()
            .zip(&self.ranges)
            .filter(|(_, r)| r.is_finite())
            .map(|(a, r)| (*a, *r))
    }

    /// Sensor-frame Cartesian points of the returns (x forward, y left).
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.returns()
            .map(|(a, r)| {
                let (s, c) = a.to_radians().sin_cos();
                (r * c, r * s)
            })
            .collect()
    }
}

pub fn extract_scan_vector(frame: &Frame, eta_sv: f64) -> Result<ScanVector> {
    check_threshold("eta_sv", eta_sv)?;
    let ranges = frame
        .rows()
        .map(|row| {
            let f_max = row.iter().copied().fold(0.0, f64::max);
            if f_max <= 0.0 {
                return NO_RETURN;
            }
            let threshold = eta_sv * f_max;
            row.iter()
                .position(|&v| v >= threshold)
                .map_or(NO_RETURN, |m| frame.range_m(m))
        })
        .collect();
    Ok(ScanVector {
        ranges,
        angles_deg: frame.angles_deg(),
    })
}

/// One detected propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Linear power, `|h|^2`.
    pub power: f64,
    /// Two-way delay, seconds.
    pub delay: f64,
    /// Azimuth, degrees.
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// How surviving frame cells are turned into paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PathDetection {
    /// Every nonzero cell is a path.
    #[default]
    EveryCell,
    /// Only cells that are maxima of their 8-neighbourhood.
    LocalMaxima,
}

pub fn extract_paths(frame: &Frame) -> PathSet {
    extract_paths_with(frame, PathDetection::EveryCell)
}

pub fn extract_paths_with(frame: &Frame, detection: PathDetection) -> PathSet {
    let (n_angles, n_bins) = (frame.n_angles(), frame.n_bins());
    let mut paths = Vec::new();
    for n in 0..n_angles {
        for m in 0..n_bins {
            let v = frame.get(n, m);
            if v == 0.0 {
                continue;
            }
            if detection == PathDetection::LocalMaxima && !is_local_max(frame, n, m) {
                continue;
            }
            paths.push(Path {
                power: v * v,
                delay: frame.axes().delay_s(m),
                azimuth_deg: frame.angle_deg(n),
            });
        }
    }
    PathSet { paths }
}

fn is_local_max(frame: &Frame, n: usize, m: usize) -> bool {
    let v = frame.get(n, m);
    let rows = n.saturating_sub(1)..=(n + 1).min(frame.n_angles() - 1);
    rows.flat_map(|r| (m.saturating_sub(1)..=(m + 1).min(frame.n_bins() - 1)).map(move |c| (r, c)))
        .all(|(r, c)| frame.get(r, c) <= v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> Axes {
        Axes {
            angle_start_deg: -90.0,
            angle_step_deg: 1.0,
            t_min: 0.0,
            t_s: 1e-9,
        }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn builds_magnitudes() {
        let h = build_angle_delay_matrix(
            &[vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]],
            &[0.0],
            0.0,
            1e-9,
        )
        .unwrap();
        assert_eq!(h.row(0), &[1.0, 0.0, 0.0]);

        let h = build_angle_delay_matrix(
            &[
                vec![c(3.0, -4.0), c(0.0, 0.0), c(0.0, 0.0)],
                vec![c(0.0, 0.0); 3],
            ],
            &[-1.0, 1.0],
            0.0,
            1e-9,
        )
        .unwrap();
        assert_eq!(h.row(0), &[5.0, 0.0, 0.0]);
        assert_eq!(h.axes().angle_step_deg, 2.0);
    }

    #[test]
    fn table_resolution_gives_sub_millimetre_range_step() {
        let axes = Axes {
            t_s: 1.56e-12,
            ..axes()
        };
        let h = AngleDelayMatrix::zeros(181, 8501, axes).unwrap();
        let d = h.axes().range_step();
        assert!((d - 2.338e-4).abs() < 1e-6, "{d}");
        assert_eq!(h.angle_deg(180), 90.0);
    }

    #[test]
    fn rejects_ragged_and_nonuniform_input() {
        let err = build_angle_delay_matrix(
            &[vec![c(1.0, 0.0); 3], vec![c(1.0, 0.0); 2]],
            &[0.0, 1.0],
            0.0,
            1e-9,
        );
        assert!(matches!(err, Err(Error::Ragged { row: 1, .. })));
        let err =
            build_angle_delay_matrix(&vec![vec![c(1.0, 0.0); 2]; 3], &[0.0, 1.0, 3.0], 0.0, 1e-9);
        assert!(matches!(err, Err(Error::NonUniformAngles { index: 2, .. })));
        let err = build_angle_delay_matrix(&vec![vec![c(1.0, 0.0); 2]; 2], &[1.0, 0.0], 0.0, 1e-9);
        assert!(matches!(err, Err(Error::NonUniformAngles { .. })));
    }

    #[test]
    fn gem_thresholds_each_column() {
        let h =
            AngleDelayMatrix::from_rows(&[vec![0.1, 0.0], vec![1.0, 0.0], vec![0.5, 0.0]], axes())
                .unwrap();
        let g = gem(&h, 0.4).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert_eq!(g.row(1), &[1.0, 0.0]);
        assert_eq!(g.row(2), &[0.5, 0.0]);
    }

    #[test]
    fn gem_keeps_ties_at_threshold() {
        let h = AngleDelayMatrix::from_rows(&[vec![0.5, 1.0], vec![1.0, 1.0]], axes()).unwrap();
        let g = gem(&h, 0.5).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn thresholds_outside_unit_interval_are_rejected() {
        let h = AngleDelayMatrix::zeros(2, 2, axes()).unwrap();
        for eta in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                gem(&h, eta),
                Err(Error::Threshold { name: "eta_cl", .. })
            ));
            assert!(matches!(
                nm(&h, eta, 0),
                Err(Error::Threshold { name: "eta_cf", .. })
            ));
        }
        let f = nm(&h, 1.0, 0).unwrap();
        assert!(extract_scan_vector(&f, 0.0).is_err());
    }

    #[test]
    fn nm_masks_against_global_max() {
        let h = AngleDelayMatrix::from_rows(&[vec![1.0, 0.009], vec![0.2, 0.05]], axes()).unwrap();
        let f = nm(&h, 1e-2, 3).unwrap();
        assert_eq!(f.row(0), &[1.0, 0.0]);
        assert_eq!(f.row(1), &[0.2, 0.05]);
        assert_eq!(f.scan_index(), 3);

        let flat = AngleDelayMatrix::from_rows(&[vec![0.7; 3], vec![0.7; 3]], axes()).unwrap();
        assert_eq!(nm(&flat, 1.0, 0).unwrap().matrix(), &flat);
    }

    #[test]
    fn scan_vector_picks_first_crossing() {
        let axes = Axes {
            angle_start_deg: 0.0,
            angle_step_deg: 1.0,
            t_min: 2.0 / SPEED_OF_LIGHT,
            t_s: 1.0 / SPEED_OF_LIGHT,
        };
        let h = AngleDelayMatrix::from_rows(&[vec![0.0, 0.95, 1.0], vec![0.0, 0.0, 0.0]], axes)
            .unwrap();
        let s = extract_scan_vector(&Frame::from_matrix(h, 0), 0.9).unwrap();
        assert!((s.ranges[0] - 1.5).abs() < 1e-12);
        assert_eq!(s.ranges[1], NO_RETURN);
        assert_eq!(s.returns().count(), 1);
    }

    #[test]
    fn single_cell_path() {
        let axes = Axes {
            t_min: 10e-9,
            ..axes()
        };
        let mut rows = vec![vec![0.0; 4]; 3];
        rows[0][0] = 0.5;
        let f = Frame::from_matrix(AngleDelayMatrix::from_rows(&rows, axes).unwrap(), 0);
        let p = extract_paths(&f);
        assert_eq!(
            p.paths,
            vec![Path {
                power: 0.25,
                delay: 10e-9,
                azimuth_deg: -90.0
            }]
        );
        let empty = Frame::from_matrix(AngleDelayMatrix::zeros(3, 4, axes).unwrap(), 0);
        assert!(extract_paths(&empty).is_empty());
    }

    #[test]
    fn local_maxima_detection_thins_ridges() {
        let rows = vec![vec![0.2, 0.5, 0.2], vec![0.1, 0.3, 0.1]];
        let f = Frame::from_matrix(AngleDelayMatrix::from_rows(&rows, axes()).unwrap(), 0);
        assert_eq!(extract_paths(&f).len(), 6);
        let peaks = extract_paths_with(&f, PathDetection::LocalMaxima);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks.paths[0].power, 0.25);
    }
}

//! Relative pose estimation between consecutive frames.
//!
//! Three estimators are provided:
//!
//! * [`estimate_relative_pose_fm`]: Fourier-Mellin registration. Rotation comes
//!   from phase-correlating polar resamplings of the Cartesian images' FFT
//!   magnitudes, translation from phase-correlating the rotation-compensated
//!   Cartesian images.
//! * [`estimate_relative_pose_sfm`]: the simplified variant, estimating rotation
//!   by phase-correlating the polar frames directly.
//! * [`estimate_relative_pose_lsm`]: correlative scan matching of scan vectors.
//!
//! Conventions: the sensor frame has x forward and y to the left, steering
//! angles are counter-clockwise in that frame, and a frame is stored with
//! `row = angle`. The returned `dtheta` is the row rotation that aligns frame
//! `k-1` with frame `k`, which equals the heading increment in the tracker's
//! convention (see [`crate::track`]). `(dx, dy)` is the displacement of the
//! sensor expressed in the frame-`k-1` sensor axes.

mod fourier_mellin;
mod scan_match;
mod spectrum;

pub use fourier_mellin::{
    estimate_relative_pose_fm, estimate_relative_pose_sfm, estimate_rotation_fm,
    estimate_rotation_sfm, RegistrationConfig,
};
pub use scan_match::{
    brute_force_scan_match, estimate_relative_pose_lsm, scan_match, LikelihoodGrid, LsmConfig,
    ScanMatch,
};
pub use spectrum::{
    correlation_peak, cross_power_spectrum, fft2, ifft2, phase_correlation, PeakShift, RealGrid,
    Spectrum2D, CPS_EPSILON,
};

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::preprocess::{Frame, ScanVector};

/// Relative pose increment with its quality indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    /// Forward displacement in the previous sensor frame, meters.
    pub dx: f64,
    /// Leftward displacement in the previous sensor frame, meters.
    pub dy: f64,
    /// Rotation, degrees, in (-180, 180].
    pub dtheta: f64,
    /// Estimator quality in [0, 1].
    pub q: f64,
}

impl RelativePose {
    pub const ZERO: RelativePose = RelativePose {
        dx: 0.0,
        dy: 0.0,
        dtheta: 0.0,
        q: 0.0,
    };
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Square Cartesian raster of a frame, sensor at the centre cell `(W/2, W/2)`.
///
/// Columns run along the sensor x axis and rows along y.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianImage {
    pub grid: RealGrid,
    pub cell_size: f64,
}

impl CartesianImage {
    pub fn width(&self) -> usize {
        self.grid.cols
    }

    /// Cell containing a sensor-frame point, if inside the image.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = (self.width() / 2) as f64;
        let c = (x / self.cell_size).round() + half;
        let r = (y / self.cell_size).round() + half;
        let w = self.width() as f64;
        (c >= 0.0 && c < w && r >= 0.0 && r < w).then_some((r as usize, c as usize))
    }

    /// Sensor-frame coordinates of a cell centre.
    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        let half = (self.width() / 2) as f64;
        (
            (c as f64 - half) * self.cell_size,
            (r as f64 - half) * self.cell_size,
        )
    }
}

/// How polar frames are rasterised onto the Cartesian grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Every nonzero polar cell is deposited at its nearest Cartesian cell.
    Deposit,
    /// Every Cartesian cell takes the maximum of the polar cells whose
    /// angle and range intervals overlap it, so the image has no gaps
    /// between steering angles.
    Cover,
    /// Every Cartesian cell interpolates the polar frame bilinearly in angle
    /// and range at its centre.
    #[default]
    Bilinear,
}

impl FromStr for Resampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deposit" => Ok(Resampling::Deposit),
            "cover" => Ok(Resampling::Cover),
            "bilinear" => Ok(Resampling::Bilinear),
            other => Err(Error::InvalidParameter(format!(
                "unknown resampling `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Resampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Resampling::Deposit => "deposit",
            Resampling::Cover => "cover",
            Resampling::Bilinear => "bilinear",
        })
    }
}

/// Nearest-cell deposit of every nonzero polar cell; collisions keep the max.
pub fn polar_to_cartesian(frame: &Frame, cell_size: f64, width: usize) -> Result<CartesianImage> {
    polar_to_cartesian_with(frame, cell_size, width, 0.0, Resampling::Deposit)
}

/// As [`polar_to_cartesian`], with every return rotated by `rotation_deg`
/// (counter-clockwise) before deposit.
pub fn polar_to_cartesian_rotated(
    frame: &Frame,
    cell_size: f64,
    width: usize,
    rotation_deg: f64,
) -> Result<CartesianImage> {
    polar_to_cartesian_with(frame, cell_size, width, rotation_deg, Resampling::Deposit)
}

pub fn polar_to_cartesian_with(
    frame: &Frame,
    cell_size: f64,
    width: usize,
    rotation_deg: f64,
    resampling: Resampling,
) -> Result<CartesianImage> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cell size must be positive, got {cell_size}"
        )));
    }
    if width == 0 || width % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "image width must be even and nonzero, got {width}"
        )));
    }
    let half_extent = (width / 2) as f64 * cell_size;
    if frame.axes().d_min() >= half_extent {
        return Err(Error::InvalidParameter(format!(
            "image half-extent {half_extent} m does not reach the minimum range {} m",
            frame.axes().d_min()
        )));
    }
    let mut image = CartesianImage {
        grid: RealGrid::zeros(width, width),
        cell_size,
    };
    match resampling {
        Resampling::Cover => {
            cover(frame, &mut image, rotation_deg);
            return Ok(image);
        }
        Resampling::Bilinear => {
            bilinear(frame, &mut image, rotation_deg);
            return Ok(image);
        }
        Resampling::Deposit => {}
    }
    for n in 0..frame.n_angles() {
        let (s, c) = (frame.angle_deg(n) + rotation_deg).to_radians().sin_cos();
        for (m, &v) in frame.row(n).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let d = frame.range_m(m);
            if let Some((r, col)) = image.cell_of(d * c, d * s) {
                let cur = image.grid.get(r, col);
                if v > cur {
                    image.grid.set(r, col, v);
                }
            }
        }
    }
    Ok(image)
}

fn cover(frame: &Frame, image: &mut CartesianImage, rotation_deg: f64) {
    let axes = *frame.axes();
    let (n_angles, n_bins) = (frame.n_angles() as f64, frame.n_bins() as f64);
    let (d_min, d_step) = (axes.d_min(), axes.range_step());
    let half_cell = image.cell_size / 2.0;
    let half_row = axes.angle_step_deg / 2.0;
    let width = image.width();
    for r in 0..width {
        for c in 0..width {
            let (x, y) = image.cell_center(r, c);
            let rho = x.hypot(y);
            if rho + half_cell < d_min - d_step / 2.0 {
                continue;
            }
            // Range and angle intervals spanned by the cell.
            let m_lo = ((rho - half_cell - d_min) / d_step).round().max(0.0);
            let m_hi = ((rho + half_cell - d_min) / d_step)
                .round()
                .min(n_bins - 1.0);
            if m_lo > m_hi {
                continue;
            }
            let phi = wrap_deg(y.atan2(x).to_degrees() - rotation_deg);
            let spread = if rho > half_cell {
                (half_cell / rho).asin().to_degrees()
            } else {
                180.0
            };
            let lo = ((phi - spread - half_row - axes.angle_start_deg) / axes.angle_step_deg)
                .ceil()
                .max(0.0);
            let hi = ((phi + spread + half_row - axes.angle_start_deg) / axes.angle_step_deg)
                .floor()
                .min(n_angles - 1.0);
            let mut best = 0.0f64;
            let mut n = lo;
            while n <= hi {
                let row = frame.row(n as usize);
                for &v in &row[m_lo as usize..=m_hi as usize] {
                    best = best.max(v);
                }
                n += 1.0;
            }
            if best > 0.0 {
                image.grid.set(r, c, best);
            }
        }
    }
}

fn bilinear(frame: &Frame, image: &mut CartesianImage, rotation_deg: f64) {
    let axes = *frame.axes();
    let (n_angles, n_bins) = (frame.n_angles(), frame.n_bins());
    let (d_min, d_step) = (axes.d_min(), axes.range_step());
    let width = image.width();
    for r in 0..width {
        for c in 0..width {
            let (x, y) = image.cell_center(r, c);
            let fm = (x.hypot(y) - d_min) / d_step;
            if fm < 0.0 || fm > (n_bins - 1) as f64 {
                continue;
            }
            let phi = wrap_deg(y.atan2(x).to_degrees() - rotation_deg);
            let fn_ = (phi - axes.angle_start_deg) / axes.angle_step_deg;
            if fn_ < 0.0 || fn_ > (n_angles - 1) as f64 {
                continue;
            }
            let (n0, m0) = (fn_.floor() as usize, fm.floor() as usize);
            let (n1, m1) = ((n0 + 1).min(n_angles - 1), (m0 + 1).min(n_bins - 1));
            let (a, b) = (fn_ - n0 as f64, fm - m0 as f64);
            let v = (1.0 - a) * ((1.0 - b) * frame.get(n0, m0) + b * frame.get(n0, m1))
                + a * ((1.0 - b) * frame.get(n1, m0) + b * frame.get(n1, m1));
            if v > 0.0 {
                image.grid.set(r, c, v);
            }
        }
    }
}

/// Circularly shifts the rows of a frame by `round(dtheta / angle_step)`;
/// row `n` moves to row `n + shift`.
pub fn rotate_frame(frame: &Frame, dtheta_deg: f64) -> Frame {
    let n_angles = frame.n_angles() as isize;
    let shift = (dtheta_deg / frame.axes().angle_step_deg).round() as isize;
    let out = frame
        .matrix()
        .map_values(|n, m, _| frame.get((n as isize - shift).rem_euclid(n_angles) as usize, m));
    Frame::from_matrix(out, frame.scan_index())
}

/// Relative-pose estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    Fm,
    #[default]
    Sfm,
    Lsm,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Fm => "fm",
            Estimator::Sfm => "sfm",
            Estimator::Lsm => "lsm",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fm" => Ok(Estimator::Fm),
            "sfm" => Ok(Estimator::Sfm),
            "lsm" => Ok(Estimator::Lsm),
            other => Err(Error::InvalidParameter(format!(
                "unknown pose estimator `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inputs available to an estimator for one frame pair.
pub struct FramePair<'a> {
    pub current: &'a Frame,
    pub previous: &'a Frame,
    pub current_scan: &'a ScanVector,
    pub previous_scan: &'a ScanVector,
}

/// Runs the selected estimator on one frame pair.
pub fn estimate_relative_pose(
    estimator: Estimator,
    pair: &FramePair<'_>,
    registration: &RegistrationConfig,
    lsm: &LsmConfig,
) -> Result<RelativePose> {
    match estimator {
        Estimator::Fm => estimate_relative_pose_fm(pair.current, pair.previous, registration),
        Estimator::Sfm => estimate_relative_pose_sfm(pair.current, pair.previous, registration),
        Estimator::Lsm => estimate_relative_pose_lsm(pair.current_scan, pair.previous_scan, lsm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{AngleDelayMatrix, Axes, SPEED_OF_LIGHT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axes(step: f64, range_step: f64) -> Axes {
        Axes {
            angle_start_deg: -90.0,
            angle_step_deg: step,
            t_min: 0.0,
            t_s: 2.0 * range_step / SPEED_OF_LIGHT,
        }
    }

    #[test]
    fn wrap_degrees() {
        assert_eq!(wrap_deg(190.0), -170.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(540.0), 180.0);
        assert_eq!(wrap_deg(-45.0), -45.0);
    }

    #[test]
    fn boresight_return_lands_ahead_of_centre() {
        let mut rows = vec![vec![0.0; 41]; 181];
        rows[90][40] = 1.0; // 0 deg, 2 m at 5 cm bins
        let f = Frame::from_matrix(
            AngleDelayMatrix::from_rows(&rows, axes(1.0, 0.05)).unwrap(),
            0,
        );
        let img = polar_to_cartesian(&f, 0.1, 64).unwrap();
        let nz: Vec<(usize, usize)> = (0..64)
            .flat_map(|r| (0..64).map(move |c| (r, c)))
            .filter(|&(r, c)| img.grid.get(r, c) != 0.0)
            .collect();
        assert_eq!(nz, vec![(32, 52)]);
    }

    #[test]
    fn empty_frame_gives_empty_image() {
        let f = Frame::from_matrix(AngleDelayMatrix::zeros(10, 10, axes(1.0, 0.05)).unwrap(), 0);
        assert!(polar_to_cartesian(&f, 0.1, 16).unwrap().grid.is_all_zero());
    }

    #[test]
    fn image_must_reach_minimum_range() {
        let mut a = axes(1.0, 0.05);
        a.t_min = 2.0 * 5.0 / SPEED_OF_LIGHT;
        let f = Frame::from_matrix(AngleDelayMatrix::zeros(10, 10, a).unwrap(), 0);
        assert!(polar_to_cartesian(&f, 0.1, 16).is_err());
        assert!(polar_to_cartesian(&f, 0.1, 15).is_err());
    }

    #[test]
    fn ring_deposits_stay_on_the_circle() {
        let (n_angles, step) = (360, 1.0);
        let a = Axes {
            angle_start_deg: -180.0,
            ..axes(step, 0.05)
        };
        let mut rows = vec![vec![0.0; 61]; n_angles];
        for row in rows.iter_mut() {
            row[60] = 1.0;
        }
        let f = Frame::from_matrix(AngleDelayMatrix::from_rows(&rows, a).unwrap(), 0);
        let cell = 0.05;
        let img = polar_to_cartesian(&f, cell, 160).unwrap();
        let d = f.range_m(60);
        let mut count = 0;
        for r in 0..160 {
            for c in 0..160 {
                if img.grid.get(r, c) == 0.0 {
                    continue;
                }
                count += 1;
                let (x, y) = img.cell_center(r, c);
                // The cell square (half-cell around its centre) intersects the ring.
                let nearest = (x.hypot(y) - d).abs();
                assert!(
                    nearest <= cell * std::f64::consts::FRAC_1_SQRT_2 + 1e-12,
                    "{nearest}"
                );
            }
        }
        assert!(count > 100);
    }

    #[test]
    fn rotate_frame_shifts_rows_with_wraparound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let f = Frame::from_matrix(
            AngleDelayMatrix::from_rows(&rows, axes(2.0, 0.1)).unwrap(),
            4,
        );
        assert_eq!(rotate_frame(&f, 0.0), f);
        let r = rotate_frame(&f, 2.0);
        assert_eq!(r.row(1), f.row(0));
        assert_eq!(r.row(0), f.row(11));
        assert_eq!(r.scan_index(), 4);
        for deg in [-22.0, -6.0, 4.0, 18.0, 30.0] {
            assert_eq!(rotate_frame(&rotate_frame(&f, deg), -deg), f);
        }
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in [Estimator::Fm, Estimator::Sfm, Estimator::Lsm] {
            assert_eq!(e.as_str().parse::<Estimator>().unwrap(), e);
        }
        assert!("icp".parse::<Estimator>().is_err());
    }
}

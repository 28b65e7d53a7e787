use super::spectrum::{fft2, phase_correlation, phase_correlation_boxed, RealGrid};
use super::{polar_to_cartesian_with, wrap_deg, CartesianImage, RelativePose, Resampling};
use crate::error::{Error, Result};
use crate::preprocess::{AngleDelayMatrix, Frame};

/// Parameters shared by the FFT-based estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    /// Cartesian cell size, meters.
    pub cell_size: f64,
    /// Cartesian image width in cells (even).
    pub image_size: usize,
    /// Hann-window Cartesian images before the rotation stage.
    pub window: bool,
    /// Hann-window Cartesian images before the translation stage.
    pub translation_window: bool,
    /// Parabolic sub-cell refinement of the translation peak.
    pub subpixel: bool,
    /// FM only: test both `dtheta` and `dtheta + 180` at the translation stage.
    pub resolve_half_turn: bool,
    /// Polar to Cartesian rasterisation.
    pub resampling: Resampling,
    /// Steering rows within this many degrees of either end of the sweep are
    /// left out of the Cartesian images. The outermost beams also collect
    /// echoes from behind the sensor, which pile up on the sweep edges at
    /// the same place in every image.
    pub edge_guard_deg: f64,
    /// Before rasterising, divide every range column by its maximum and
    /// raise it to this power. Near and far reflectors then weigh alike and
    /// each beam-widened return narrows towards its true bearing.
    pub column_power: Option<f64>,
    /// Rotation stages weigh every return by `range^range_gain`. Distant
    /// returns barely move in bearing when the sensor translates, so they
    /// carry the rotation most cleanly.
    pub range_gain: f64,
    /// The translation peak is searched on the correlation surface summed
    /// over this odd square of cells. A sub-cell shift spreads its energy over
    /// neighbouring cells where a spurious spike does not.
    pub peak_box: usize,
    /// FM rotation stage: steering rows fade in over this many degrees from
    /// either end of the sweep. A hard sweep edge is a straight line fixed in
    /// the sensor frame and biases the spectrum towards zero rotation.
    pub spectrum_taper_deg: f64,
    /// FM rotation stage: radii of the magnitude spectrum kept for polar
    /// matching, as fractions of the Nyquist radius.
    pub spectrum_band: (f64, f64),
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.02,
            image_size: 1024,
            window: true,
            translation_window: false,
            subpixel: false,
            resolve_half_turn: true,
            resampling: Resampling::Bilinear,
            edge_guard_deg: 0.0,
            column_power: Some(2.0),
            range_gain: 2.0,
            peak_box: 3,
            spectrum_taper_deg: 30.0,
            spectrum_band: (0.05, 0.5),
        }
    }
}

fn check_pair(a: &Frame, b: &Frame) -> Result<()> {
    if a.n_angles() != b.n_angles() || a.n_bins() != b.n_bins() || a.axes() != b.axes() {
        return Err(Error::ShapeMismatch(format!(
            "frames {} ({}x{}) and {} ({}x{}) do not share axes",
            a.scan_index(),
            a.n_angles(),
            a.n_bins(),
            b.scan_index(),
            b.n_angles(),
            b.n_bins()
        )));
    }
    Ok(())
}

/// Which estimation stage a frame is being prepared for.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Rotation,
    Spectrum,
    Translation,
}

fn check_config(cfg: &RegistrationConfig) -> Result<()> {
    let guard = cfg.edge_guard_deg;
    if !(guard >= 0.0 && guard.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "edge guard must be nonnegative, got {guard}"
        )));
    }
    if let Some(p) = cfg.column_power {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "column power must be positive, got {p}"
            )));
        }
    }
    let taper = cfg.spectrum_taper_deg;
    if !(taper >= 0.0 && taper.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "spectrum taper must be nonnegative, got {taper}"
        )));
    }
    let (lo, hi) = cfg.spectrum_band;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "spectrum band must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    if !cfg.range_gain.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "range gain must be finite, got {}",
            cfg.range_gain
        )));
    }
    Ok(())
}

/// Applies the edge guard and the stage's weighting to a frame.
fn weighted(frame: &Frame, cfg: &RegistrationConfig, stage: Stage) -> Result<Frame> {
    check_config(cfg)?;
    let (n_angles, n_bins) = (frame.n_angles(), frame.n_bins());
    let mut values = frame.values().to_vec();
    let guard = cfg.edge_guard_deg;
    if guard > 0.0 {
        let (first, last) = (frame.angle_deg(0), frame.angle_deg(n_angles - 1));
        let (lo, hi) = (first.min(last) + guard, first.max(last) - guard);
        if lo > hi {
            return Err(Error::InvalidParameter(format!(
                "edge guard {guard} deg leaves no steering rows"
            )));
        }
        for n in 0..n_angles {
            let a = frame.angle_deg(n);
            if a < lo - 1e-9 || a > hi + 1e-9 {
                values[n * n_bins..(n + 1) * n_bins].fill(0.0);
            }
        }
    }
    let taper = cfg.spectrum_taper_deg;
    let full_circle = n_angles as f64 * frame.axes().angle_step_deg.abs() >= 360.0 - 1e-9;
    if taper > 0.0 && !full_circle && matches!(stage, Stage::Spectrum) {
        let (first, last) = (frame.angle_deg(0), frame.angle_deg(n_angles - 1));
        let (lo, hi) = (first.min(last), first.max(last));
        for n in 0..n_angles {
            let e = (frame.angle_deg(n) - lo).min(hi - frame.angle_deg(n));
            if e < taper {
                let w = 0.5 * (1.0 - (std::f64::consts::PI * e / taper).cos());
                values[n * n_bins..(n + 1) * n_bins]
                    .iter_mut()
                    .for_each(|v| *v *= w);
            }
        }
    }
    match stage {
        Stage::Rotation | Stage::Spectrum if cfg.range_gain != 0.0 => {
            for m in 0..n_bins {
                let g = frame.range_m(m).max(0.0).powf(cfg.range_gain);
                for n in 0..n_angles {
                    values[n * n_bins + m] *= g;
                }
            }
        }
        Stage::Translation => {
            if let Some(p) = cfg.column_power {
                for m in 0..n_bins {
                    let max = (0..n_angles)
                        .map(|n| values[n * n_bins + m])
                        .fold(0.0, f64::max);
                    if max > 0.0 {
                        for n in 0..n_angles {
                            let v = &mut values[n * n_bins + m];
                            *v = (*v / max).powf(p);
                        }
                    }
                }
            }
        }
        Stage::Rotation | Stage::Spectrum => {}
    }
    Ok(Frame::from_matrix(
        AngleDelayMatrix::new(values, n_angles, n_bins, *frame.axes())?,
        frame.scan_index(),
    ))
}

fn rasterize(
    frame: &Frame,
    cfg: &RegistrationConfig,
    rotation_deg: f64,
    stage: Stage,
) -> Result<CartesianImage> {
    let w = weighted(frame, cfg, stage)?;
    polar_to_cartesian_with(
        &w,
        cfg.cell_size,
        cfg.image_size,
        rotation_deg,
        cfg.resampling,
    )
}

fn frame_grid(frame: &Frame) -> RealGrid {
    RealGrid {
        rows: frame.n_angles(),
        cols: frame.n_bins(),
        data: frame.values().to_vec(),
    }
}

fn prepared(image: CartesianImage, window: bool) -> RealGrid {
    if window {
        image.grid.hann_windowed()
    } else {
        image.grid
    }
}

/// Bilinear sample of a grid at fractional `(row, col)`; zero outside.
fn bilinear(grid: &RealGrid, row: f64, col: f64) -> f64 {
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let mut acc = 0.0;
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let (r, c) = (r0 + dr, c0 + dc);
            if r >= 0.0 && c >= 0.0 && (r as usize) < grid.rows && (c as usize) < grid.cols {
                acc += wr * wc * grid.get(r as usize, c as usize);
            }
        }
    }
    acc
}

/// Polar resampling of a centred magnitude spectrum over the upper half-plane.
///
/// Rows are `n_theta` angles spanning [0, 180) degrees, columns are radii
/// from DC out to the Nyquist radius; radii outside `band` stay zero.
fn magnitude_polar(image: &RealGrid, n_theta: usize, band: (f64, f64)) -> RealGrid {
    let mag = fft2(image).centered_magnitude();
    let n_r = image.cols / 2;
    let (cr, cc) = ((image.rows / 2) as f64, (image.cols / 2) as f64);
    let mut out = RealGrid::zeros(n_theta, n_r);
    for j in 0..n_theta {
        let (s, c) = (std::f64::consts::PI * j as f64 / n_theta as f64).sin_cos();
        for i in 0..n_r {
            let r = i as f64;
            if r < band.0 * n_r as f64 || r > band.1 * n_r as f64 {
                continue;
            }
            out.set(j, i, bilinear(&mag, cr + r * s, cc + r * c));
        }
    }
    out
}

/// Rotation by Fourier-Mellin: returns `(dtheta_deg, q)`, `dtheta` in (-90, 90].
///
/// FFT magnitudes are point-symmetric, so the result is only defined modulo
/// 180 degrees; [`estimate_relative_pose_fm`] resolves the ambiguity.
pub fn estimate_rotation_fm(
    current: &Frame,
    previous: &Frame,
    cfg: &RegistrationConfig,
) -> Result<(f64, f64)> {
    check_pair(current, previous)?;
    let step = current.axes().angle_step_deg;
    let n_theta = ((180.0 / step).round() as usize).max(2);
    let bin = 180.0 / n_theta as f64;
    let cur = prepared(rasterize(current, cfg, 0.0, Stage::Spectrum)?, cfg.window);
    let prev = prepared(rasterize(previous, cfg, 0.0, Stage::Spectrum)?, cfg.window);
    if cur.is_all_zero() || prev.is_all_zero() {
        return Ok((0.0, 0.0));
    }
    let peak = phase_correlation(
        &magnitude_polar(&prev, n_theta, cfg.spectrum_band),
        &magnitude_polar(&cur, n_theta, cfg.spectrum_band),
        false,
    )?;
    let mut dtheta = peak.shift_rows as f64 * bin;
    if dtheta <= -90.0 {
        dtheta += 180.0;
    } else if dtheta > 90.0 {
        dtheta -= 180.0;
    }
    Ok((dtheta, peak.quality))
}

/// Rotation by phase-correlating the polar frames directly: `(dtheta_deg, q)`.
pub fn estimate_rotation_sfm(
    current: &Frame,
    previous: &Frame,
    cfg: &RegistrationConfig,
) -> Result<(f64, f64)> {
    check_pair(current, previous)?;
    let peak = phase_correlation(
        &frame_grid(&weighted(previous, cfg, Stage::Rotation)?),
        &frame_grid(&weighted(current, cfg, Stage::Rotation)?),
        false,
    )?;
    Ok((
        wrap_deg(peak.shift_rows as f64 * current.axes().angle_step_deg),
        peak.quality,
    ))
}

/// Translation after compensating `previous` by `dtheta_deg`; returns the
/// sensor displacement in the previous sensor frame and the peak quality.
fn estimate_translation(
    current: &Frame,
    previous: &Frame,
    dtheta_deg: f64,
    cfg: &RegistrationConfig,
) -> Result<(f64, f64, f64)> {
    let cur = prepared(
        rasterize(current, cfg, 0.0, Stage::Translation)?,
        cfg.translation_window,
    );
    let rotated = prepared(
        rasterize(previous, cfg, dtheta_deg, Stage::Translation)?,
        cfg.translation_window,
    );
    let peak = phase_correlation_boxed(&rotated, &cur, cfg.subpixel, cfg.peak_box)?;
    // Scene points move by -R(dtheta) * displacement between the two images.
    let (sx, sy) = (peak.cols * cfg.cell_size, peak.rows * cfg.cell_size);
    let (s, c) = dtheta_deg.to_radians().sin_cos();
    let dx = -(c * sx + s * sy);
    let dy = -(-s * sx + c * sy);
    Ok((dx, dy, peak.quality))
}

fn finish(
    current: &Frame,
    previous: &Frame,
    dtheta: f64,
    q_rot: f64,
    candidates: &[f64],
    cfg: &RegistrationConfig,
) -> Result<RelativePose> {
    if q_rot == 0.0 {
        return Ok(RelativePose::ZERO);
    }
    let mut best: Option<RelativePose> = None;
    for &cand in candidates {
        let (dx, dy, q_t) = estimate_translation(current, previous, cand, cfg)?;
        if best.map_or(true, |b| q_t > b.q) {
            best = Some(RelativePose {
                dx,
                dy,
                dtheta: cand,
                q: q_t,
            });
        }
    }
    let mut pose = best.unwrap_or(RelativePose {
        dtheta,
        ..RelativePose::ZERO
    });
    pose.q = pose.q.min(q_rot);
    Ok(pose)
}

/// Fourier-Mellin relative pose between `previous` and `current`.
pub fn estimate_relative_pose_fm(
    current: &Frame,
    previous: &Frame,
    cfg: &RegistrationConfig,
) -> Result<RelativePose> {
    let (dtheta, q_rot) = estimate_rotation_fm(current, previous, cfg)?;
    let candidates = if cfg.resolve_half_turn {
        vec![dtheta, wrap_deg(dtheta + 180.0)]
    } else {
        vec![dtheta]
    };
    finish(current, previous, dtheta, q_rot, &candidates, cfg)
}

/// Simplified Fourier-Mellin relative pose.
pub fn estimate_relative_pose_sfm(
    current: &Frame,
    previous: &Frame,
    cfg: &RegistrationConfig,
) -> Result<RelativePose> {
    let (dtheta, q_rot) = estimate_rotation_sfm(current, previous, cfg)?;
    finish(current, previous, dtheta, q_rot, &[dtheta], cfg)
}

//! Synthetic backscatter scans of a 2D polygonal scene.
//!
//! The sensor sweeps a directional antenna over the steering grid. For each
//! steering angle the echo power is the sum, over a fine azimuth grid of rays
//! cast from the sensor, of `g(psi - phi)^2 * reflectivity * (d_ref / d)^2`
//! deposited at the delay bin of the ray's first hit. Rays add incoherently;
//! the matrix holds the square root of the accumulated power. The pattern `g` is a
//! Gaussian main lobe with a constant sidelobe floor; the floor lets echoes
//! from other directions leak into every steering angle (ghosts).
//!
//! The azimuth grid is fixed to the sensor heading, so two scans taken from
//! the same position at headings a whole steering bin apart are exact row
//! shifts of each other.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::preprocess::{AngleDelayMatrix, Axes, NO_RETURN, SPEED_OF_LIGHT};
use crate::track::Pose;

/// Wall segment with its reflectivity in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub reflectivity: f64,
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64), reflectivity: f64) -> Result<Self> {
        if !(reflectivity > 0.0 && reflectivity <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "reflectivity {reflectivity} is outside (0, 1]"
            )));
        }
        if !(a.0.is_finite() && a.1.is_finite() && b.0.is_finite() && b.1.is_finite()) {
            return Err(Error::InvalidParameter(
                "segment endpoints must be finite".into(),
            ));
        }
        if (b.0 - a.0).hypot(b.1 - a.1) <= 0.0 {
            return Err(Error::InvalidParameter("degenerate segment".into()));
        }
        Ok(Self { a, b, reflectivity })
    }

    /// Ray parameter `t > 0` of the intersection with `origin + t * dir`.
    pub fn intersect(&self, origin: (f64, f64), dir: (f64, f64)) -> Option<f64> {
        let e = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let denom = dir.0 * e.1 - dir.1 * e.0;
        if denom == 0.0 {
            return None;
        }
        let w = (self.a.0 - origin.0, self.a.1 - origin.1);
        let t = (w.0 * e.1 - w.1 * e.0) / denom;
        let u = (w.0 * dir.1 - w.1 * dir.0) / denom;
        (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }
}

/// Nearest hit of a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub reflectivity: f64,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl Extent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min.0 && x <= self.max.0 && y >= self.min.1 && y <= self.max.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub segments: Vec<Segment>,
    /// Region where the sensor may stand; the segments' bounding box if unset.
    pub bounds: Option<Extent>,
}

impl SceneMap {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("scene has no segments".into()));
        }
        Ok(Self {
            segments,
            bounds: None,
        })
    }

    pub fn with_bounds(mut self, min: (f64, f64), max: (f64, f64)) -> Self {
        self.bounds = Some(Extent { min, max });
        self
    }

    pub fn extent(&self) -> Extent {
        if let Some(b) = self.bounds {
            return b;
        }
        let mut e = Extent {
            min: (f64::INFINITY, f64::INFINITY),
            max: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for s in &self.segments {
            for p in [s.a, s.b] {
                e.min = (e.min.0.min(p.0), e.min.1.min(p.1));
                e.max = (e.max.0.max(p.0), e.max.1.max(p.1));
            }
        }
        e
    }

    /// Axis-aligned rectangular box as four segments.
    pub fn rectangle(min: (f64, f64), max: (f64, f64), reflectivity: f64) -> Result<Vec<Segment>> {
        let corners = [min, (max.0, min.1), max, (min.0, max.1)];
        (0..4)
            .map(|i| Segment::new(corners[i], corners[(i + 1) % 4], reflectivity))
            .collect()
    }

    /// Reflected about the x axis.
    pub fn mirrored_x(&self) -> Self {
        let flip = |p: (f64, f64)| (p.0, -p.1);
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    a: flip(s.a),
                    b: flip(s.b),
                    reflectivity: s.reflectivity,
                })
                .collect(),
            bounds: self.bounds.map(|b| Extent {
                min: (b.min.0, -b.max.1),
                max: (b.max.0, -b.min.1),
            }),
        }
    }

    /// A 10.2 m x 8.6 m room with furniture, sized around the built-in
    /// trajectories (which start at the origin heading along +x).
    pub fn laboratory() -> Self {
        let mut segs = Vec::new();
        let mut add = |v: Result<Vec<Segment>>| segs.extend(v.expect("static scene"));
        add(SceneMap::rectangle((-4.0, -2.8), (6.2, 5.8), 0.5));
        for (a, b, r) in [
            ((0.8, 1.3), (1.2, 1.7), 1.0),
            ((1.9, 1.4), (2.1, 1.6), 0.9),
            ((4.8, -1.5), (5.6, -0.5), 0.6),
            ((2.5, 4.2), (3.3, 4.8), 0.5),
            ((-2.8, -1.8), (-2.2, -0.8), 0.7),
            ((-3.2, 3.6), (-2.6, 4.6), 0.4),
            ((2.0, -1.6), (2.6, -1.1), 0.9),
            ((3.6, -2.2), (4.0, -1.9), 0.7),
            ((-0.6, -1.4), (-0.3, -1.1), 0.9),
            ((-1.6, 4.6), (-1.0, 5.2), 0.6),
            ((1.6, 5.0), (2.2, 5.4), 0.8),
            ((-3.6, 0.4), (-3.2, 0.9), 0.9),
            ((5.4, 0.6), (5.9, 1.3), 0.7),
        ] {
            add(SceneMap::rectangle(a, b, r));
        }
        for (a, b, r) in [
            ((5.0, 2.0), (5.3, 3.1), 0.9),
            ((-1.2, -2.0), (0.6, -2.3), 0.5),
            ((3.9, 0.5), (4.3, 1.2), 0.8),
            ((-2.3, 1.0), (-2.0, 1.8), 0.8),
            ((0.2, 4.3), (1.0, 4.0), 0.7),
            ((4.2, 3.6), (4.8, 4.2), 0.9),
        ] {
            add(Segment::new(a, b, r).map(|s| vec![s]));
        }
        SceneMap {
            segments: segs,
            bounds: None,
        }
    }

    /// Parses `x1 y1 x2 y2 reflectivity` lines and an optional
    /// `bounds xmin ymin xmax ymax` line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut bounds = None;
        for (i, line) in text.lines().enumerate() {
            let mut line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("scene line {}", i + 1);
            let is_bounds = line.starts_with("bounds");
            if is_bounds {
                line = line["bounds".len()..].trim();
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::parse(&loc, format!("`{t}`: {e}")))
                })
                .collect::<Result<_>>()?;
            if is_bounds {
                if v.len() != 4 || !(v[0] < v[2] && v[1] < v[3]) {
                    return Err(Error::parse(
                        &loc,
                        "bounds need `xmin ymin xmax ymax` with min < max",
                    ));
                }
                bounds = Some(Extent {
                    min: (v[0], v[1]),
                    max: (v[2], v[3]),
                });
                continue;
            }
            if v.len() != 5 {
                return Err(Error::parse(
                    &loc,
                    format!("expected 5 fields, found {}", v.len()),
                ));
            }
            segments.push(
                Segment::new((v[0], v[1]), (v[2], v[3]), v[4])
                    .map_err(|e| Error::parse(&loc, e.to_string()))?,
            );
        }
        Ok(SceneMap {
            bounds,
            ..SceneMap::new(segments)?
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# x1 y1 x2 y2 reflectivity\n");
        if let Some(b) = self.bounds {
            out.push_str(&format!(
                "bounds {} {} {} {}\n",
                b.min.0, b.min.1, b.max.0, b.max.1
            ));
        }
        for s in &self.segments {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                s.a.0, s.a.1, s.b.0, s.b.1, s.reflectivity
            ));
        }
        out
    }
}

/// Nearest segment hit along a ray; `direction` need not be normalised.
/// Index and distance of the first segment along a unit direction.
fn nearest_segment(scene: &SceneMap, origin: (f64, f64), dir: (f64, f64)) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scene.segments.iter().enumerate() {
        if let Some(t) = s.intersect(origin, dir) {
            if best.map_or(true, |(_, b)| t < b) {
                best = Some((i, t));
            }
        }
    }
    best
}

pub fn raycast(scene: &SceneMap, origin: (f64, f64), direction: (f64, f64)) -> Option<Hit> {
    let norm = direction.0.hypot(direction.1);
    if !(norm > 0.0) {
        return None;
    }
    let dir = (direction.0 / norm, direction.1 / norm);
    let mut best: Option<Hit> = None;
    for s in &scene.segments {
        if let Some(t) = s.intersect(origin, dir) {
            if best.map_or(true, |b| t < b.distance) {
                best = Some(Hit {
                    distance: t,
                    reflectivity: s.reflectivity,
                });
            }
        }
    }
    best
}

/// Antenna power pattern: Gaussian main lobe over a constant sidelobe floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaPattern {
    /// Half-power beamwidth, degrees.
    pub hpbw_deg: f64,
    /// Sidelobe floor relative to the peak, dB; `None` for no floor.
    pub sidelobe_floor_db: Option<f64>,
    /// Boresight gain, dBi (bookkeeping only; patterns are peak-normalised).
    pub gain_dbi: f64,
}

impl Default for AntennaPattern {
    fn default() -> Self {
        Self {
            hpbw_deg: 18.0,
            sidelobe_floor_db: Some(-15.0),
            gain_dbi: 20.0,
        }
    }
}

impl AntennaPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.hpbw_deg > 0.0) {
            return Err(Error::InvalidParameter("beamwidth must be positive".into()));
        }
        if let Some(db) = self.sidelobe_floor_db {
            if !(db < 0.0) {
                return Err(Error::InvalidParameter(
                    "sidelobe floor must be below the peak".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Peak-normalised one-antenna power gain at `offset_deg` from boresight.
pub fn pattern_gain(pattern: &AntennaPattern, offset_deg: f64) -> f64 {
    let psi = crate::pose::wrap_deg(offset_deg);
    let main =
        (-4.0 * std::f64::consts::LN_2 * psi * psi / (pattern.hpbw_deg * pattern.hpbw_deg)).exp();
    match pattern.sidelobe_floor_db {
        Some(db) => main.max(10f64.powf(db / 10.0)),
        None => main,
    }
}

/// Scan synthesis parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_angles: usize,
    pub angle_start_deg: f64,
    pub angle_step_deg: f64,
    pub n_bins: usize,
    pub t_min: f64,
    pub t_s: f64,
    /// Complex noise standard deviation relative to the strongest echo;
    /// zero for a noiseless scan.
    pub noise_floor: f64,
    /// Azimuth integration step, degrees; must divide 360.
    pub azimuth_step_deg: f64,
    /// Reference distance of the spreading loss, meters.
    pub d_ref: f64,
    pub pattern: AntennaPattern,
    pub seed: u64,
}

impl Default for SimConfig {
    /// 181 steering angles at 1 degree and 8501 delay bins of 1.56 ps.
    fn default() -> Self {
        Self {
            n_angles: 181,
            angle_start_deg: -90.0,
            angle_step_deg: 1.0,
            n_bins: 8501,
            t_min: 0.0,
            t_s: 1.56e-12,
            noise_floor: 0.0,
            azimuth_step_deg: 0.25,
            d_ref: 1.0,
            pattern: AntennaPattern::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Room-scale variant: same steering grid, 1 cm range bins out to 9 m.
    pub fn room() -> Self {
        Self {
            n_bins: 900,
            t_s: 2.0 * 0.01 / SPEED_OF_LIGHT,
            ..Self::default()
        }
    }

    pub fn axes(&self) -> Axes {
        Axes {
            angle_start_deg: self.angle_start_deg,
            angle_step_deg: self.angle_step_deg,
            t_min: self.t_min,
            t_s: self.t_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.axes().validate()?;
        self.pattern.validate()?;
        if self.n_angles == 0 || self.n_bins == 0 {
            return Err(Error::InvalidParameter(
                "simulator grid must be nonempty".into(),
            ));
        }
        let per_turn = 360.0 / self.azimuth_step_deg;
        if !(self.azimuth_step_deg > 0.0) || (per_turn - per_turn.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "azimuth step {} does not divide 360",
                self.azimuth_step_deg
            )));
        }
        if !(self.noise_floor >= 0.0 && self.d_ref > 0.0) {
            return Err(Error::InvalidParameter(
                "noise floor and reference distance must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn bin_of_range(&self, d: f64) -> Option<usize> {
        let m = ((2.0 * d / SPEED_OF_LIGHT - self.t_min) / self.t_s).round();
        (m >= 0.0 && m < self.n_bins as f64).then_some(m as usize)
    }
}

/// A synthetic scan with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScan {
    pub matrix: AngleDelayMatrix,
    /// Exact first-hit range along each steering direction, [`NO_RETURN`] on a miss.
    pub first_hit: Vec<f64>,
}

/// Global direction of a sensor-frame angle (counter-clockwise from forward).
fn world_direction(pose: &Pose, local_deg: f64) -> (f64, f64) {
    let (s, c) = local_deg.to_radians().sin_cos();
    let (x, y) = pose.transform_point(c, s);
    (x - pose.x, y - pose.y)
}

pub fn synthesize_scan(
    scene: &SceneMap,
    pose: &Pose,
    cfg: &SimConfig,
    scan_index: usize,
) -> Result<SyntheticScan> {
    cfg.validate()?;
    let extent = scene.extent();
    if !pose.is_finite() || !extent.contains(pose.x, pose.y) {
        return Err(Error::PoseOutsideScene {
            x: pose.x,
            y: pose.y,
        });
    }
    let origin = (pose.x, pose.y);
    let n_rays = (360.0 / cfg.azimuth_step_deg).round() as usize;
    let step = 360.0 / n_rays as f64;
    let range_step = cfg.axes().range_step();
    let hits: Vec<Option<(usize, f64)>> = (0..n_rays)
        .map(|j| nearest_segment(scene, origin, world_direction(pose, j as f64 * step)))
        .collect();
    // (local angle, bin, weight without pattern) of every sample that lands in range.
    let mut rays: Vec<(f64, usize, f64)> = Vec::with_capacity(2 * n_rays);
    let mut deposit = |psi: f64, distance: f64, reflectivity: f64, weight: f64| {
        if let Some(m) = cfg.bin_of_range(distance) {
            let spread = (cfg.d_ref / distance).powi(2);
            rays.push((
                crate::pose::wrap_deg(psi),
                m,
                reflectivity * spread * weight,
            ));
        }
    };
    // Each azimuth interval is integrated on its own. When both ends land on
    // the same segment the interval is subdivided finely enough that every
    // delay bin the segment spans receives its share.
    for j in 0..n_rays {
        let (a, b) = (hits[j], hits[(j + 1) % n_rays]);
        let psi0 = j as f64 * step;
        match (a, b) {
            (Some((sa, da)), Some((sb, db))) if sa == sb => {
                let seg = &scene.segments[sa];
                let n = ((da - db).abs() / (0.5 * range_step)).ceil().max(1.0) as usize;
                for i in 0..n {
                    let psi = psi0 + (i as f64 + 0.5) / n as f64 * step;
                    let d = seg
                        .intersect(origin, world_direction(pose, psi))
                        .unwrap_or(if i < n / 2 { da } else { db });
                    deposit(psi, d, seg.reflectivity, step / n as f64);
                }
            }
            _ => {
                for (h, psi) in [(a, psi0), (b, psi0 + step)] {
                    if let Some((si, d)) = h {
                        deposit(psi, d, scene.segments[si].reflectivity, 0.5 * step);
                    }
                }
            }
        }
    }
    let axes = cfg.axes();
    let mut values = vec![0.0; cfg.n_angles * cfg.n_bins];
    let mut first_hit = Vec::with_capacity(cfg.n_angles);
    for n in 0..cfg.n_angles {
        let phi = axes.angle_deg(n);
        let row = &mut values[n * cfg.n_bins..(n + 1) * cfg.n_bins];
        for &(psi, m, w) in &rays {
            let g = pattern_gain(&cfg.pattern, psi - phi);
            row[m] += g * g * w;
        }
        first_hit.push(
            raycast(scene, origin, world_direction(pose, phi)).map_or(NO_RETURN, |h| h.distance),
        );
    }
    for v in values.iter_mut() {
        *v = v.sqrt();
    }
    if cfg.noise_floor > 0.0 {
        let peak = values.iter().copied().fold(0.0, f64::max);
        let sigma = cfg.noise_floor * peak;
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (scan_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        for v in values.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v = (Complex64::new(*v, 0.0)
                + Complex64::new(re, im) * (sigma / std::f64::consts::SQRT_2))
                .norm();
        }
    }
    let matrix = AngleDelayMatrix::new(values, cfg.n_angles, cfg.n_bins, axes)?;
    Ok(SyntheticScan { matrix, first_hit })
}

/// Built-in trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Nine poses 0.25 m apart along +x, heading along the motion.
    LineBoresight,
    /// The same positions, heading perpendicular to the motion.
    LineBroadside,
    /// 46 poses on a 5 m x 3 m stadium-shaped loop.
    Oval,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "line-boresight" => Ok(Self::LineBoresight),
            "line-broadside" => Ok(Self::LineBroadside),
            "oval" => Ok(Self::Oval),
            other => Err(Error::InvalidParameter(format!(
                "unknown trajectory `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LineBoresight => "line-boresight",
            Self::LineBroadside => "line-broadside",
            Self::Oval => "oval",
        })
    }
}

/// Heading whose forward axis `(cos t, -sin t)` points along `(dx, dy)`.
fn heading_along(dx: f64, dy: f64) -> f64 {
    (-dy).atan2(dx)
}

pub fn generate_trajectory(kind: TrajectoryKind) -> Vec<Pose> {
    match kind {
        TrajectoryKind::LineBoresight => (0..9)
            .map(|i| Pose::new(0.25 * i as f64, 0.0, 0.0))
            .collect(),
        TrajectoryKind::LineBroadside => (0..9)
            .map(|i| Pose::new(0.25 * i as f64, 0.0, std::f64::consts::FRAC_PI_2))
            .collect(),
        TrajectoryKind::Oval => oval(2.0, 1.5, 5, 18),
    }
}

/// Stadium loop starting at the origin along +x: straight of `length`
/// in `straight_steps`, then a left half-turn of `radius` in `arc_steps`,
/// and back. The closing pose (equal to the start) is omitted.
pub fn oval(length: f64, radius: f64, straight_steps: usize, arc_steps: usize) -> Vec<Pose> {
    let mut poses = Vec::new();
    let step = length / straight_steps as f64;
    let dphi = std::f64::consts::PI / arc_steps as f64;
    // Bottom straight, heading +x.
    for i in 0..straight_steps {
        poses.push(Pose::new(i as f64 * step, 0.0, 0.0));
    }
    // Right half-turn around (length, radius).
    for i in 0..arc_steps {
        let a = -std::f64::consts::FRAC_PI_2 + i as f64 * dphi;
        let (s, c) = a.sin_cos();
        poses.push(Pose::new(
            length + radius * c,
            radius + radius * s,
            heading_along(-s, c),
        ));
    }
    // Top straight, heading -x.
    for i in 0..straight_steps {
        poses.push(Pose::new(
            length - i as f64 * step,
            2.0 * radius,
            heading_along(-1.0, 0.0),
        ));
    }
    // Left half-turn around (0, radius).
    for i in 0..arc_steps {
        let a = std::f64::consts::FRAC_PI_2 + i as f64 * dphi;
        let (s, c) = a.sin_cos();
        poses.push(Pose::new(
            radius * c,
            radius + radius * s,
            heading_along(-s, c),
        ));
    }
    poses
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn wall_scene(x: f64) -> SceneMap {
        SceneMap::new(vec![Segment::new((x, -5.0), (x, 5.0), 1.0).unwrap()])
            .unwrap()
            .with_bounds((-5.0, -5.0), (5.0, 5.0))
    }

    #[test]
    fn pattern_values() {
        let p = AntennaPattern::default();
        assert_eq!(pattern_gain(&p, 0.0), 1.0);
        let pencil = AntennaPattern {
            sidelobe_floor_db: None,
            ..p
        };
        assert!((pattern_gain(&pencil, 9.0) - 0.5).abs() < 1e-15);
        assert!((pattern_gain(&p, 90.0) - 10f64.powf(-1.5)).abs() < 1e-15);
        assert!((pattern_gain(&pencil, 90.0) / 2f64.powi(-100) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raycast_cases() {
        let s = wall_scene(3.0);
        assert_eq!(raycast(&s, (0.0, 0.0), (1.0, 0.0)).unwrap().distance, 3.0);
        assert!(raycast(&s, (0.0, 0.0), (-1.0, 0.0)).is_none());
        assert!(raycast(&s, (0.0, 0.0), (0.0, 1.0)).is_none());
    }

    #[test]
    fn raycast_matches_exhaustive_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let segs: Vec<Segment> = (0..8)
                .map(|_| {
                    let a = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                    let b = (
                        a.0 + rng.gen_range(0.1..3.0),
                        a.1 + rng.gen_range(-3.0..3.0),
                    );
                    Segment::new(a, b, rng.gen_range(0.1..1.0)).unwrap()
                })
                .collect();
            let scene = SceneMap::new(segs.clone()).unwrap();
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (o, d) = (
                (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                (ang.cos(), ang.sin()),
            );
            // Oracle: solve the 2x2 system for every segment.
            let mut best: Option<(f64, f64)> = None;
            for s in &segs {
                let m = nalgebra::Matrix2::new(d.0, s.a.0 - s.b.0, d.1, s.a.1 - s.b.1);
                if let Some(inv) = m.try_inverse() {
                    let sol = inv * nalgebra::Vector2::new(s.a.0 - o.0, s.a.1 - o.1);
                    if sol[0] > 0.0
                        && (0.0..=1.0).contains(&sol[1])
                        && best.map_or(true, |b| sol[0] < b.0)
                    {
                        best = Some((sol[0], s.reflectivity));
                    }
                }
            }
            let got = raycast(&scene, o, d);
            match (got, best) {
                (Some(h), Some((t, r))) => {
                    assert!((h.distance - t).abs() < 1e-9);
                    assert_eq!(h.reflectivity, r);
                }
                (None, None) => {}
                other => panic!("{other:?}"),
            }
        }
    }

    fn small_cfg() -> SimConfig {
        SimConfig {
            n_bins: 500,
            t_s: 2.0 * 0.01 / SPEED_OF_LIGHT,
            azimuth_step_deg: 0.5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn boresight_wall_peaks_at_its_delay_bin() {
        let mut cfg = small_cfg();
        cfg.pattern.sidelobe_floor_db = None;
        let scan = synthesize_scan(&wall_scene(3.0), &Pose::default(), &cfg, 0).unwrap();
        let row = scan.matrix.row(90);
        let argmax = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        let expected = ((2.0 * 3.0 / SPEED_OF_LIGHT - cfg.t_min) / cfg.t_s).round() as usize;
        assert_eq!(argmax, expected);
        assert_eq!(scan.first_hit[90], 3.0);
        assert_eq!(scan.first_hit[0], NO_RETURN);
    }

    #[test]
    fn pose_outside_scene_is_rejected() {
        let scene = SceneMap::laboratory();
        let err = synthesize_scan(&scene, &Pose::new(50.0, 0.0, 0.0), &small_cfg(), 0);
        assert!(matches!(err, Err(Error::PoseOutsideScene { .. })));
    }

    #[test]
    fn accumulation_is_linear_in_reflectivity() {
        let cfg = small_cfg();
        let mut scene = SceneMap::new(vec![
            Segment::new((3.0, -1.0), (3.0, 1.0), 0.2).unwrap(),
            Segment::new((-2.0, 2.0), (2.0, 2.5), 0.5).unwrap(),
        ])
        .unwrap()
        .with_bounds((-5.0, -5.0), (5.0, 5.0));
        let mut at = |r: f64| {
            scene.segments[0].reflectivity = r;
            synthesize_scan(&scene, &Pose::default(), &cfg, 0)
                .unwrap()
                .matrix
        };
        let (a, b, c) = (at(0.2), at(0.4), at(0.8));
        let power = |m: &AngleDelayMatrix, i: usize| m.values()[i].powi(2);
        for i in 0..a.values().len() {
            let low = power(&b, i) - power(&a, i);
            let high = power(&c, i) - power(&b, i);
            assert!(
                (high - 2.0 * low).abs() <= 1e-12 * power(&c, i).max(1e-300),
                "{low} {high}"
            );
        }
        assert!(c.max_value() > a.max_value());
    }

    #[test]
    fn mirrored_scene_reverses_rows() {
        let cfg = small_cfg();
        let scene = SceneMap::laboratory();
        let pose = Pose::new(0.7, 0.4, 0.3);
        let a = synthesize_scan(&scene, &pose, &cfg, 0).unwrap().matrix;
        let b = synthesize_scan(&scene.mirrored_x(), &Pose::new(0.7, -0.4, -0.3), &cfg, 0)
            .unwrap()
            .matrix;
        let n = a.n_angles();
        for i in 0..n {
            for (x, y) in a.row(i).iter().zip(b.row(n - 1 - i)) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} {y}");
            }
        }
    }

    #[test]
    fn whole_bin_rotation_is_a_row_shift() {
        let cfg = small_cfg();
        let scene = SceneMap::laboratory();
        let a = synthesize_scan(&scene, &Pose::new(0.5, 0.5, 0.0), &cfg, 0)
            .unwrap()
            .matrix;
        for delta in [-7i64, 3, 12] {
            let b = synthesize_scan(
                &scene,
                &Pose::new(0.5, 0.5, (delta as f64).to_radians()),
                &cfg,
                0,
            )
            .unwrap()
            .matrix;
            for n in 0..a.n_angles() as i64 {
                let src = n - delta;
                if !(0..a.n_angles() as i64).contains(&src) {
                    continue;
                }
                for (x, y) in b.row(n as usize).iter().zip(a.row(src as usize)) {
                    assert!(
                        (x - y).abs() <= 1e-6 * x.abs().max(1e-3),
                        "{delta} {n}: {x} {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn sidelobes_spread_a_ghost_ridge() {
        let cfg = SimConfig {
            noise_floor: 1e-4,
            seed: 3,
            ..small_cfg()
        };
        let (s, c) = 60f64.to_radians().sin_cos();
        let centre = (3.0 * c, 3.0 * s);
        let half = (0.15 * s, -0.15 * c);
        let scene = SceneMap::new(vec![Segment::new(
            (centre.0 - half.0, centre.1 - half.1),
            (centre.0 + half.0, centre.1 + half.1),
            1.0,
        )
        .unwrap()])
        .unwrap()
        .with_bounds((-5.0, -5.0), (5.0, 5.0));
        let scan = synthesize_scan(&scene, &Pose::default(), &cfg, 0).unwrap();
        let m = cfg.bin_of_range(3.0).unwrap();
        let noise = cfg.noise_floor * scan.matrix.max_value();
        let lit = (0..cfg.n_angles)
            .filter(|&n| scan.matrix.get(n, m) >= noise)
            .count();
        assert!(lit * 2 >= cfg.n_angles, "{lit}");
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = SimConfig {
            noise_floor: 1e-2,
            seed: 11,
            ..small_cfg()
        };
        let scene = SceneMap::laboratory();
        let a = synthesize_scan(&scene, &Pose::default(), &cfg, 2).unwrap();
        let b = synthesize_scan(&scene, &Pose::default(), &cfg, 2).unwrap();
        let c = synthesize_scan(&scene, &Pose::default(), &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn trajectories() {
        let a = generate_trajectory(TrajectoryKind::LineBoresight);
        assert_eq!(a.len(), 9);
        assert_eq!(a[8], Pose::new(2.0, 0.0, 0.0));
        let b = generate_trajectory(TrajectoryKind::LineBroadside);
        assert!(b
            .iter()
            .all(|p| (p.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15));
        let o = generate_trajectory(TrajectoryKind::Oval);
        assert_eq!(o.len(), 46);
        for w in o.windows(2) {
            let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            assert!((0.23..=0.40 + 1e-12).contains(&d), "{d}");
            // Heading follows the direction of travel within half a turn step.
            let (fx, fy) = (w[0].theta.cos(), -w[0].theta.sin());
            let (ux, uy) = ((w[1].x - w[0].x) / d, (w[1].y - w[0].y) / d);
            assert!(fx * ux + fy * uy > 10f64.to_radians().cos() - 1e-9);
        }
        let xs: Vec<f64> = o.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = o.iter().map(|p| p.y).collect();
        let span = |v: &[f64]| {
            v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min)
        };
        assert!((span(&xs) - 5.0).abs() < 1e-9 && (span(&ys) - 3.0).abs() < 1e-9);
        let scene = SceneMap::laboratory();
        assert!(o.iter().all(|p| scene.extent().contains(p.x, p.y)));
    }

    #[test]
    fn scene_text_round_trip() {
        let scene = SceneMap::laboratory();
        assert_eq!(SceneMap::parse(&scene.to_text()).unwrap(), scene);
        let bounded = wall_scene(3.0);
        assert_eq!(SceneMap::parse(&bounded.to_text()).unwrap(), bounded);
        assert!(SceneMap::parse("bounds 1 1 0 0\n0 0 1 1 0.5").is_err());
        assert!(SceneMap::parse("0 0 1 1").is_err());
        assert!(SceneMap::parse("0 0 0 0 0.5").is_err());
        assert!(SceneMap::parse("0 0 1 1 1.5").is_err());
    }
}

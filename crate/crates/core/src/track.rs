//! Pose composition and Kalman tracking of the kinematic state.
//!
//! Headings follow the rotation matrix used to lift local increments into the
//! global frame, `U(theta) = [[cos, sin, 0], [-sin, cos, 0], [0, 0, 1]]`: the
//! sensor's forward axis points along `(cos theta, -sin theta)`, i.e. heading
//! is measured clockwise from the global x axis.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, SMatrix, Vector3, Vector6};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::pose::RelativePose;

/// Wraps an angle in radians to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Absolute pose; `theta` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Global position of a point given in this pose's sensor frame.
    pub fn transform_point(&self, local_x: f64, local_y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            self.x + c * local_x + s * local_y,
            self.y - s * local_x + c * local_y,
        )
    }

    /// Sensor-frame coordinates of a global point.
    pub fn inverse_transform_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        (c * dx - s * dy, s * dx + c * dy)
    }
}

/// The 3x3 matrix lifting local increments into the global frame.
pub fn rotation_u(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `prev + U(prev.theta) * [dx, dy, dtheta]`, heading re-wrapped.
pub fn compose_pose(prev: &Pose, rel: &RelativePose) -> Pose {
    let z = rotation_u(prev.theta) * Vector3::new(rel.dx, rel.dy, rel.dtheta.to_radians());
    Pose::new(prev.x + z[0], prev.y + z[1], prev.theta + z[2])
}

/// Constant-velocity model with white acceleration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub t_f: f64,
    pub w0: f64,
    pub w_theta: f64,
    pub a: Matrix6<f64>,
    pub q: Matrix6<f64>,
}

fn kinematic_blocks(t: f64, w: f64) -> (SMatrix<f64, 2, 2>, SMatrix<f64, 2, 2>) {
    let a = SMatrix::<f64, 2, 2>::new(1.0, t, 0.0, 1.0);
    let q = SMatrix::<f64, 2, 2>::new(w * t.powi(3) / 3.0, w * t * t / 2.0, w * t * t / 2.0, w * t);
    (a, q)
}

impl MotionModel {
    pub fn new(t_f: f64, w0: f64, w_theta: f64) -> Result<Self> {
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "frame period must be positive, got {t_f}"
            )));
        }
        if !(w0 >= 0.0 && w_theta >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise densities must be nonnegative".into(),
            ));
        }
        let (a_lin, q_lin) = kinematic_blocks(t_f, w0);
        let (a_ang, q_ang) = kinematic_blocks(t_f, w_theta);
        let mut a = Matrix6::zeros();
        let mut q = Matrix6::zeros();
        // Position/velocity pairs (0, 2) and (1, 3); heading pair (4, 5).
        for axis in 0..2 {
            for (i, ri) in [axis, axis + 2].into_iter().enumerate() {
                for (j, cj) in [axis, axis + 2].into_iter().enumerate() {
                    a[(ri, cj)] = a_lin[(i, j)];
                    q[(ri, cj)] = q_lin[(i, j)];
                }
            }
        }
        a.fixed_view_mut::<2, 2>(4, 4).copy_from(&a_ang);
        q.fixed_view_mut::<2, 2>(4, 4).copy_from(&q_ang);
        Ok(Self {
            t_f,
            w0,
            w_theta,
            a,
            q,
        })
    }
}

/// Pose observation `[x, y, theta]` with quality-scaled noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_theta: f64,
    /// Lower clamp applied to the quality before scaling.
    pub q_min: f64,
}

pub const DEFAULT_Q_MIN: f64 = 1e-2;

impl ObservationModel {
    pub fn new(sigma_x: f64, sigma_y: f64, sigma_theta: f64) -> Result<Self> {
        if !(sigma_x > 0.0 && sigma_y > 0.0 && sigma_theta > 0.0) {
            return Err(Error::InvalidParameter(
                "observation deviations must be positive".into(),
            ));
        }
        Ok(Self {
            sigma_x,
            sigma_y,
            sigma_theta,
            q_min: DEFAULT_Q_MIN,
        })
    }

    /// Selects `(x, y, theta)` from the state.
    pub fn b() -> Matrix3x6<f64> {
        let mut b = Matrix3x6::zeros();
        b[(0, 0)] = 1.0;
        b[(1, 1)] = 1.0;
        b[(2, 4)] = 1.0;
        b
    }

    /// `diag(sx^2, sy^2, st^2) / max(q, q_min)^2`.
    pub fn build_r(&self, q: f64) -> Matrix3<f64> {
        let q = if q.is_finite() {
            q.max(self.q_min)
        } else {
            self.q_min
        };
        let inv = 1.0 / (q * q);
        Matrix3::from_diagonal(&Vector3::new(
            self.sigma_x.powi(2) * inv,
            self.sigma_y.powi(2) * inv,
            self.sigma_theta.powi(2) * inv,
        ))
    }
}

/// Mean `[x, y, vx, vy, theta, omega]` and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicState {
    pub mean: Vector6<f64>,
    pub cov: Matrix6<f64>,
}

impl KinematicState {
    /// Origin with unknown rates: pose variance 1e-6, rate variance 1.
    pub fn initial() -> Self {
        Self {
            mean: Vector6::zeros(),
            cov: Matrix6::from_diagonal(&Vector6::new(1e-6, 1e-6, 1.0, 1.0, 1e-6, 1.0)),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.mean[0], self.mean[1], self.mean[4])
    }

    pub fn predict(&self, model: &MotionModel) -> Self {
        let mut mean = model.a * self.mean;
        mean[4] = wrap_angle(mean[4]);
        Self {
            mean,
            cov: model.a * self.cov * model.a.transpose() + model.q,
        }
    }

    /// Joseph-form measurement update with a wrapped heading residual.
    pub fn update(&self, meas: &Pose, obs: &ObservationModel, q: f64) -> Self {
        let b = ObservationModel::b();
        let r = obs.build_r(q);
        let mut innovation = Vector3::new(meas.x, meas.y, meas.theta) - b * self.mean;
        innovation[2] = wrap_angle(innovation[2]);
        let s = b * self.cov * b.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return self.clone();
        };
        let k = self.cov * b.transpose() * s_inv;
        let mut mean = self.mean + k * innovation;
        mean[4] = wrap_angle(mean[4]);
        let i_kb = Matrix6::identity() - k * b;
        let cov = i_kb * self.cov * i_kb.transpose() + k * r * k.transpose();
        Self { mean, cov }
    }
}

/// One predict/update cycle; a non-finite measurement skips the update.
pub fn kf_step(
    state: &KinematicState,
    meas: &Pose,
    model: &MotionModel,
    obs: &ObservationModel,
    q: f64,
) -> KinematicState {
    let predicted = state.predict(model);
    if meas.is_finite() {
        predicted.update(meas, obs, q)
    } else {
        predicted
    }
}

/// Sequential tracker: composes relative poses into raw absolute poses and
/// filters them.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub model: MotionModel,
    pub obs: ObservationModel,
    state: KinematicState,
    raw: Pose,
}

impl Tracker {
    pub fn new(model: MotionModel, obs: ObservationModel) -> Self {
        Self {
            model,
            obs,
            state: KinematicState::initial(),
            raw: Pose::default(),
        }
    }

    pub fn state(&self) -> &KinematicState {
        &self.state
    }

    /// Latest raw (unfiltered) absolute pose.
    pub fn raw_pose(&self) -> Pose {
        self.raw
    }

    /// Composes `rel` onto the previous raw pose, then filters.
    pub fn step(&mut self, rel: &RelativePose) -> &KinematicState {
        let raw = compose_pose(&self.raw, rel);
        self.state = kf_step(&self.state, &raw, &self.model, &self.obs, rel.q);
        if raw.is_finite() {
            self.raw = raw;
        }
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(dx: f64, dy: f64, dtheta: f64) -> RelativePose {
        RelativePose {
            dx,
            dy,
            dtheta,
            q: 1.0,
        }
    }

    #[test]
    fn compose_examples() {
        let p = compose_pose(&Pose::default(), &rel(1.0, 0.0, 0.0));
        assert_eq!(p, Pose::new(1.0, 0.0, 0.0));
        let p = compose_pose(&Pose::new(0.0, 0.0, PI / 2.0), &rel(1.0, 0.0, 0.0));
        assert!(
            p.x.abs() < 1e-15 && (p.y + 1.0).abs() < 1e-15 && (p.theta - PI / 2.0).abs() < 1e-15
        );
    }

    #[test]
    fn heading_wraps() {
        let p = compose_pose(&Pose::default(), &rel(0.0, 0.0, 179.0));
        let p = compose_pose(&p, &rel(0.0, 0.0, 179.0));
        assert!(
            (p.theta - (-2.0f64).to_radians()).abs() < 1e-12,
            "{}",
            p.theta
        );
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn chain_matches_homogeneous_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut pose = Pose::default();
        // Homogeneous oracle: T = [[U2^T, p], [0, 1]] with U2 the 2x2 block of U.
        let mut t = nalgebra::Matrix3::<f64>::identity();
        for _ in 0..20 {
            let r = rel(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-60.0..60.0),
            );
            pose = compose_pose(&pose, &r);
            let a = r.dtheta.to_radians();
            let (s, c) = a.sin_cos();
            // Local-to-parent transform of this step: rotation by -a.
            let step = nalgebra::Matrix3::new(c, s, r.dx, -s, c, r.dy, 0.0, 0.0, 1.0);
            t *= step;
        }
        let theta = wrap_angle(-t[(1, 0)].atan2(t[(0, 0)]));
        assert!((pose.x - t[(0, 2)]).abs() < 1e-9);
        assert!((pose.y - t[(1, 2)]).abs() < 1e-9);
        assert!(wrap_angle(pose.theta - theta).abs() < 1e-9);
    }

    #[test]
    fn point_transforms_are_inverse() {
        let p = Pose::new(1.0, -2.0, 0.7);
        let (x, y) = p.transform_point(0.3, 0.4);
        let (lx, ly) = p.inverse_transform_point(x, y);
        assert!((lx - 0.3).abs() < 1e-12 && (ly - 0.4).abs() < 1e-12);
        // Forward axis points along (cos, -sin).
        let (fx, fy) = Pose::new(0.0, 0.0, PI / 2.0).transform_point(1.0, 0.0);
        assert!(fx.abs() < 1e-12 && (fy + 1.0).abs() < 1e-12);
    }

    #[test]
    fn motion_model_table_values() {
        let m = MotionModel::new(1.0, 1e-4, 1e-4).unwrap();
        assert_eq!(m.q[(0, 0)], 1e-4 / 3.0);
        assert_eq!(m.q[(2, 2)], 1e-4);
        assert_eq!(m.q[(0, 2)], 1e-4 / 2.0);
        assert_eq!(m.a[(0, 2)], 1.0);
        assert_eq!(m.a[(4, 5)], 1.0);
        let zero = MotionModel::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(zero.q, Matrix6::zeros());
        assert!(MotionModel::new(0.0, 1e-4, 1e-4).is_err());
        assert!(MotionModel::new(-1.0, 1e-4, 1e-4).is_err());
    }

    #[test]
    fn process_noise_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let m = MotionModel::new(
                rng.gen_range(0.01..5.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            )
            .unwrap();
            assert_eq!(m.q, m.q.transpose());
            let eig = m.q.symmetric_eigenvalues();
            assert!(eig.iter().all(|e| *e >= -1e-12), "{eig}");
            assert!((m.q + Matrix6::identity() * 1e-12).cholesky().is_some());
        }
    }

    #[test]
    fn r_scales_with_quality() {
        let obs = ObservationModel::new(4.7e-3, 4.7e-3, 1.7e-3).unwrap();
        let r1 = obs.build_r(1.0);
        assert!((r1[(0, 0)] - 2.209e-5).abs() < 1e-18);
        assert!((r1[(1, 1)] - 2.209e-5).abs() < 1e-18);
        assert!((r1[(2, 2)] - 2.89e-6).abs() < 1e-18);
        let r_half = obs.build_r(0.5);
        assert!((r_half - r1 * 4.0).norm() < 1e-15);
        assert_eq!(obs.build_r(0.0), obs.build_r(obs.q_min));
    }

    #[test]
    fn static_truth_converges_without_noise() {
        let model = MotionModel::new(1.0, 0.0, 0.0).unwrap();
        let mut obs = ObservationModel::new(1e-9, 1e-9, 1e-9).unwrap();
        obs.q_min = 1.0;
        let meas = Pose::new(0.3, -0.2, 0.1);
        let mut state = KinematicState::initial();
        for _ in 0..5 {
            state = kf_step(&state, &meas, &model, &obs, 1.0);
        }
        let p = state.pose();
        assert!(
            (p.x - 0.3).abs() < 1e-6 && (p.y + 0.2).abs() < 1e-6 && (p.theta - 0.1).abs() < 1e-6
        );
    }

    #[test]
    fn constant_velocity_is_learned() {
        let model = MotionModel::new(1.0, 1e-4, 1e-4).unwrap();
        let obs = ObservationModel::new(4.7e-3, 4.7e-3, 1.7e-3).unwrap();
        let mut state = KinematicState::initial();
        for k in 1..=6 {
            state = kf_step(
                &state,
                &Pose::new(0.25 * k as f64, 0.0, 0.0),
                &model,
                &obs,
                1.0,
            );
        }
        assert!(
            (state.mean[2] - 0.25).abs() < 0.05 * 0.25,
            "{}",
            state.mean[2]
        );
    }

    #[test]
    fn update_never_increases_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let obs = ObservationModel::new(0.01, 0.02, 0.005).unwrap();
        for _ in 0..200 {
            let l = Matrix6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let state = KinematicState {
                mean: Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                cov: l * l.transpose() + Matrix6::identity() * 1e-3,
            };
            let meas = Pose::new(rng.gen(), rng.gen(), rng.gen());
            let post = state.update(&meas, &obs, rng.gen_range(0.0..1.0));
            assert!(post.cov.trace() <= state.cov.trace() + 1e-12);
        }
    }

    #[test]
    fn velocities_untouched_without_cross_covariance() {
        let obs = ObservationModel::new(0.01, 0.01, 0.01).unwrap();
        let state = KinematicState {
            mean: Vector6::new(0.0, 0.0, 0.4, -0.3, 0.0, 0.2),
            cov: Matrix6::from_diagonal(&Vector6::new(0.1, 0.2, 0.3, 0.4, 0.5, 0.6)),
        };
        let post = state.update(&Pose::new(1.0, 2.0, 0.5), &obs, 1.0);
        assert_eq!(post.mean[2], 0.4);
        assert_eq!(post.mean[3], -0.3);
        assert_eq!(post.mean[5], 0.2);
    }

    #[test]
    fn innovation_wraps_across_pi() {
        let obs = ObservationModel::new(0.01, 0.01, 0.01).unwrap();
        let mut state = KinematicState::initial();
        state.mean[4] = PI - 0.01;
        let post = state.update(&Pose::new(0.0, 0.0, -PI + 0.01), &obs, 1.0);
        // The estimate moves towards +pi, not across zero.
        assert!(post.mean[4].abs() > 3.0, "{}", post.mean[4]);
    }

    #[test]
    fn non_finite_measurement_only_predicts() {
        let model = MotionModel::new(1.0, 1e-4, 1e-4).unwrap();
        let obs = ObservationModel::new(0.01, 0.01, 0.01).unwrap();
        let state = KinematicState::initial();
        let meas = Pose {
            x: f64::NAN,
            y: 0.0,
            theta: 0.0,
        };
        assert_eq!(
            kf_step(&state, &meas, &model, &obs, 1.0),
            state.predict(&model)
        );
    }

    #[test]
    fn tracker_follows_increments() {
        let mut t = Tracker::new(
            MotionModel::new(1.0, 1e-4, 1e-4).unwrap(),
            ObservationModel::new(4.7e-3, 4.7e-3, 1.7e-3).unwrap(),
        );
        for _ in 0..8 {
            t.step(&rel(0.25, 0.0, 0.0));
        }
        assert!((t.raw_pose().x - 2.0).abs() < 1e-12);
        assert!((t.state().mean[0] - 2.0).abs() < 0.02);
    }
}

//! Keyframe state and IMU preintegration pseudo-measurements shared by the
//! simulator and the solver.

use nalgebra::{Cholesky, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_vector, Pose};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;

/// Dimension of one keyframe's tangent space: position, rotation, velocity,
/// accelerometer bias, gyroscope bias.
pub const STATE_DIM: usize = 15;
pub const P_IDX: usize = 0;
pub const R_IDX: usize = 3;
pub const V_IDX: usize = 6;
pub const BA_IDX: usize = 9;
pub const BG_IDX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeState {
    /// World-from-body.
    pub pose: Pose,
    /// World-frame velocity (m/s).
    pub velocity: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl KeyframeState {
    pub fn at_rest(pose: Pose) -> Self {
        KeyframeState {
            pose,
            velocity: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        let q = self.pose.rotation.quaternion();
        q.coords.iter().all(|v| v.is_finite())
            && self.pose.translation.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.accel_bias.iter().all(|v| v.is_finite())
            && self.gyro_bias.iter().all(|v| v.is_finite())
    }

    /// Apply a 15-dim tangent update (right perturbation on rotation).
    pub fn retract(&self, delta: &[f64]) -> KeyframeState {
        let dp = Vector3::new(delta[P_IDX], delta[P_IDX + 1], delta[P_IDX + 2]);
        let dr = Vector3::new(delta[R_IDX], delta[R_IDX + 1], delta[R_IDX + 2]);
        KeyframeState {
            pose: self.pose.retract(&dr, &dp),
            velocity: self.velocity + Vector3::new(delta[V_IDX], delta[V_IDX + 1], delta[V_IDX + 2]),
            accel_bias: self.accel_bias + Vector3::new(delta[BA_IDX], delta[BA_IDX + 1], delta[BA_IDX + 2]),
            gyro_bias: self.gyro_bias + Vector3::new(delta[BG_IDX], delta[BG_IDX + 1], delta[BG_IDX + 2]),
        }
    }

    /// Tangent-space difference `self ⊟ reference`.
    pub fn local_difference(&self, reference: &KeyframeState) -> SVector<f64, STATE_DIM> {
        let mut d = SVector::<f64, STATE_DIM>::zeros();
        d.fixed_rows_mut::<3>(P_IDX)
            .copy_from(&(self.pose.translation - reference.pose.translation));
        d.fixed_rows_mut::<3>(R_IDX).copy_from(&rotation_vector(
            &(reference.pose.rotation.inverse() * self.pose.rotation),
        ));
        d.fixed_rows_mut::<3>(V_IDX)
            .copy_from(&(self.velocity - reference.velocity));
        d.fixed_rows_mut::<3>(BA_IDX)
            .copy_from(&(self.accel_bias - reference.accel_bias));
        d.fixed_rows_mut::<3>(BG_IDX)
            .copy_from(&(self.gyro_bias - reference.gyro_bias));
        d
    }
}

/// Relative-motion pseudo-measurement between two consecutive keyframes,
/// expressed in the body frame of the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuPreintegration {
    pub delta_p: Vector3<f64>,
    pub delta_v: Vector3<f64>,
    pub delta_r: UnitQuaternion<f64>,
    pub dt: f64,
    /// Covariance over (dp, dv, dtheta).
    pub covariance: Matrix9,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl ImuPreintegration {
    /// Upper-triangular Cholesky inverse used to whiten residuals.
    pub fn sqrt_information(&self) -> Option<Matrix9> {
        let chol = Cholesky::new(self.covariance)?;
        let l_inv = chol.l().try_inverse()?;
        Some(l_inv)
    }

    pub fn is_valid(&self) -> bool {
        self.dt > 0.0 && self.dt.is_finite() && Cholesky::new(self.covariance).is_some()
    }
}

/// Noise-free relative motion `(dp, dv, dR)` between two states. Gravity is
/// the world-frame gravitational acceleration (pointing down).
pub fn relative_motion(
    from: &KeyframeState,
    to: &KeyframeState,
    dt: f64,
    gravity: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>, UnitQuaternion<f64>) {
    let r_inv = from.pose.rotation.inverse();
    let dp = r_inv * (to.pose.translation - from.pose.translation - from.velocity * dt - gravity * (0.5 * dt * dt));
    let dv = r_inv * (to.velocity - from.velocity - gravity * dt);
    let dr = r_inv * to.pose.rotation;
    (dp, dv, dr)
}

/// Dead-reckon the next state from a preintegration.
pub fn propagate(from: &KeyframeState, preint: &ImuPreintegration, gravity: &Vector3<f64>) -> KeyframeState {
    let dt = preint.dt;
    let r = from.pose.rotation;
    let p = from.pose.translation + from.velocity * dt + gravity * (0.5 * dt * dt) + r * preint.delta_p;
    let v = from.velocity + gravity * dt + r * preint.delta_v;
    KeyframeState {
        pose: Pose::new(r * preint.delta_r, p),
        velocity: v,
        accel_bias: from.accel_bias,
        gyro_bias: from.gyro_bias,
    }
}

/// Continuous-time IMU noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    /// Accelerometer white noise density (m/s^2/sqrt(Hz)).
    pub accel_noise: f64,
    /// Gyroscope white noise density (rad/s/sqrt(Hz)).
    pub gyro_noise: f64,
    /// Accelerometer bias random walk (m/s^3/sqrt(Hz)).
    pub accel_walk: f64,
    /// Gyroscope bias random walk (rad/s^2/sqrt(Hz)).
    pub gyro_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        ImuNoise {
            accel_noise: 0.02,
            gyro_noise: 0.002,
            accel_walk: 0.002,
            gyro_walk: 0.0002,
        }
    }
}

impl ImuNoise {
    pub fn noiseless() -> Self {
        ImuNoise {
            accel_noise: 0.0,
            gyro_noise: 0.0,
            accel_walk: 0.0,
            gyro_walk: 0.0,
        }
    }

    /// Preintegration covariance over `dt`, bias random walk folded in.
    /// A tiny floor keeps the matrix positive-definite for noiseless runs.
    pub fn covariance(&self, dt: f64) -> Matrix9 {
        let (sa2, sg2) = (self.accel_noise.powi(2), self.gyro_noise.powi(2));
        let (wa2, wg2) = (self.accel_walk.powi(2), self.gyro_walk.powi(2));
        let pp = sa2 * dt.powi(3) / 3.0 + wa2 * dt.powi(5) / 20.0;
        let pv = sa2 * dt.powi(2) / 2.0 + wa2 * dt.powi(4) / 8.0;
        let vv = sa2 * dt + wa2 * dt.powi(3) / 3.0;
        let tt = sg2 * dt + wg2 * dt.powi(3) / 3.0;
        let floor = 1e-12;
        let mut c = Matrix9::zeros();
        for i in 0..3 {
            c[(i, i)] = pp + floor;
            c[(i, i + 3)] = pv;
            c[(i + 3, i)] = pv;
            c[(i + 3, i + 3)] = vv + floor;
            c[(i + 6, i + 6)] = tt + floor;
        }
        c
    }
}

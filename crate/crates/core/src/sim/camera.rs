use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::geometry::Pose;
use crate::sim::landmarks::Landmark;

/// Pinhole camera in normalized image coordinates. The camera frame
/// coincides with the body frame: z forward, x right, y down. The right
/// camera of a stereo pair sits at `(baseline, 0, 0)` in that frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub half_fov_horizontal: f64,
    pub half_fov_vertical: f64,
    pub max_range: f64,
    pub min_depth: f64,
    /// Observation noise (normalized-plane units).
    pub noise_sigma: f64,
    /// Stereo baseline (m); 0 for a monocular camera.
    pub baseline: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            half_fov_horizontal: std::f64::consts::FRAC_PI_4,
            half_fov_vertical: (0.75f64).atan(),
            max_range: 20.0,
            min_depth: 0.2,
            noise_sigma: 1.0 / 640.0,
            baseline: 0.12,
        }
    }
}

/// One landmark (or, after tracking, one track) seen in one keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub frame_id: usize,
    pub feature_id: usize,
    pub x: f64,
    pub y: f64,
    pub right: Option<[f64; 2]>,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ok_angle = |a: f64| a > 0.0 && a < std::f64::consts::FRAC_PI_2;
        if !ok_angle(self.half_fov_horizontal) || !ok_angle(self.half_fov_vertical) {
            return Err(ScenarioError::Invalid(
                "camera half-FOV angles must lie in (0, pi/2)".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.baseline >= 0.0) {
            return Err(ScenarioError::Invalid(
                "camera noise_sigma and baseline must be >= 0".into(),
            ));
        }
        if !(self.max_range > self.min_depth && self.min_depth > 0.0) {
            return Err(ScenarioError::Invalid("camera needs 0 < min_depth < max_range".into()));
        }
        Ok(())
    }

    pub fn is_stereo(&self) -> bool {
        self.baseline > 0.0
    }

    /// Whether a camera-frame point lies inside the frustum and range.
    pub fn sees(&self, p_cam: &Vector3<f64>) -> bool {
        p_cam.z > self.min_depth
            && p_cam.norm() <= self.max_range
            && (p_cam.x / p_cam.z).abs() <= self.half_fov_horizontal.tan()
            && (p_cam.y / p_cam.z).abs() <= self.half_fov_vertical.tan()
    }

    pub fn sees_world_point(&self, world_from_cam: &Pose, p_world: &Vector3<f64>) -> bool {
        self.sees(&world_from_cam.inverse_transform_point(p_world))
    }

    /// Noise-free left and right projections of a camera-frame point.
    pub fn project(&self, p_cam: &Vector3<f64>) -> ([f64; 2], Option<[f64; 2]>) {
        let left = [p_cam.x / p_cam.z, p_cam.y / p_cam.z];
        let right = self
            .is_stereo()
            .then(|| [(p_cam.x - self.baseline) / p_cam.z, p_cam.y / p_cam.z]);
        (left, right)
    }
}

/// Noisy observations of every landmark visible from `pose` at time `t`,
/// in landmark-id order. `feature_id` carries the landmark id.
pub fn observe<R: Rng + ?Sized>(
    frame_id: usize,
    pose: &Pose,
    t: f64,
    landmarks: &[Landmark],
    camera: &CameraModel,
    rng: &mut R,
) -> Vec<FeatureObservation> {
    let mut out = Vec::new();
    for lm in landmarks {
        let p_cam = pose.inverse_transform_point(&lm.position_at(t));
        if !camera.sees(&p_cam) {
            continue;
        }
        let (left, right) = camera.project(&p_cam);
        let mut noise = || -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            z * camera.noise_sigma
        };
        let x = left[0] + noise();
        let y = left[1] + noise();
        let right = right.map(|r| [r[0] + noise(), r[1] + noise()]);
        out.push(FeatureObservation {
            frame_id,
            feature_id: lm.id,
            x,
            y,
            right,
        });
    }
    out
}

//! Smooth ground-truth trajectories sampled at keyframe instants.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::ScenarioError;
use crate::geometry::Pose;
use crate::sim::camera::CameraModel;
use crate::sim::scenario::{TrajectoryPreset, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
    /// World-frame velocity (m/s).
    pub velocity: Vector3<f64>,
}

/// Camera orientation looking horizontally along `yaw` (rad from +x, CCW).
pub fn heading_rotation(yaw: f64) -> UnitQuaternion<f64> {
    let forward = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let right = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let m = Matrix3::from_columns(&[right, down, forward]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Quintic smoothstep with zero first and second derivatives at both ends.
pub fn smoothstep(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

#[derive(Debug, Clone, Copy)]
struct Waypoint {
    position: Vector3<f64>,
    yaw: f64,
}

/// Piecewise path between waypoints, each leg eased by `smoothstep`.
#[derive(Debug, Clone)]
struct WaypointPath {
    points: Vec<Waypoint>,
    /// Leg start times; `times.len() == points.len()`, last entry is the end.
    times: Vec<f64>,
}

impl WaypointPath {
    fn new(points: Vec<Waypoint>, duration: f64, dwell: &[usize]) -> Self {
        const SPEED: f64 = 1.0;
        const TURN_RATE: f64 = 0.8;
        const DWELL: f64 = 2.0;
        let nominal: Vec<f64> = points
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let d = (w[1].position - w[0].position).norm() / SPEED;
                let r = (w[1].yaw - w[0].yaw).abs() / TURN_RATE;
                let hold = if dwell.contains(&(i + 1)) { DWELL } else { 0.0 };
                d.max(r) + hold
            })
            .collect();
        let total: f64 = nominal.iter().sum();
        let mut times = vec![0.0];
        for n in &nominal {
            times.push(times.last().unwrap() + n * duration / total);
        }
        WaypointPath { points, times }
    }

    fn sample(&self, t: f64) -> (Vector3<f64>, f64) {
        let leg = match self.times.iter().rposition(|&s| s <= t) {
            Some(i) if i + 1 < self.times.len() => i,
            Some(_) => return (self.points.last().unwrap().position, self.points.last().unwrap().yaw),
            None => 0,
        };
        let (a, b) = (&self.points[leg], &self.points[leg + 1]);
        let s = smoothstep((t - self.times[leg]) / (self.times[leg + 1] - self.times[leg]));
        (a.position + (b.position - a.position) * s, a.yaw + (b.yaw - a.yaw) * s)
    }
}

/// Continuous-time trajectory for one preset.
#[derive(Debug, Clone)]
pub struct Trajectory {
    spec: TrajectorySpec,
    path: Option<WaypointPath>,
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec) -> Result<Self, ScenarioError> {
        if !(spec.duration > 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "trajectory duration must be > 0, got {}",
                spec.duration
            )));
        }
        let path_length = match spec.preset {
            TrajectoryPreset::Loop => TAU * spec.radius,
            TrajectoryPreset::FollowLine => spec.length,
            TrajectoryPreset::EShape => spec.arm_length.min(spec.arm_spacing),
            TrajectoryPreset::StaticHover => 1.0,
        };
        if !(path_length > 0.0 && path_length.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "{:?} trajectory has zero length",
                spec.preset
            )));
        }
        let path = (spec.preset == TrajectoryPreset::EShape).then(|| e_shape_path(spec));
        Ok(Trajectory {
            spec: spec.clone(),
            path,
        })
    }

    /// Point the e_shape arm tips look at; `None` for other presets.
    pub fn object_zone(&self) -> Option<Vector3<f64>> {
        (self.spec.preset == TrajectoryPreset::EShape).then(|| e_shape_zone(&self.spec))
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let s = &self.spec;
        let origin = Vector3::from(s.origin);
        let tau = (t / s.duration).clamp(0.0, 1.0);
        let (position, yaw) = match s.preset {
            TrajectoryPreset::StaticHover => (origin, s.heading),
            TrajectoryPreset::Loop => {
                let theta = TAU * smoothstep(tau);
                let p = origin
                    + Vector3::new(
                        s.radius * theta.cos(),
                        s.radius * theta.sin(),
                        s.wobble * (2.0 * theta).sin(),
                    );
                (p, theta + s.yaw_wobble * (3.0 * theta).sin())
            }
            TrajectoryPreset::FollowLine => {
                let phase = TAU * tau;
                let p = origin + Vector3::new(s.length * tau, 0.0, s.wobble * (2.0 * phase).sin());
                (p, s.heading + s.yaw_wobble * (3.0 * phase).sin())
            }
            TrajectoryPreset::EShape => {
                let (p, yaw) = self.path.as_ref().expect("e_shape path").sample(t);
                (origin + p, yaw)
            }
        };
        Pose::new(heading_rotation(yaw), position)
    }

    /// Central-difference velocity of the position curve.
    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let h = 1e-5;
        (self.pose_at(t + h).translation - self.pose_at(t - h).translation) / (2.0 * h)
    }

    /// Keyframe samples at `rate` Hz from 0 to the duration inclusive.
    pub fn sample(&self, rate: f64) -> Vec<TimedPose> {
        let n = (self.spec.duration * rate + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                TimedPose {
                    t,
                    pose: self.pose_at(t),
                    velocity: self.velocity_at(t),
                }
            })
            .collect()
    }
}

pub fn generate_trajectory(spec: &TrajectorySpec, rate: f64) -> Result<Vec<TimedPose>, ScenarioError> {
    if !(rate > 0.0) {
        return Err(ScenarioError::Invalid(format!("keyframe rate must be > 0, got {rate}")));
    }
    Ok(Trajectory::new(spec)?.sample(rate))
}

fn e_shape_zone(s: &TrajectorySpec) -> Vector3<f64> {
    Vector3::from(s.origin) + Vector3::new(s.arm_length + s.zone_distance, 0.0, 0.0)
}

/// Three eastward arms joined by a north-south spine. Each arm ends at a tip
/// that turns to face the object zone, then turns clockwise (away from the
/// zone's next position) to head back west; spine turns are
/// counter-clockwise.
fn e_shape_path(s: &TrajectorySpec) -> WaypointPath {
    let (l, d) = (s.arm_length, s.arm_spacing);
    let zone = Vector3::new(l + s.zone_distance, 0.0, 0.0);
    let arms = [d, 0.0, -d];
    let mut pts: Vec<Waypoint> = Vec::new();
    let mut dwell = Vec::new();
    let mut yaw = 0.0;
    let wp = |x: f64, y: f64, yaw: f64| Waypoint {
        position: Vector3::new(x, y, 0.0),
        yaw,
    };
    for (a, &y) in arms.iter().enumerate() {
        pts.push(wp(0.0, y, yaw));
        pts.push(wp(l, y, yaw));
        let to_zone = zone - Vector3::new(l, y, 0.0);
        let face = unwrap_near(to_zone.y.atan2(to_zone.x), yaw);
        yaw = face;
        pts.push(wp(l, y, yaw));
        dwell.push(pts.len() - 1);
        if a + 1 == arms.len() {
            break;
        }
        // turn back west, return along the arm, then turn south down the
        // spine and east onto the next arm
        yaw = cw_to(yaw, PI);
        pts.push(wp(l, y, yaw));
        pts.push(wp(0.0, y, yaw));
        yaw = ccw_to(yaw, -FRAC_PI_2);
        pts.push(wp(0.0, y, yaw));
        pts.push(wp(0.0, arms[a + 1], yaw));
        yaw = ccw_to(yaw, 0.0);
    }
    WaypointPath::new(pts, s.duration, &dwell)
}

/// Smallest angle >= `from` that is equivalent to `target`.
fn ccw_to(from: f64, target: f64) -> f64 {
    let mut a = target;
    while a < from - 1e-12 {
        a += TAU;
    }
    while a - TAU >= from - 1e-12 {
        a -= TAU;
    }
    a
}

/// Largest angle <= `from` that is equivalent to `target`.
fn cw_to(from: f64, target: f64) -> f64 {
    ccw_to(from, target)
        - if (ccw_to(from, target) - from).abs() < 1e-12 {
            0.0
        } else {
            TAU
        }
}

/// Angle equivalent to `target` closest to `reference`.
fn unwrap_near(target: f64, reference: f64) -> f64 {
    target + TAU * ((reference - target) / TAU).round()
}

/// Maximal runs of consecutive samples whose frustum contains `point`,
/// as inclusive index ranges.
pub fn visibility_windows(samples: &[TimedPose], camera: &CameraModel, point: &Vector3<f64>) -> Vec<(usize, usize)> {
    let mut windows = Vec::new();
    let mut start = None;
    for (i, s) in samples.iter().enumerate() {
        let seen = camera.sees_world_point(&s.pose, point);
        match (seen, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                windows.push((a, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        windows.push((a, samples.len() - 1));
    }
    windows
}

//! Scenario configuration (JSON) and the built-in presets.
//!
//! Every field has a default, so a config file only needs to state what it
//! overrides. Presets are ordinary `Scenario` values; `Scenario::preset`
//! returns them and a config may start from one via the `preset` key of the
//! CLI run configuration.

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::sim::camera::CameraModel;
use crate::state::ImuNoise;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicLevel {
    None,
    Low,
    Mid,
    High,
}

impl DynamicLevel {
    pub const ALL: [DynamicLevel; 4] = [
        DynamicLevel::None,
        DynamicLevel::Low,
        DynamicLevel::Mid,
        DynamicLevel::High,
    ];

    /// Share of all landmarks that are dynamic at this level.
    pub fn fraction(self) -> f64 {
        match self {
            DynamicLevel::None => 0.0,
            DynamicLevel::Low => 0.1,
            DynamicLevel::Mid => 0.3,
            DynamicLevel::High => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DynamicLevel::None => "none",
            DynamicLevel::Low => "low",
            DynamicLevel::Mid => "mid",
            DynamicLevel::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<DynamicLevel> {
        DynamicLevel::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryPreset {
    Loop,
    EShape,
    FollowLine,
    StaticHover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub preset: TrajectoryPreset,
    /// Seconds.
    pub duration: f64,
    pub origin: [f64; 3],
    /// Loop radius (m).
    pub radius: f64,
    /// Follow-line travel (m).
    pub length: f64,
    /// Facing yaw for follow_line and static_hover (rad).
    pub heading: f64,
    pub arm_length: f64,
    pub arm_spacing: f64,
    /// Distance from the arm tips to the object zone along +x (m).
    pub zone_distance: f64,
    /// Vertical oscillation amplitude (m).
    pub wobble: f64,
    /// Yaw oscillation amplitude (rad).
    pub yaw_wobble: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            preset: TrajectoryPreset::Loop,
            duration: 40.0,
            origin: [0.0, 0.0, 0.0],
            radius: 3.0,
            length: 10.0,
            heading: std::f64::consts::FRAC_PI_2,
            arm_length: 6.0,
            arm_spacing: 4.0,
            zone_distance: 5.0,
            wobble: 0.2,
            yaw_wobble: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Region {
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    Cylinder {
        center: [f64; 3],
        radius_min: f64,
        radius_max: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Region {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        match self {
            Region::Box { min, max } => {
                if (0..3).any(|i| !(min[i] <= max[i])) {
                    return Err(ScenarioError::Invalid(format!(
                        "box region min {min:?} exceeds max {max:?}"
                    )));
                }
            }
            Region::Cylinder {
                radius_min,
                radius_max,
                z_min,
                z_max,
                ..
            } => {
                if !(0.0 <= *radius_min && radius_min <= radius_max && z_min <= z_max) {
                    return Err(ScenarioError::Invalid("cylinder region bounds out of order".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicSpec {
    /// Dynamic landmarks are split evenly across this many rigid objects.
    pub objects: usize,
    /// Object centers are sampled in this region.
    pub region: Region,
    /// Landmark spread around the object center (m).
    pub object_radius: f64,
    /// Oscillation amplitude (m).
    pub amplitude: f64,
    /// Peak oscillation speed (m/s).
    pub speed: f64,
    /// Common drift velocity added to every object (m/s).
    pub follow_velocity: [f64; 3],
}

impl Default for DynamicSpec {
    fn default() -> Self {
        DynamicSpec {
            objects: 4,
            region: Region::Box {
                min: [0.0, 2.5, -1.0],
                max: [10.0, 5.0, 1.0],
            },
            object_radius: 0.6,
            amplitude: 1.0,
            speed: 1.0,
            follow_velocity: [0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporaryStaticSpec {
    pub count: usize,
    /// Initial cluster center (m).
    pub center: [f64; 3],
    /// Board extent (width, height) in meters.
    pub size: [f64; 2],
    /// Yaw of the board normal (rad); the board faces along this direction.
    pub facing_yaw: f64,
    /// Displacement applied at every relocation (m).
    pub relocation: [f64; 3],
    /// Explicit relocation instants (s). When absent, one relocation is
    /// scheduled in the middle of every gap between visibility windows of
    /// the cluster center.
    pub relocation_times: Option<Vec<f64>>,
    pub max_relocations: usize,
}

impl Default for TemporaryStaticSpec {
    fn default() -> Self {
        TemporaryStaticSpec {
            count: 30,
            center: [11.0, -2.0, 0.0],
            size: [1.6, 1.2],
            facing_yaw: std::f64::consts::PI,
            relocation: [0.0, 2.0, 0.0],
            relocation_times: None,
            max_relocations: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkSpec {
    pub total: usize,
    /// Share of `total` that is dynamic. Overridden by `Scenario::level`.
    pub dynamic_fraction: f64,
    pub static_regions: Vec<Region>,
    pub dynamic: DynamicSpec,
    pub temporarily_static: Option<TemporaryStaticSpec>,
}

impl Default for LandmarkSpec {
    fn default() -> Self {
        LandmarkSpec {
            total: 150,
            dynamic_fraction: 0.0,
            static_regions: vec![Region::Cylinder {
                center: [0.0, 0.0, 0.0],
                radius_min: 7.0,
                radius_max: 9.0,
                z_min: -2.5,
                z_max: 2.5,
            }],
            dynamic: DynamicSpec::default(),
            temporarily_static: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopDetectionSpec {
    /// Minimum number of shared landmarks for a candidate.
    pub min_shared: usize,
    /// At most this many past keyframes are matched per keyframe.
    pub max_matches: usize,
    /// Minimum keyframe separation (the sliding-window span).
    pub min_separation: usize,
    /// Noise of the per-keyframe 3D landmark estimates used for matching (m).
    pub point_noise: f64,
    pub inlier_threshold: f64,
    pub ransac_iterations: usize,
    /// Loop measurement standard deviations (m, rad).
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
}

impl Default for LoopDetectionSpec {
    fn default() -> Self {
        LoopDetectionSpec {
            min_shared: 10,
            max_matches: 3,
            min_separation: 10,
            point_noise: 0.03,
            inlier_threshold: 0.2,
            ransac_iterations: 64,
            translation_sigma: 0.1,
            rotation_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Keyframes per second.
    pub keyframe_rate: f64,
    pub level: Option<DynamicLevel>,
    pub trajectory: TrajectorySpec,
    pub landmarks: LandmarkSpec,
    pub camera: CameraModel,
    pub imu: ImuNoise,
    pub gravity: [f64; 3],
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub loop_detection: LoopDetectionSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "static".into(),
            seed: 0,
            keyframe_rate: 2.0,
            level: None,
            trajectory: TrajectorySpec::default(),
            landmarks: LandmarkSpec::default(),
            camera: CameraModel::default(),
            imu: ImuNoise::default(),
            gravity: [0.0, 0.0, -9.81],
            accel_bias: [0.02, -0.01, 0.03],
            gyro_bias: [0.001, -0.002, 0.0015],
            loop_detection: LoopDetectionSpec::default(),
        }
    }
}

/// Landmark counts per kind after resolving the dynamic fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandmarkCounts {
    pub static_count: usize,
    pub dynamic: usize,
    pub temporarily_static: usize,
}

pub const PRESETS: [&str; 5] = ["static", "dynamic", "dynamic_follow", "temporal_static", "e_shape"];

impl Scenario {
    pub fn preset(name: &str) -> Option<Scenario> {
        let mut s = Scenario {
            name: name.to_string(),
            ..Scenario::default()
        };
        match name {
            "static" => {}
            "dynamic" | "dynamic_follow" => {
                s.trajectory = TrajectorySpec {
                    preset: TrajectoryPreset::FollowLine,
                    duration: 20.0,
                    length: 10.0,
                    heading: std::f64::consts::FRAC_PI_2,
                    ..TrajectorySpec::default()
                };
                s.landmarks = LandmarkSpec {
                    total: 80,
                    dynamic_fraction: 0.5,
                    static_regions: vec![Region::Box {
                        min: [-4.0, 7.0, -2.5],
                        max: [14.0, 9.0, 2.5],
                    }],
                    dynamic: DynamicSpec {
                        region: Region::Box {
                            min: [-2.0, 2.5, -1.0],
                            max: [2.0, 5.0, 1.0],
                        },
                        follow_velocity: [0.5, 0.0, 0.0],
                        ..DynamicSpec::default()
                    },
                    temporarily_static: None,
                };
                s.level = Some(DynamicLevel::High);
                if name == "dynamic_follow" {
                    s.landmarks.dynamic.objects = 2;
                    s.landmarks.dynamic.amplitude = 0.3;
                    s.landmarks.dynamic.speed = 0.3;
                    s.landmarks.dynamic.region = Region::Box {
                        min: [1.0, 2.5, -0.5],
                        max: [3.0, 3.5, 0.5],
                    };
                }
            }
            "temporal_static" => {
                s.landmarks.temporarily_static = Some(TemporaryStaticSpec {
                    center: [5.5, -1.0, 0.0],
                    facing_yaw: std::f64::consts::PI,
                    relocation: [0.0, 2.0, 0.0],
                    ..TemporaryStaticSpec::default()
                });
                s.landmarks.total = 180;
            }
            "e_shape" => {
                s.trajectory = TrajectorySpec {
                    preset: TrajectoryPreset::EShape,
                    duration: 60.0,
                    arm_length: 6.0,
                    arm_spacing: 4.0,
                    zone_distance: 5.0,
                    ..TrajectorySpec::default()
                };
                s.landmarks = LandmarkSpec {
                    total: 360,
                    dynamic_fraction: 0.0,
                    static_regions: vec![
                        // scene behind the object zone, seen from every arm tip
                        Region::Box {
                            min: [13.0, -9.0, -2.5],
                            max: [15.0, 9.0, 2.5],
                        },
                        // left wall, seen on the way back along each arm
                        Region::Box {
                            min: [-8.0, -10.0, -2.5],
                            max: [-6.0, 10.0, 2.5],
                        },
                        // bottom and top walls, seen while turning
                        Region::Box {
                            min: [-6.0, -12.0, -2.5],
                            max: [10.0, -10.0, 2.5],
                        },
                        Region::Box {
                            min: [-6.0, 10.0, -2.5],
                            max: [10.0, 12.0, 2.5],
                        },
                    ],
                    dynamic: DynamicSpec::default(),
                    temporarily_static: Some(TemporaryStaticSpec {
                        count: 30,
                        center: [11.0, -2.0, 0.0],
                        relocation: [0.0, 2.0, 0.0],
                        max_relocations: 2,
                        ..TemporaryStaticSpec::default()
                    }),
                };
            }
            _ => return None,
        }
        Some(s)
    }

    pub fn with_level(mut self, level: DynamicLevel) -> Self {
        self.level = Some(level);
        self
    }

    pub fn counts(&self) -> Result<LandmarkCounts, ScenarioError> {
        let spec = &self.landmarks;
        let fraction = self.level.map(|l| l.fraction()).unwrap_or(spec.dynamic_fraction);
        if !(0.0..=1.0).contains(&fraction) {
            return Err(ScenarioError::Invalid(format!(
                "dynamic fraction {fraction} outside [0, 1]"
            )));
        }
        let dynamic = (fraction * spec.total as f64).round() as usize;
        let temporarily_static = spec.temporarily_static.as_ref().map(|t| t.count).unwrap_or(0);
        let static_count = spec.total.checked_sub(dynamic + temporarily_static).ok_or_else(|| {
            ScenarioError::Invalid(format!(
                "{dynamic} dynamic + {temporarily_static} temporarily static landmarks exceed total {}",
                spec.total
            ))
        })?;
        Ok(LandmarkCounts {
            static_count,
            dynamic,
            temporarily_static,
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.keyframe_rate > 0.0 && self.keyframe_rate.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "keyframe_rate must be > 0, got {}",
                self.keyframe_rate
            )));
        }
        if !(self.trajectory.duration > 0.0 && self.trajectory.duration.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "trajectory.duration must be > 0, got {}",
                self.trajectory.duration
            )));
        }
        self.camera.validate()?;
        let imu = &self.imu;
        if [imu.accel_noise, imu.gyro_noise, imu.accel_walk, imu.gyro_walk]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(ScenarioError::Invalid("IMU noise densities must be >= 0".into()));
        }
        let counts = self.counts()?;
        if counts.static_count > 0 && self.landmarks.static_regions.is_empty() {
            return Err(ScenarioError::Invalid(
                "static landmarks requested but no static_regions given".into(),
            ));
        }
        for r in &self.landmarks.static_regions {
            r.validate()?;
        }
        self.landmarks.dynamic.region.validate()?;
        if counts.dynamic > 0 && self.landmarks.dynamic.objects == 0 {
            return Err(ScenarioError::Invalid(
                "dynamic landmarks requested but dynamic.objects is 0".into(),
            ));
        }
        let ld = &self.loop_detection;
        if ld.min_shared < 3 {
            return Err(ScenarioError::Invalid("loop_detection.min_shared must be >= 3".into()));
        }
        if !(ld.translation_sigma > 0.0 && ld.rotation_sigma > 0.0) {
            return Err(ScenarioError::Invalid("loop measurement sigmas must be > 0".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Scenario, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_fractions() {
        let s = Scenario::preset("dynamic").unwrap();
        let c = s.counts().unwrap();
        assert_eq!((c.static_count, c.dynamic), (40, 40));
        let c = s.clone().with_level(DynamicLevel::None).counts().unwrap();
        assert_eq!((c.static_count, c.dynamic), (80, 0));
        let c = s.clone().with_level(DynamicLevel::Low).counts().unwrap();
        assert_eq!(c.dynamic, 8);
        let c = s.with_level(DynamicLevel::Mid).counts().unwrap();
        assert_eq!(c.dynamic, 24);
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let s = Scenario::preset(name).unwrap();
            s.validate().unwrap();
            let text = serde_json::to_string_pretty(&s).unwrap();
            assert_eq!(Scenario::from_json(&text).unwrap(), s);
        }
        assert!(Scenario::preset("nope").is_none());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let s =
            Scenario::from_json(r#"{"seed": 5, "trajectory": {"preset": "static_hover", "duration": 10}}"#).unwrap();
        assert_eq!(s.seed, 5);
        assert_eq!(s.trajectory.preset, TrajectoryPreset::StaticHover);
        assert_eq!(s.keyframe_rate, 2.0);
    }

    #[test]
    fn invalid_counts_and_durations_are_rejected() {
        let mut s = Scenario::default();
        s.trajectory.duration = 0.0;
        assert!(s.validate().is_err());
        let mut s = Scenario::default();
        s.landmarks.total = 10;
        s.landmarks.temporarily_static = Some(TemporaryStaticSpec::default());
        assert!(s.validate().is_err());
    }
}

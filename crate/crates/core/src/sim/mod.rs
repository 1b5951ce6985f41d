//! Synthetic world simulator: trajectories, landmarks, feature tracks, IMU
//! pseudo-measurements and loop-closure candidates.

pub mod camera;
pub mod dataset;
pub mod imu;
pub mod landmarks;
pub mod loops;
pub mod scenario;
pub mod tracks;
pub mod trajectory;

pub use camera::{observe, CameraModel, FeatureObservation};
pub use dataset::{generate_dataset, Dataset, LandmarkRecord, Manifest, TrackLabel};
pub use imu::synthesize_preintegration;
pub use landmarks::{generate_landmarks, Landmark, LandmarkKind, PositionSchedule};
pub use loops::{compute_loop_relative_pose, detect_loop_candidates, LoopCandidate};
pub use scenario::{DynamicLevel, Scenario};
pub use tracks::{track_features, SimTrack};
pub use trajectory::{generate_trajectory, Trajectory};

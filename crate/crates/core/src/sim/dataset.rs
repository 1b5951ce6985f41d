//! End-to-end dataset generation for one scenario.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::ScenarioError;
use crate::sim::camera::{observe, FeatureObservation};
use crate::sim::imu::synthesize_preintegration;
use crate::sim::landmarks::{generate_landmarks, LandmarkKind};
use crate::sim::loops::{
    believed_point, compute_loop_relative_pose, detect_loop_candidates, loop_covariance, stream_seed, LoopCandidate,
};
use crate::sim::scenario::Scenario;
use crate::sim::tracks::track_features;
use crate::sim::trajectory::Trajectory;
use crate::state::{ImuPreintegration, KeyframeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackLabel {
    pub track_id: usize,
    pub landmark_id: usize,
    pub kind: LandmarkKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub id: usize,
    pub kind: LandmarkKind,
    /// Position at t = 0 (m).
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub frame_count: usize,
    pub track_count: usize,
    pub static_landmarks: usize,
    pub dynamic_landmarks: usize,
    pub temporarily_static_landmarks: usize,
    pub loop_candidates: usize,
    pub false_loop_candidates: usize,
    pub scenario: Scenario,
}

/// Everything the estimator consumes plus the hidden ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub times: Vec<f64>,
    pub ground_truth: Vec<KeyframeState>,
    /// Per keyframe; `feature_id` is the track id.
    pub observations: Vec<Vec<FeatureObservation>>,
    /// One per consecutive keyframe pair.
    pub preintegrations: Vec<ImuPreintegration>,
    pub loop_candidates: Vec<LoopCandidate>,
    /// Indexed by track id.
    pub track_labels: Vec<TrackLabel>,
    pub landmarks: Vec<LandmarkRecord>,
}

impl Dataset {
    pub fn scenario(&self) -> &Scenario {
        &self.manifest.scenario
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.manifest.scenario.gravity)
    }

    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn track_kind(&self, track_id: usize) -> Option<LandmarkKind> {
        self.track_labels.get(track_id).map(|l| l.kind)
    }
}

const STREAM_LANDMARKS: usize = 1;
const STREAM_OBSERVATIONS: usize = 2;
const STREAM_IMU: usize = 3;
const STREAM_LOOPS: usize = 4;

pub fn generate_dataset(scenario: &Scenario) -> Result<Dataset, ScenarioError> {
    scenario.validate()?;
    let seed = scenario.seed;
    let trajectory = Trajectory::new(&scenario.trajectory)?;
    let samples = trajectory.sample(scenario.keyframe_rate);
    if samples.len() < 2 {
        return Err(ScenarioError::Invalid("scenario yields fewer than 2 keyframes".into()));
    }
    let accel_bias = Vector3::from(scenario.accel_bias);
    let gyro_bias = Vector3::from(scenario.gyro_bias);
    let gravity = Vector3::from(scenario.gravity);

    let landmarks = generate_landmarks(
        scenario,
        &samples,
        &mut ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_LANDMARKS, 0)),
    )?;

    let states: Vec<KeyframeState> = samples
        .iter()
        .map(|s| KeyframeState {
            pose: s.pose,
            velocity: s.velocity,
            accel_bias,
            gyro_bias,
        })
        .collect();
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();

    let mut obs_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_OBSERVATIONS, 0));
    let raw: Vec<Vec<FeatureObservation>> = samples
        .iter()
        .enumerate()
        .map(|(f, s)| observe(f, &s.pose, s.t, &landmarks, &scenario.camera, &mut obs_rng))
        .collect();

    let tracks = track_features(&raw);
    let mut observations: Vec<Vec<FeatureObservation>> = vec![Vec::new(); samples.len()];
    let mut track_labels = Vec::with_capacity(tracks.len());
    for t in &tracks {
        track_labels.push(TrackLabel {
            track_id: t.track_id,
            landmark_id: t.landmark_id,
            kind: landmarks[t.landmark_id].kind,
        });
        for o in &t.observations {
            observations[o.frame_id].push(*o);
        }
    }
    for frame in &mut observations {
        frame.sort_by_key(|o| o.feature_id);
    }

    let mut imu_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_IMU, 0));
    let preintegrations: Vec<ImuPreintegration> = states
        .windows(2)
        .zip(times.windows(2))
        .map(|(s, t)| synthesize_preintegration(&s[0], &s[1], t[1] - t[0], &gravity, &scenario.imu, &mut imu_rng))
        .collect();

    let visibility: Vec<BTreeSet<usize>> = raw.iter().map(|f| f.iter().map(|o| o.feature_id).collect()).collect();
    let spec = &scenario.loop_detection;
    let covariance = loop_covariance(spec);
    let believed = |frame: usize, ids: &[usize]| -> BTreeMap<usize, Vector3<f64>> {
        ids.iter()
            .map(|&id| {
                let p_cam = samples[frame]
                    .pose
                    .inverse_transform_point(&landmarks[id].position_at(times[frame]));
                (id, believed_point(seed, frame, id, &p_cam, spec.point_noise))
            })
            .collect()
    };
    let mut loop_candidates = Vec::new();
    for lm in detect_loop_candidates(&visibility, spec) {
        let points_m = believed(lm.m, &lm.shared);
        let points_k = believed(lm.k, &lm.shared);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(stream_seed(seed, STREAM_LOOPS, 0), lm.k, lm.m));
        for est in compute_loop_relative_pose(&lm.shared, &points_m, &points_k, spec, &mut rng) {
            let moved = est.inliers.iter().any(|&id| {
                (landmarks[id].position_at(times[lm.m]) - landmarks[id].position_at(times[lm.k])).norm() > 1e-9
            });
            loop_candidates.push(LoopCandidate {
                k: lm.k,
                m: lm.m,
                relative_pose: est.m_from_k,
                covariance,
                landmark_ids: est.inliers,
                rms: est.rms,
                gt_label: !moved,
            });
        }
    }

    let counts = scenario.counts()?;
    let manifest = Manifest {
        format_version: 1,
        seed,
        frame_count: samples.len(),
        track_count: tracks.len(),
        static_landmarks: counts.static_count,
        dynamic_landmarks: counts.dynamic,
        temporarily_static_landmarks: counts.temporarily_static,
        loop_candidates: loop_candidates.len(),
        false_loop_candidates: loop_candidates.iter().filter(|c| !c.gt_label).count(),
        scenario: scenario.clone(),
    };
    let landmarks = landmarks
        .iter()
        .map(|l| LandmarkRecord {
            id: l.id,
            kind: l.kind,
            position: l.position_at(0.0),
        })
        .collect();

    Ok(Dataset {
        manifest,
        times,
        ground_truth: states,
        observations,
        preintegrations,
        loop_candidates,
        track_labels,
        landmarks,
    })
}

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::ba::residuals::MarginalizationPrior;
use crate::error::SolverError;
use crate::sim::camera::FeatureObservation;
use crate::state::{ImuPreintegration, KeyframeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Conventional bundle adjustment with a Huber loss on every
    /// reprojection residual.
    BaselineHuber,
    /// Per-feature weights with regularization and momentum factors.
    RobustWeights,
}

impl SolverMode {
    pub fn name(self) -> &'static str {
        match self {
            SolverMode::BaselineHuber => "baseline_huber",
            SolverMode::RobustWeights => "robust_weights",
        }
    }

    pub fn parse(s: &str) -> Option<SolverMode> {
        [SolverMode::BaselineHuber, SolverMode::RobustWeights]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub mode: SolverMode,
    /// Regularization factor weight.
    pub lambda_w: f64,
    /// Momentum factor weight.
    pub lambda_m: f64,
    pub window_capacity: usize,
    pub max_alternations: usize,
    pub max_inner_iterations: usize,
    /// Convergence threshold on the largest weight change.
    pub tol_weight: f64,
    /// Convergence threshold on the state update norm.
    pub tol_state: f64,
    /// Huber threshold on the whitened residual norm (baseline mode).
    pub huber_delta: f64,
    /// Standard deviation used to whiten reprojection residuals
    /// (normalized-plane units).
    pub reprojection_sigma: f64,
    /// Residual unit in which `lambda_w` and `lambda_m` are expressed. The
    /// weight of a track is computed from its residual whitened by this
    /// sigma, and the weight penalties are scaled so that the visual part of
    /// the objective stays consistent with `reprojection_sigma`.
    pub weight_sigma: f64,
    /// Residuals of points closer than this (m) are invalid.
    pub min_depth: f64,
    pub initial_damping: f64,
    /// Per-keyframe-step standard deviation of the bias random walk.
    pub accel_bias_step_sigma: f64,
    pub gyro_bias_step_sigma: f64,
    /// Prior on the first keyframe's velocity and biases.
    pub initial_velocity_sigma: f64,
    pub initial_accel_bias_sigma: f64,
    pub initial_gyro_bias_sigma: f64,
    /// Inverse depth given to tracks that cannot be triangulated (1/m).
    pub default_inverse_depth: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            mode: SolverMode::RobustWeights,
            lambda_w: 1.0,
            lambda_m: 0.2,
            window_capacity: 10,
            max_alternations: 8,
            max_inner_iterations: 10,
            tol_weight: 1e-3,
            tol_state: 1e-6,
            huber_delta: 1.345,
            reprojection_sigma: 0.0023,
            weight_sigma: 0.025,
            min_depth: 0.1,
            initial_damping: 1e-4,
            accel_bias_step_sigma: 0.002,
            gyro_bias_step_sigma: 0.0002,
            initial_velocity_sigma: 0.05,
            initial_accel_bias_sigma: 0.1,
            initial_gyro_bias_sigma: 0.01,
            default_inverse_depth: 0.1,
        }
    }
}

impl SolverParams {
    /// Ratio of squared residuals whitened by `reprojection_sigma` to the
    /// same residuals whitened by `weight_sigma`.
    pub fn weight_scale(&self) -> f64 {
        (self.weight_sigma / self.reprojection_sigma).powi(2)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Dataset(format!("invalid solver parameter: {m}")));
        if !(self.lambda_w > 0.0) {
            return bad("lambda_w must be > 0");
        }
        if !(self.lambda_m >= 0.0) {
            return bad("lambda_m must be >= 0");
        }
        if self.window_capacity < 2 {
            return Err(SolverError::WindowTooSmall {
                min: 2,
                got: self.window_capacity,
            });
        }
        if self.max_alternations == 0 || self.max_inner_iterations == 0 {
            return bad("iteration limits must be >= 1");
        }
        let positive = [
            self.huber_delta,
            self.reprojection_sigma,
            self.weight_sigma,
            self.min_depth,
            self.accel_bias_step_sigma,
            self.gyro_bias_step_sigma,
            self.initial_velocity_sigma,
            self.initial_accel_bias_sigma,
            self.initial_gyro_bias_sigma,
            self.default_inverse_depth,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("sigmas, depths and thresholds must be positive and finite");
        }
        if !(self.tol_weight >= 0.0 && self.tol_state >= 0.0 && self.initial_damping >= 0.0) {
            return bad("tolerances and damping must be >= 0");
        }
        Ok(())
    }
}

/// A landmark track inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: usize,
    /// Global id of the anchor keyframe (first observation in the window).
    pub anchor: usize,
    /// Inverse depth along the anchor observation ray (1/m).
    pub inverse_depth: f64,
    /// Keyed by global keyframe id.
    pub observations: BTreeMap<usize, FeatureObservation>,
    pub weight: f64,
    pub prev_weight: f64,
    /// Number of completed window solves this track took part in.
    pub n: u32,
}

impl FeatureTrack {
    pub fn new(obs: FeatureObservation, inverse_depth: f64) -> Self {
        FeatureTrack {
            id: obs.feature_id,
            anchor: obs.frame_id,
            inverse_depth,
            observations: BTreeMap::from([(obs.frame_id, obs)]),
            weight: 1.0,
            prev_weight: 1.0,
            n: 0,
        }
    }

    /// Normalized anchor ray `(x, y, 1)`.
    pub fn ray(&self) -> Vector3<f64> {
        let o = &self.observations[&self.anchor];
        Vector3::new(o.x, o.y, 1.0)
    }

    /// World position implied by the anchor pose and inverse depth.
    pub fn world_point(&self, anchor: &KeyframeState) -> Vector3<f64> {
        anchor.pose.transform_point(&(self.ray() / self.inverse_depth))
    }
}

/// Initial inverse depth from a stereo pair, if the disparity is usable.
pub fn stereo_inverse_depth(obs: &FeatureObservation, baseline: f64) -> Option<f64> {
    let right = obs.right?;
    if baseline <= 0.0 {
        return None;
    }
    let disparity = obs.x - right[0];
    (disparity > 1e-3).then(|| (disparity / baseline).clamp(1e-2, 10.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    /// Global keyframe ids, oldest first.
    pub frame_ids: Vec<usize>,
    pub states: Vec<KeyframeState>,
    /// `preintegrations[i]` links `states[i]` and `states[i + 1]`.
    pub preintegrations: Vec<ImuPreintegration>,
    pub tracks: BTreeMap<usize, FeatureTrack>,
    pub prior: Option<MarginalizationPrior>,
    pub gravity: Vector3<f64>,
    pub baseline: f64,
}

impl SlidingWindow {
    pub fn new(frame_id: usize, state: KeyframeState, gravity: Vector3<f64>, baseline: f64) -> Self {
        SlidingWindow {
            frame_ids: vec![frame_id],
            states: vec![state],
            preintegrations: Vec::new(),
            tracks: BTreeMap::new(),
            prior: None,
            gravity,
            baseline,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, frame_id: usize) -> Option<usize> {
        self.frame_ids.binary_search(&frame_id).ok()
    }

    pub fn check(&self) -> Result<(), SolverError> {
        if self.states.len() != self.frame_ids.len() || self.preintegrations.len() + 1 != self.states.len() {
            return Err(SolverError::DimensionMismatch(format!(
                "window holds {} states, {} ids and {} preintegrations",
                self.states.len(),
                self.frame_ids.len(),
                self.preintegrations.len()
            )));
        }
        if let Some(p) = &self.prior {
            if p.frame_ids.iter().any(|f| self.index_of(*f).is_none()) {
                return Err(SolverError::DimensionMismatch(
                    "prior references keyframes outside the window".into(),
                ));
            }
        }
        Ok(())
    }
}

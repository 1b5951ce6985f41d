//! Streaming visual-inertial odometry over a simulated dataset.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::ba::marginalize::{marginalize, MarginalizationReport};
use crate::ba::residuals::MarginalizationPrior;
use crate::ba::solver::{solve_window, track_residuals, SolveReport};
use crate::ba::window::{stereo_inverse_depth, FeatureTrack, SlidingWindow, SolverParams};
use crate::error::SolverError;
use crate::io::TimedPose;
use crate::sim::camera::FeatureObservation;
use crate::sim::dataset::Dataset;
use crate::state::{propagate, KeyframeState, BA_IDX, BG_IDX, STATE_DIM, V_IDX};

/// One row of the weight log: a track's state after a window solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightLogEntry {
    /// Newest keyframe of the solved window.
    pub keyframe_id: usize,
    pub feature_id: usize,
    pub weight: f64,
    pub n: u32,
    /// Summed squared whitened reprojection residual.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryResult {
    /// Final estimate of every keyframe, taken when it leaves the window.
    pub states: Vec<KeyframeState>,
    pub trajectory: Vec<TimedPose>,
    pub weight_log: Vec<WeightLogEntry>,
    pub reports: Vec<SolveReport>,
    pub marginalizations: Vec<MarginalizationReport>,
}

impl OdometryResult {
    /// Last logged weight of every track, ordered by track id.
    pub fn final_weights(&self) -> Vec<(usize, f64)> {
        let mut last = std::collections::BTreeMap::new();
        for e in &self.weight_log {
            last.insert(e.feature_id, e.weight);
        }
        last.into_iter().collect()
    }
}

fn check_dataset(ds: &Dataset) -> Result<(), SolverError> {
    let n = ds.frame_count();
    if n < 2 {
        return Err(SolverError::Dataset(format!(
            "dataset has {n} keyframes, need at least 2"
        )));
    }
    if ds.observations.len() != n || ds.ground_truth.len() != n || ds.preintegrations.len() + 1 != n {
        return Err(SolverError::Dataset(format!(
            "dataset gap: {n} keyframes, {} observation sets, {} ground-truth states, {} preintegrations",
            ds.observations.len(),
            ds.ground_truth.len(),
            ds.preintegrations.len()
        )));
    }
    for (k, p) in ds.preintegrations.iter().enumerate() {
        if !p.is_valid() {
            return Err(SolverError::Dataset(format!(
                "preintegration {k} is invalid (dt {} s)",
                p.dt
            )));
        }
    }
    for (k, obs) in ds.observations.iter().enumerate() {
        if let Some(o) = obs.iter().find(|o| o.frame_id != k) {
            return Err(SolverError::Dataset(format!(
                "observation of track {} in frame {k} claims frame {}",
                o.feature_id, o.frame_id
            )));
        }
    }
    Ok(())
}

/// Prior on the first keyframe's velocity and biases.
fn initial_prior(frame_id: usize, state: &KeyframeState, params: &SolverParams) -> MarginalizationPrior {
    let mut h = DMatrix::zeros(9, STATE_DIM);
    for i in 0..3 {
        h[(i, V_IDX + i)] = 1.0 / params.initial_velocity_sigma;
        h[(3 + i, BA_IDX + i)] = 1.0 / params.initial_accel_bias_sigma;
        h[(6 + i, BG_IDX + i)] = 1.0 / params.initial_gyro_bias_sigma;
    }
    MarginalizationPrior {
        frame_ids: vec![frame_id],
        linearization: vec![*state],
        h,
        r: DVector::zeros(9),
    }
}

/// Midpoint triangulation of two bearing rays; returns the inverse depth in
/// the first camera.
fn triangulate(a: &KeyframeState, ray_a: &Vector3<f64>, b: &KeyframeState, ray_b: &Vector3<f64>) -> Option<f64> {
    let da = a.pose.rotation * ray_a;
    let db = b.pose.rotation * ray_b;
    let w0 = a.pose.translation - b.pose.translation;
    let (aa, ab, bb) = (da.dot(&da), da.dot(&db), db.dot(&db));
    let (d, e) = (da.dot(&w0), db.dot(&w0));
    let denom = aa * bb - ab * ab;
    if denom < 1e-9 * aa * bb {
        return None;
    }
    let s = (ab * e - bb * d) / denom;
    (s > 0.0).then(|| 1.0 / s)
}

struct Tracker {
    /// Tracks still waiting for a second view to fix their depth.
    pending: BTreeSet<usize>,
}

impl Tracker {
    fn add_observations(&mut self, window: &mut SlidingWindow, obs: &[FeatureObservation], params: &SolverParams) {
        let frame_id = *window.frame_ids.last().unwrap();
        for o in obs {
            match window.tracks.get_mut(&o.feature_id) {
                Some(t) => {
                    t.observations.insert(frame_id, *o);
                    if self.pending.remove(&t.id) {
                        let ia = window.frame_ids.binary_search(&t.anchor).unwrap();
                        let ray_b = Vector3::new(o.x, o.y, 1.0);
                        if let Some(l) =
                            triangulate(&window.states[ia], &t.ray(), window.states.last().unwrap(), &ray_b)
                        {
                            t.inverse_depth = l.clamp(1e-2, 10.0);
                        }
                    }
                }
                None => {
                    let depth = stereo_inverse_depth(o, window.baseline);
                    if depth.is_none() {
                        self.pending.insert(o.feature_id);
                    }
                    window.tracks.insert(
                        o.feature_id,
                        FeatureTrack::new(*o, depth.unwrap_or(params.default_inverse_depth)),
                    );
                }
            }
        }
        self.pending.retain(|id| window.tracks.contains_key(id));
    }
}

/// Run the sliding-window estimator over every keyframe of `ds`. The first
/// keyframe's pose and velocity are taken from ground truth (fixing the
/// gauge); biases start at zero.
pub fn run_odometry(ds: &Dataset, params: &SolverParams) -> Result<OdometryResult, SolverError> {
    params.validate()?;
    check_dataset(ds)?;
    let camera = &ds.scenario().camera;
    let baseline = if camera.is_stereo() { camera.baseline } else { 0.0 };
    let gravity = ds.gravity();
    let first = KeyframeState {
        accel_bias: Vector3::zeros(),
        gyro_bias: Vector3::zeros(),
        ..ds.ground_truth[0]
    };

    let mut window = SlidingWindow::new(0, first, gravity, baseline);
    window.prior = Some(initial_prior(0, &first, params));
    let mut tracker = Tracker {
        pending: BTreeSet::new(),
    };
    tracker.add_observations(&mut window, &ds.observations[0], params);

    let n = ds.frame_count();
    let mut result = OdometryResult {
        states: Vec::with_capacity(n),
        trajectory: Vec::with_capacity(n),
        weight_log: Vec::new(),
        reports: Vec::new(),
        marginalizations: Vec::new(),
    };
    for k in 1..n {
        let oldest = window.states[0];
        if let Some(m) = marginalize(&mut window, params)? {
            result.states.push(oldest);
            result.marginalizations.push(m);
        }
        let preint = &ds.preintegrations[k - 1];
        let predicted = propagate(window.states.last().unwrap(), preint, &gravity);
        window.frame_ids.push(k);
        window.states.push(predicted);
        window.preintegrations.push(preint.clone());
        tracker.add_observations(&mut window, &ds.observations[k], params);

        let report = solve_window(&mut window, params)?;
        log::debug!(
            "keyframe {k}: {} alternations, converged {}, objective {:.4e} -> {:.4e}",
            report.alternations,
            report.converged,
            report.objective_trace.first().unwrap_or(&f64::NAN),
            report.objective_trace.last().unwrap_or(&f64::NAN)
        );
        result.reports.push(report);
        for (id, residual) in track_residuals(&window, params)? {
            let t = &window.tracks[&id];
            result.weight_log.push(WeightLogEntry {
                keyframe_id: k,
                feature_id: id,
                weight: t.weight,
                n: t.n,
                residual,
            });
        }
    }
    result.states.extend(window.states.iter().copied());
    result.trajectory = result
        .states
        .iter()
        .zip(&ds.times)
        .map(|(s, t)| TimedPose { t: *t, pose: s.pose })
        .collect();
    Ok(result)
}

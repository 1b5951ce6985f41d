//! End-to-end loop backend: grouping, clustering, selective optimization
//! and reclustering.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::backend::graph::{huber_optimize, selective_optimize, Edge, GraphReport, GroupHypotheses, PoseGraph};
use crate::backend::grouping::{group_keyframes, KeyframeGroup};
use crate::backend::hypothesis::{
    cluster_hypotheses, estimate_candidate_world_pose, hypothesis_weight_update, CandidateEstimate, Hypothesis,
};
use crate::error::SolverError;
use crate::geometry::Pose;
use crate::sim::loops::LoopCandidate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendParams {
    /// Hypothesis regularization weight.
    pub lambda_l: f64,
    /// Minimum number of continuously tracked features within a group.
    pub alpha: usize,
    /// Single-linkage distance between estimated group poses (m).
    pub cluster_distance: f64,
    /// Optional rotation limit for linking two estimates (rad).
    pub cluster_rotation: Option<f64>,
    /// Cluster, optimize and recluster this many times.
    pub rounds: usize,
    pub max_alternations: usize,
    pub max_iterations: usize,
    pub tol_weight: f64,
    pub tol_pose: f64,
    pub initial_damping: f64,
    /// Standard deviations of consecutive odometry edges (m, rad).
    pub odometry_translation_sigma: f64,
    pub odometry_rotation_sigma: f64,
    /// Huber threshold of the accept-all baseline (whitened norm).
    pub huber_delta: f64,
    /// Odometry-edge standard deviations of the accept-all baseline (m, rad),
    /// tuned separately from the selective backend.
    pub huber_translation_sigma: f64,
    pub huber_rotation_sigma: f64,
}

impl Default for BackendParams {
    fn default() -> Self {
        BackendParams {
            lambda_l: 1.0,
            alpha: 10,
            cluster_distance: 0.5,
            cluster_rotation: None,
            rounds: 2,
            max_alternations: 20,
            max_iterations: 20,
            tol_weight: 1e-4,
            tol_pose: 1e-7,
            initial_damping: 1e-4,
            odometry_translation_sigma: 0.1,
            odometry_rotation_sigma: 0.01,
            huber_delta: 1.345,
            huber_translation_sigma: 0.01,
            huber_rotation_sigma: 0.001,
        }
    }
}

impl BackendParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Dataset(format!("invalid backend parameter: {m}")));
        if !(self.lambda_l > 0.0 && self.lambda_l.is_finite()) {
            return bad("lambda_l must be > 0");
        }
        if self.alpha == 0 || self.rounds == 0 || self.max_alternations == 0 || self.max_iterations == 0 {
            return bad("alpha, rounds and iteration limits must be >= 1");
        }
        let positive = [
            self.cluster_distance,
            self.odometry_translation_sigma,
            self.odometry_rotation_sigma,
            self.huber_delta,
            self.huber_translation_sigma,
            self.huber_rotation_sigma,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("distances, sigmas and thresholds must be positive");
        }
        if self.cluster_rotation.is_some_and(|r| !(r > 0.0)) {
            return bad("cluster_rotation must be > 0");
        }
        Ok(())
    }
}

/// One hypothesis after an optimization round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisLogEntry {
    pub round: usize,
    pub group_id: usize,
    pub hypothesis_rank: usize,
    pub member_count: usize,
    pub weight: f64,
    /// `R_h / |H|` at the round's final poses.
    pub mean_residual: f64,
    /// Majority ground-truth label of the members. Evaluation only.
    pub gt_label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResult {
    pub poses: Vec<Pose>,
    pub groups: Vec<GroupHypotheses>,
    pub log: Vec<HypothesisLogEntry>,
    pub reports: Vec<GraphReport>,
}

impl BackendResult {
    /// Final hypotheses of every group.
    pub fn hypotheses(&self) -> impl Iterator<Item = &Hypothesis> {
        self.groups.iter().flat_map(|g| g.hypotheses.iter())
    }
}

fn loop_edges(poses: &[Pose], candidates: &[LoopCandidate]) -> Result<Vec<Option<Edge>>, SolverError> {
    candidates
        .iter()
        .map(|c| {
            if c.k >= poses.len() || c.m >= poses.len() || c.k == c.m {
                log::warn!(
                    "loop candidate ({}, {}) references keyframes outside the graph",
                    c.k,
                    c.m
                );
                return Ok(None);
            }
            Edge::new(c.m, c.k, c.relative_pose, &c.covariance).map(Some)
        })
        .collect()
}

fn odometry_edges(poses: &[Pose], translation_sigma: f64, rotation_sigma: f64) -> Vec<Edge> {
    poses
        .windows(2)
        .enumerate()
        .map(|(i, w)| Edge::with_sigmas(i, i + 1, w[0].between(&w[1]), translation_sigma, rotation_sigma))
        .collect()
}

/// Pose graph over the odometry poses, without hypotheses.
pub fn build_graph(
    poses: &[Pose],
    tracks: &[BTreeSet<usize>],
    candidates: &[LoopCandidate],
    params: &BackendParams,
) -> Result<PoseGraph, SolverError> {
    if tracks.len() != poses.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} poses but {} track sets",
            poses.len(),
            tracks.len()
        )));
    }
    let local = odometry_edges(poses, params.odometry_translation_sigma, params.odometry_rotation_sigma);
    let groups = group_keyframes(tracks, params.alpha)
        .into_iter()
        .map(|group| GroupHypotheses {
            group,
            hypotheses: Vec::new(),
        })
        .collect();
    Ok(PoseGraph {
        poses: poses.to_vec(),
        local,
        loops: loop_edges(poses, candidates)?,
        groups,
    })
}

/// Estimated pose of the group's first keyframe for each valid candidate
/// whose current keyframe lies in the group.
pub fn candidate_estimates(
    graph: &PoseGraph,
    candidates: &[LoopCandidate],
    group: &KeyframeGroup,
) -> Vec<CandidateEstimate> {
    let i = group.start;
    candidates
        .iter()
        .enumerate()
        .filter(|(ci, c)| graph.loops[*ci].is_some() && group.contains(c.k))
        .map(|(ci, c)| {
            let k_from_i = graph.poses[c.k].between(&graph.poses[i]);
            CandidateEstimate {
                candidate: ci,
                world_from_start: estimate_candidate_world_pose(&c.relative_pose, &graph.poses[c.m], &k_from_i),
                rms: c.rms,
            }
        })
        .collect()
}

fn cluster_group(
    graph: &PoseGraph,
    candidates: &[LoopCandidate],
    group: &KeyframeGroup,
    params: &BackendParams,
) -> Vec<Hypothesis> {
    let est = candidate_estimates(graph, candidates, group);
    cluster_hypotheses(group.id, &est, params.cluster_distance, params.cluster_rotation)
}

/// Fresh clustering of every group with closed-form initial weights.
pub fn cluster_all(graph: &mut PoseGraph, candidates: &[LoopCandidate], params: &BackendParams) {
    for gi in 0..graph.groups.len() {
        graph.groups[gi].hypotheses = cluster_group(graph, candidates, &graph.groups[gi].group, params);
    }
    graph.update_weights(params.lambda_l);
}

/// Recluster every group at the current poses. A new hypothesis inherits
/// the weight of the previous hypothesis of its group that holds a strict
/// majority of its members; otherwise it starts from the single-hypothesis
/// closed form.
pub fn recluster(graph: &mut PoseGraph, candidates: &[LoopCandidate], params: &BackendParams) {
    for gi in 0..graph.groups.len() {
        let mut fresh = cluster_group(graph, candidates, &graph.groups[gi].group, params);
        for h in &mut fresh {
            let carried = graph.groups[gi].hypotheses.iter().find(|old| {
                let shared = h
                    .members
                    .iter()
                    .filter(|m| old.members.binary_search(m).is_ok())
                    .count();
                2 * shared > h.members.len()
            });
            h.weight = match carried {
                Some(old) => old.weight,
                None => hypothesis_weight_update(graph.hypothesis_residual(h), None, params.lambda_l).0,
            };
        }
        graph.groups[gi].hypotheses = fresh;
    }
}

fn log_round(graph: &PoseGraph, candidates: &[LoopCandidate], round: usize, out: &mut Vec<HypothesisLogEntry>) {
    for g in &graph.groups {
        for (rank, h) in g.hypotheses.iter().enumerate() {
            let r = graph.hypothesis_residual(h);
            let truthful = h.members.iter().filter(|&&c| candidates[c].gt_label).count();
            out.push(HypothesisLogEntry {
                round,
                group_id: g.group.id,
                hypothesis_rank: rank,
                member_count: h.members.len(),
                weight: h.weight,
                mean_residual: r.sum / r.count as f64,
                gt_label: 2 * truthful > h.members.len(),
            });
        }
    }
}

/// Run `params.rounds` rounds of clustering (reclustering after the first)
/// followed by selective optimization.
pub fn run_backend(
    poses: &[Pose],
    tracks: &[BTreeSet<usize>],
    candidates: &[LoopCandidate],
    params: &BackendParams,
) -> Result<BackendResult, SolverError> {
    params.validate()?;
    let mut graph = build_graph(poses, tracks, candidates, params)?;
    let mut log = Vec::new();
    let mut reports = Vec::new();
    for round in 0..params.rounds {
        if round == 0 {
            cluster_all(&mut graph, candidates, params);
        } else {
            recluster(&mut graph, candidates, params);
        }
        let report = selective_optimize(&mut graph, params);
        log::info!(
            "backend round {round}: {} alternations, objective {:.4e} -> {:.4e}",
            report.alternations,
            report.objective_trace.first().unwrap_or(&f64::NAN),
            report.objective_trace.last().unwrap_or(&f64::NAN)
        );
        reports.push(report);
        log_round(&graph, candidates, round, &mut log);
    }
    Ok(BackendResult {
        poses: graph.poses,
        groups: graph.groups,
        log,
        reports,
    })
}

/// Baseline: every loop candidate accepted with a Huber loss.
pub fn run_huber_backend(
    poses: &[Pose],
    candidates: &[LoopCandidate],
    params: &BackendParams,
) -> Result<(Vec<Pose>, GraphReport), SolverError> {
    params.validate()?;
    let local = odometry_edges(poses, params.huber_translation_sigma, params.huber_rotation_sigma);
    let loops: Vec<Edge> = loop_edges(poses, candidates)?.into_iter().flatten().collect();
    let mut out = poses.to_vec();
    let report = huber_optimize(&mut out, &local, &loops, params);
    Ok((out, report))
}

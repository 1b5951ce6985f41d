//! Loop closing with multiple hypotheses per keyframe group.

pub mod graph;
pub mod grouping;
pub mod hypothesis;
pub mod pipeline;

pub use graph::{edge_residual, selective_optimize, Edge, GraphReport, GroupHypotheses, PoseGraph};
pub use grouping::{group_keyframes, track_sets, KeyframeGroup};
pub use hypothesis::{
    cluster_hypotheses, estimate_candidate_world_pose, hypothesis_weight_update, CandidateEstimate, Hypothesis,
    HypothesisResidual,
};
pub use pipeline::{recluster, run_backend, run_huber_backend, BackendParams, BackendResult, HypothesisLogEntry};

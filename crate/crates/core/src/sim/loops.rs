//! Loop-closure candidates from landmark-identity overlap, with relative
//! poses estimated by robust 3D-3D alignment.

use nalgebra::{Matrix6, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::{rigid_align, Pose};
use crate::sim::scenario::LoopDetectionSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    /// Current keyframe.
    pub k: usize,
    /// Past keyframe, `m < k`.
    pub m: usize,
    /// Pose of `k` expressed in the frame of `m`.
    pub relative_pose: Pose,
    /// Covariance over (translation, rotation).
    pub covariance: Matrix6<f64>,
    pub landmark_ids: Vec<usize>,
    /// RMS alignment residual (m).
    pub rms: f64,
    /// Ground truth: whether the relative pose is consistent with the true
    /// motion. Evaluation only.
    pub gt_label: bool,
}

/// A (k, m) keyframe pair sharing enough landmarks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopMatch {
    pub k: usize,
    pub m: usize,
    pub shared: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativePoseEstimate {
    pub m_from_k: Pose,
    pub inliers: Vec<usize>,
    pub rms: f64,
}

pub fn loop_covariance(spec: &LoopDetectionSpec) -> Matrix6<f64> {
    let (t, r) = (spec.translation_sigma.powi(2), spec.rotation_sigma.powi(2));
    Matrix6::from_diagonal(&nalgebra::Vector6::new(t, t, t, r, r, r))
}

/// Pairs (k, m) with `k - m > min_separation` sharing at least `min_shared`
/// landmark ids. Per k, the `max_matches` best-overlapping m are kept
/// (ties go to the earlier m).
pub fn detect_loop_candidates(visibility: &[BTreeSet<usize>], spec: &LoopDetectionSpec) -> Vec<LoopMatch> {
    let mut out = Vec::new();
    for k in 0..visibility.len() {
        let mut matches: Vec<LoopMatch> = (0..k.saturating_sub(spec.min_separation))
            .filter(|&m| k - m > spec.min_separation)
            .filter_map(|m| {
                let shared: Vec<usize> = visibility[k].intersection(&visibility[m]).copied().collect();
                (shared.len() >= spec.min_shared).then_some(LoopMatch { k, m, shared })
            })
            .collect();
        matches.sort_by(|a, b| b.shared.len().cmp(&a.shared.len()).then(a.m.cmp(&b.m)));
        matches.truncate(spec.max_matches);
        matches.sort_by_key(|c| c.m);
        out.extend(matches);
    }
    out
}

fn inliers_of(
    pose: &Pose,
    ids: &[usize],
    pk: &BTreeMap<usize, Vector3<f64>>,
    pm: &BTreeMap<usize, Vector3<f64>>,
    thr: f64,
) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|id| (pose.transform_point(&pk[id]) - pm[id]).norm() < thr)
        .collect()
}

fn align_ids(
    ids: &[usize],
    pk: &BTreeMap<usize, Vector3<f64>>,
    pm: &BTreeMap<usize, Vector3<f64>>,
) -> Option<(Pose, f64)> {
    let src: Vec<_> = ids.iter().map(|id| pk[id]).collect();
    let dst: Vec<_> = ids.iter().map(|id| pm[id]).collect();
    rigid_align(&src, &dst, false).ok().map(|a| (a.pose, a.rms))
}

fn ransac<R: Rng + ?Sized>(
    ids: &[usize],
    pk: &BTreeMap<usize, Vector3<f64>>,
    pm: &BTreeMap<usize, Vector3<f64>>,
    spec: &LoopDetectionSpec,
    rng: &mut R,
) -> Option<RelativePoseEstimate> {
    let min_inliers = spec.min_shared.max(3);
    if ids.len() < min_inliers {
        return None;
    }
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..spec.ransac_iterations {
        let pick: Vec<usize> = sample(rng, ids.len(), 3).into_iter().map(|i| ids[i]).collect();
        let Some((pose, _)) = align_ids(&pick, pk, pm) else {
            continue;
        };
        let inl = inliers_of(&pose, ids, pk, pm, spec.inlier_threshold);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    if best.len() < min_inliers {
        return None;
    }
    // refine on the consensus set, then re-select once
    let (pose, _) = align_ids(&best, pk, pm)?;
    let inl = inliers_of(&pose, ids, pk, pm, spec.inlier_threshold);
    if inl.len() < min_inliers {
        return None;
    }
    let (pose, rms) = align_ids(&inl, pk, pm)?;
    Some(RelativePoseEstimate {
        m_from_k: pose,
        inliers: inl,
        rms,
    })
}

/// Relative pose of `k` in `m` from matched 3D points expressed in each
/// camera frame. Returns the dominant consensus and, when the remaining
/// matches still hold a consensus of `min_shared` points, a second one.
/// Degenerate or undersized matches yield nothing.
pub fn compute_loop_relative_pose<R: Rng + ?Sized>(
    shared: &[usize],
    points_m: &BTreeMap<usize, Vector3<f64>>,
    points_k: &BTreeMap<usize, Vector3<f64>>,
    spec: &LoopDetectionSpec,
    rng: &mut R,
) -> Vec<RelativePoseEstimate> {
    let ids: Vec<usize> = shared
        .iter()
        .copied()
        .filter(|id| points_m.contains_key(id) && points_k.contains_key(id))
        .collect();
    let mut out = Vec::new();
    let Some(first) = ransac(&ids, points_k, points_m, spec, rng) else {
        return out;
    };
    let rest: Vec<usize> = ids.iter().copied().filter(|id| !first.inliers.contains(id)).collect();
    out.push(first);
    if let Some(second) = ransac(&rest, points_k, points_m, spec, rng) {
        out.push(second);
    }
    out
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for a per-(frame, landmark) or per-pair stream, independent of the
/// order in which streams are drawn.
pub fn stream_seed(seed: u64, a: usize, b: usize) -> u64 {
    mix(mix(mix(seed) ^ a as u64) ^ (b as u64).wrapping_mul(0x2545_f491_4f6c_dd1d))
}

/// The map's estimate of a landmark in the camera frame of one keyframe:
/// the true point plus isotropic noise of `sigma`.
pub fn believed_point(seed: u64, frame: usize, landmark: usize, p_cam: &Vector3<f64>, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return *p_cam;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, frame, landmark));
    p_cam + Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

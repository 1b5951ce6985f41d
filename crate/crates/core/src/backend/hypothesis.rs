//! Loop-closure hypotheses: candidates of one keyframe group clustered by
//! the world pose they imply for the group's first keyframe, and the
//! closed-form weights of the top two clusters.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

/// A loop candidate's estimate of the world pose of its group's first
/// keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEstimate {
    /// Index into the loop-candidate list.
    pub candidate: usize,
    pub world_from_start: Pose,
    /// Alignment residual of the candidate (m).
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub group: usize,
    /// Candidate indices, ascending.
    pub members: Vec<usize>,
    pub weight: f64,
    /// Mean estimated position of the group's first keyframe, with the
    /// rotation of the first member.
    pub centroid: Pose,
    pub mean_rms: f64,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// World pose of the group's first keyframe `i` implied by a loop between
/// current keyframe `k` and past keyframe `m`: `world_from_m * m_from_k *
/// k_from_i`.
pub fn estimate_candidate_world_pose(m_from_k: &Pose, world_from_m: &Pose, k_from_i: &Pose) -> Pose {
    world_from_m.compose(m_from_k).compose(k_from_i)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Single-linkage clusters over estimate positions: two estimates are
/// linked when their translations are within `distance` (and, if given,
/// their rotations within `rotation_gate` rad). Clusters are returned as
/// positions into `estimates`, largest first; ties go to the smaller mean
/// alignment residual, then to the earlier first member.
pub fn linkage_clusters(estimates: &[CandidateEstimate], distance: f64, rotation_gate: Option<f64>) -> Vec<Vec<usize>> {
    let n = estimates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for a in 0..n {
        for b in a + 1..n {
            let (pa, pb) = (&estimates[a].world_from_start, &estimates[b].world_from_start);
            let near = (pa.translation - pb.translation).norm() <= distance;
            let aligned = rotation_gate.is_none_or(|g| pa.between(pb).rotation_angle() <= g);
            if near && aligned {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(i);
    }
    let mean_rms = |c: &Vec<usize>| c.iter().map(|&i| estimates[i].rms).sum::<f64>() / c.len() as f64;
    clusters.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(mean_rms(a).total_cmp(&mean_rms(b)))
            .then(a[0].cmp(&b[0]))
    });
    clusters
}

/// The two largest clusters of one group's candidates, as hypotheses with
/// weight 1.
pub fn cluster_hypotheses(
    group: usize,
    estimates: &[CandidateEstimate],
    distance: f64,
    rotation_gate: Option<f64>,
) -> Vec<Hypothesis> {
    linkage_clusters(estimates, distance, rotation_gate)
        .into_iter()
        .take(2)
        .map(|c| {
            let n = c.len() as f64;
            let mean = c
                .iter()
                .map(|&i| estimates[i].world_from_start.translation)
                .sum::<nalgebra::Vector3<f64>>()
                / n;
            let mut members: Vec<usize> = c.iter().map(|&i| estimates[i].candidate).collect();
            members.sort_unstable();
            Hypothesis {
                group,
                members,
                weight: 1.0,
                centroid: Pose::new(estimates[c[0]].world_from_start.rotation, mean),
                mean_rms: c.iter().map(|&i| estimates[i].rms).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Summed squared whitened residual `R` of a hypothesis and its
/// cardinality `|H|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisResidual {
    pub sum: f64,
    pub count: usize,
}

impl HypothesisResidual {
    /// `R / |H|^2`, the curvature of the hypothesis term in its weight.
    pub fn normalized(&self) -> f64 {
        self.sum / (self.count as f64).powi(2)
    }
}

/// Objective of one group's weights:
/// `(w0/|H0|)^2 R0 + (w1/|H1|)^2 R1 + lambda_l (1 - w0 - w1)^2`.
pub fn hypothesis_objective(
    w: (f64, f64),
    h0: HypothesisResidual,
    h1: Option<HypothesisResidual>,
    lambda_l: f64,
) -> f64 {
    let mut f = w.0 * w.0 * h0.normalized();
    let mut s = w.0;
    if let Some(h1) = h1 {
        f += w.1 * w.1 * h1.normalized();
        s += w.1;
    }
    f + lambda_l * (1.0 - s).powi(2)
}

/// Minimizer of [`hypothesis_objective`] over `[0, 1]^2` (or over `w0` alone
/// without a second hypothesis, in which case `w1` is 0).
///
/// The stationary point `w_h = lambda A_other / (A0 A1 + lambda (A0 + A1))`
/// is non-negative and sums to at most one, so it always lies in the box.
/// When both residuals vanish every split of `w0 + w1 = 1` is optimal and
/// the even split is returned.
pub fn hypothesis_weight_update(h0: HypothesisResidual, h1: Option<HypothesisResidual>, lambda_l: f64) -> (f64, f64) {
    let a0 = h0.normalized();
    let Some(h1) = h1 else {
        return (lambda_l / (a0 + lambda_l), 0.0);
    };
    let a1 = h1.normalized();
    let det = a0 * a1 + lambda_l * (a0 + a1);
    if det <= 0.0 {
        return (0.5, 0.5);
    }
    let w0 = (lambda_l * a1 / det).clamp(0.0, 1.0);
    let w1 = (lambda_l * a0 / det).clamp(0.0, 1.0);
    (w0, w1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn at(candidate: usize, x: f64) -> CandidateEstimate {
        CandidateEstimate {
            candidate,
            world_from_start: Pose::from_translation(Vector3::new(x, 0.0, 0.0)),
            rms: 0.01,
        }
    }

    #[test]
    fn identical_estimates_form_one_cluster() {
        let h = cluster_hypotheses(3, &[at(4, 1.0), at(7, 1.0)], 0.5, None);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].members, vec![4, 7]);
        assert_eq!(h[0].group, 3);
    }

    #[test]
    fn distant_estimates_stay_apart_and_top_two_are_kept() {
        let e: Vec<_> = (0..4).map(|i| at(i, 5.0 * i as f64)).collect();
        let h = cluster_hypotheses(0, &e, 0.5, None);
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].members, vec![0]);
        assert_eq!(h[1].members, vec![1]);
    }

    #[test]
    fn chaining_links_through_intermediates() {
        let e = [at(0, 0.0), at(1, 0.4), at(2, 0.8), at(3, 3.0)];
        let c = linkage_clusters(&e, 0.5, None);
        assert_eq!(c, vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn zero_residual_single_hypothesis_gets_full_weight() {
        let (w0, w1) = hypothesis_weight_update(HypothesisResidual { sum: 0.0, count: 4 }, None, 1.0);
        assert_eq!((w0, w1), (1.0, 0.0));
    }

    #[test]
    fn equal_hypotheses_share_weight() {
        let h = HypothesisResidual { sum: 3.0, count: 2 };
        let (w0, w1) = hypothesis_weight_update(h, Some(h), 1.0);
        assert_eq!(w0, w1);
        let z = HypothesisResidual { sum: 0.0, count: 2 };
        let (w0, w1) = hypothesis_weight_update(z, Some(z), 1.0);
        assert_eq!(w0 + w1, 1.0);
    }

    #[test]
    fn normalization_divides_by_squared_cardinality() {
        let h = HypothesisResidual { sum: 6.0, count: 3 };
        assert_eq!(h.normalized(), 6.0 / 9.0);
        let doubled = HypothesisResidual { sum: 12.0, count: 6 };
        assert!((doubled.normalized() - h.normalized() / 2.0).abs() < 1e-15);
    }
}

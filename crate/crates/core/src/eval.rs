//! Trajectory error and weight statistics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::geometry::rigid_align;
use crate::io::TimedPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    #[default]
    Se3,
    /// Adds a global scale, for monocular runs.
    Sim3,
}

impl AlignmentKind {
    pub fn parse(s: &str) -> Option<AlignmentKind> {
        match s {
            "se3" => Some(AlignmentKind::Se3),
            "sim3" => Some(AlignmentKind::Sim3),
            _ => None,
        }
    }
}

fn check_increasing(traj: &[TimedPose], what: &str) -> Result<(), EvalError> {
    match traj.windows(2).position(|w| !(w[1].t > w[0].t)) {
        Some(i) => Err(EvalError::Association(format!(
            "{what} timestamps not strictly increasing at index {} ({} -> {})",
            i + 1,
            traj[i].t,
            traj[i + 1].t
        ))),
        None => Ok(()),
    }
}

/// Half the median sampling period of `traj`.
pub fn default_tolerance(traj: &[TimedPose]) -> f64 {
    let mut dt: Vec<f64> = traj.windows(2).map(|w| w[1].t - w[0].t).collect();
    if dt.is_empty() {
        return 0.0;
    }
    dt.sort_by(f64::total_cmp);
    0.5 * dt[dt.len() / 2]
}

/// Matched (ground truth, estimate) positions.
pub type PositionPair = (Vector3<f64>, Vector3<f64>);

/// Pairs every estimated pose with the nearest ground-truth pose in time,
/// dropping pairs further apart than `tolerance` seconds. Returns
/// `(ground truth, estimate)` positions.
pub fn associate(
    ground_truth: &[TimedPose],
    estimate: &[TimedPose],
    tolerance: f64,
) -> Result<Vec<PositionPair>, EvalError> {
    check_increasing(ground_truth, "ground-truth")?;
    check_increasing(estimate, "estimated")?;
    let mut pairs = Vec::with_capacity(estimate.len());
    for e in estimate {
        let i = ground_truth.partition_point(|g| g.t < e.t);
        let nearest = [i.checked_sub(1), (i < ground_truth.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (ground_truth[a].t - e.t)
                    .abs()
                    .total_cmp(&(ground_truth[b].t - e.t).abs())
            });
        if let Some(j) = nearest.filter(|&j| (ground_truth[j].t - e.t).abs() <= tolerance) {
            pairs.push((ground_truth[j].pose.translation, e.pose.translation));
        }
    }
    if pairs.len() < 3 {
        return Err(EvalError::Association(format!(
            "only {} poses associated within {tolerance} s, need at least 3",
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// Root-mean-square position error after aligning the estimate onto the
/// ground truth. Association uses [`default_tolerance`] of the ground truth.
pub fn ate_rmse(ground_truth: &[TimedPose], estimate: &[TimedPose], kind: AlignmentKind) -> Result<f64, EvalError> {
    let pairs = associate(ground_truth, estimate, default_tolerance(ground_truth))?;
    ate_of_pairs(&pairs, kind)
}

/// ATE of already associated `(ground truth, estimate)` positions.
pub fn ate_of_pairs(pairs: &[(Vector3<f64>, Vector3<f64>)], kind: AlignmentKind) -> Result<f64, EvalError> {
    let gt: Vec<Vector3<f64>> = pairs.iter().map(|p| p.0).collect();
    let est: Vec<Vector3<f64>> = pairs.iter().map(|p| p.1).collect();
    let a = rigid_align(&est, &gt, kind == AlignmentKind::Sim3)?;
    let sum: f64 = est.iter().zip(&gt).map(|(e, g)| (a.apply(e) - g).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// `ate_high / ate_none`.
pub fn degradation_rate(ate_high: f64, ate_none: f64) -> Result<f64, EvalError> {
    if !(ate_none > 0.0 && ate_none.is_finite()) {
        return Err(EvalError::UndefinedRate(ate_none));
    }
    Ok(ate_high / ate_none)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl LabelStats {
    fn of(values: &[f64]) -> Option<LabelStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(LabelStats {
            count: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub positive: Option<LabelStats>,
    pub negative: Option<LabelStats>,
    /// Probability that a random positive outweighs a random negative
    /// (ties count half). `None` when either class is empty.
    pub auroc: Option<f64>,
}

/// Area under the ROC curve of `score` as a classifier of `positive`,
/// from the Mann-Whitney rank statistic with mid-ranks for ties.
pub fn auroc(samples: &[(f64, bool)]) -> Option<f64> {
    let n_pos = samples.iter().filter(|s| s.1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = 0.5 * ((i + 1) + (j + 1)) as f64;
        rank_sum += mid * sorted[i..=j].iter().filter(|s| s.1).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Weight summaries for labeled samples `(weight, positive)`, where static
/// features (or true hypotheses) are the positive class.
pub fn weight_separation_stats(samples: &[(f64, bool)]) -> WeightStats {
    let pos: Vec<f64> = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
    WeightStats {
        positive: LabelStats::of(&pos),
        negative: LabelStats::of(&neg),
        auroc: auroc(samples),
    }
}

/// One row of a dynamic-level table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: String,
    pub mode: String,
    pub seed: u64,
    /// `None` when the run diverged or failed.
    pub ate_m: Option<f64>,
    pub r_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub ate_rmse: Option<f64>,
    pub r_d: Option<f64>,
    pub weight_stats: Option<WeightStats>,
    /// Final-round hypothesis weights against their majority labels.
    pub hypothesis_stats: Option<WeightStats>,
    pub levels: Vec<LevelRow>,
}

/// Median of the finite values, or `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    LabelStats::of(&values.into_iter().filter(|v| v.is_finite()).collect::<Vec<_>>()).map(|s| s.median)
}

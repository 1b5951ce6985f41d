//! Removal of the oldest keyframe through a Schur-complement prior.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ba::residuals::MarginalizationPrior;
use crate::ba::solver::{reduced_system, Problem, Selection};
use crate::ba::window::{SlidingWindow, SolverParams};
use crate::error::SolverError;
use crate::state::STATE_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalizationReport {
    pub frame_id: usize,
    pub prior_rank: usize,
    /// Tracks moved to a new anchor keyframe.
    pub reanchored: usize,
    /// Tracks removed because no later keyframe in the window observed them.
    pub dropped: Vec<usize>,
}

/// Relative eigenvalue cutoff for pseudo-inverses and prior rank.
const EIGEN_TOLERANCE: f64 = 1e-10;

/// Information `(H*, g*)` left on keyframes `1..` after eliminating keyframe
/// 0 and the inverse depths of the tracks anchored in it. Only the factors
/// touching those variables take part: the existing prior, the IMU and
/// bias-walk factors between keyframes 0 and 1, and the weighted visual
/// factors of the eliminated tracks.
pub fn marginal_information(
    window: &SlidingWindow,
    params: &SolverParams,
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    if window.len() < 2 {
        return Err(SolverError::WindowTooSmall {
            min: 2,
            got: window.len(),
        });
    }
    let problem = Problem::new(window, params)?;
    let sel = Selection {
        imu_pairs: 1,
        tracks: problem.tracks.iter().map(|t| t.anchor == 0).collect(),
    };
    let depths: Vec<f64> = window.tracks.values().map(|t| t.inverse_depth).collect();
    let (_, lin) = problem.linearize(&window.states, &depths, &sel)?;
    let (a, b) = reduced_system(&lin, 0.0);

    Ok(schur_marginal(&a, &b, STATE_DIM))
}

/// Eliminate the first `m` variables of the quadratic `x^T H x / 2 + g^T x`
/// (up to the factor convention of Gauss-Newton), returning the Hessian and
/// gradient left on the remaining ones. A singular eliminated block is
/// pseudo-inverted.
pub fn schur_marginal(h: &DMatrix<f64>, g: &DVector<f64>, m: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = h.nrows();
    let h_mm = h.view((0, 0), (m, m)).into_owned();
    let h_rm = h.view((m, 0), (n - m, m)).into_owned();
    let h_rr = h.view((m, m), (n - m, n - m)).into_owned();
    let (pinv, singular) = pseudo_inverse(&h_mm);
    if singular {
        log::debug!("marginalized block is rank deficient; using its pseudo-inverse");
    }
    let k = &h_rm * pinv;
    let hs = h_rr - &k * h_rm.transpose();
    let gs = g.rows(m, n - m) - &k * g.rows(0, m);
    ((&hs + hs.transpose()) * 0.5, gs)
}

fn pseudo_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = EIGEN_TOLERANCE * max.max(1e-300);
    let singular = eig.eigenvalues.iter().any(|v| *v <= cutoff);
    let inv = eig.eigenvalues.map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    (
        &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose(),
        singular,
    )
}

/// Factor `(H*, g*)` as a square-root prior `r_p - H_p dx` whose squared
/// norm has Hessian `H*` and gradient `g*` at `dx = 0`.
pub fn prior_from_information(h: &DMatrix<f64>, g: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|i| eig.eigenvalues[*i] > EIGEN_TOLERANCE * max)
        .collect();
    let mut hp = DMatrix::zeros(keep.len(), h.ncols());
    let mut rp = DVector::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        hp.row_mut(row).copy_from(&(v.transpose() * s));
        rp[row] = -v.dot(g) / s;
    }
    (hp, rp)
}

/// Marginalize the oldest keyframe: build the new prior, drop the keyframe
/// and its preintegration, and move tracks anchored there to their next
/// observing keyframe. Weights and momentum state of moved tracks are kept.
pub fn marginalize_oldest(
    window: &mut SlidingWindow,
    params: &SolverParams,
) -> Result<MarginalizationReport, SolverError> {
    let (h, g) = marginal_information(window, params)?;
    let (hp, rp) = prior_from_information(&h, &g);
    let frame_id = window.frame_ids[0];
    let old_anchor = window.states[0];

    window.frame_ids.remove(0);
    window.states.remove(0);
    window.preintegrations.remove(0);
    let prior = MarginalizationPrior {
        frame_ids: window.frame_ids.clone(),
        linearization: window.states.clone(),
        h: hp,
        r: rp,
    };
    if !prior.is_finite() {
        return Err(SolverError::Dataset(format!(
            "marginalizing keyframe {frame_id} produced a non-finite prior"
        )));
    }
    let rank = prior.dim();
    window.prior = Some(prior);

    let mut dropped = Vec::new();
    let mut reanchored = 0;
    for t in window.tracks.values_mut() {
        if t.anchor != frame_id {
            t.observations.remove(&frame_id);
            continue;
        }
        let point = t.world_point(&old_anchor);
        t.observations.remove(&frame_id);
        let moved = t.observations.keys().next().copied().and_then(|next| {
            let i = window.frame_ids.binary_search(&next).ok()?;
            let z = window.states[i].pose.inverse_transform_point(&point).z;
            (z > params.min_depth).then_some((next, 1.0 / z))
        });
        match moved {
            Some((next, inverse_depth)) => {
                t.anchor = next;
                t.inverse_depth = inverse_depth;
                reanchored += 1;
            }
            None => dropped.push(t.id),
        }
    }
    for id in &dropped {
        window.tracks.remove(id);
    }
    Ok(MarginalizationReport {
        frame_id,
        prior_rank: rank,
        reanchored,
        dropped,
    })
}

/// Marginalize the oldest keyframe if the window is at capacity; a no-op
/// otherwise.
pub fn marginalize(
    window: &mut SlidingWindow,
    params: &SolverParams,
) -> Result<Option<MarginalizationReport>, SolverError> {
    if window.len() < params.window_capacity {
        return Ok(None);
    }
    marginalize_oldest(window, params).map(Some)
}

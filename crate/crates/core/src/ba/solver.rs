//! Alternating optimization of one sliding window: a closed-form weight
//! update followed by damped Gauss-Newton on states and inverse depths.
//!
//! Inverse depths are eliminated with a per-track Schur complement, so the
//! dense linear system only spans the keyframe states.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::ba::residuals::{
    anchor_stereo_residual, bias_walk_residual, imu_residual, prior_residual, reprojection_residual,
    ReprojectionJacobians,
};
use crate::ba::weights::{huber, huber_weight, optimal_weight_momentum};
use crate::ba::window::{SlidingWindow, SolverMode, SolverParams};
use crate::error::SolverError;
use crate::state::{KeyframeState, Matrix9, STATE_DIM};

type Vector6 = SVector<f64, 6>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Global id of the newest keyframe in the window.
    pub frame_id: usize,
    pub window_size: usize,
    pub alternations: usize,
    pub gauss_newton_iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every weight update and every
    /// state update.
    pub objective_trace: Vec<f64>,
    pub final_weight_change: f64,
    pub final_step_norm: f64,
    /// Tracks removed because none of their residuals were valid.
    pub dropped_tracks: Vec<usize>,
    pub elapsed_ms: f64,
}

/// Per-track data used during one solve.
#[derive(Debug, Clone)]
pub(crate) struct TrackView {
    pub id: usize,
    /// Window index of the anchor keyframe.
    pub anchor: usize,
    pub ray: Vector3<f64>,
    pub anchor_right: Option<[f64; 2]>,
    /// Observations in other window keyframes: (index, left, right).
    pub obs: Vec<(usize, [f64; 2], Option<[f64; 2]>)>,
    pub weight: f64,
    pub prev_weight: f64,
    pub n: u32,
}

enum Term {
    Weighted {
        target: usize,
        r: Vector2<f64>,
        j: ReprojectionJacobians,
    },
    Stereo {
        r: Vector2<f64>,
        jd: Vector2<f64>,
    },
}

/// Schur data of one inverse depth.
#[derive(Debug, Clone, Default)]
pub(crate) struct DepthBlock {
    pub hdd: f64,
    pub gd: f64,
    pub hfd: Vec<(usize, Vector6)>,
}

impl DepthBlock {
    fn hfd_mut(&mut self, frame: usize) -> &mut Vector6 {
        let pos = match self.hfd.iter().position(|(f, _)| *f == frame) {
            Some(p) => p,
            None => {
                self.hfd.push((frame, Vector6::zeros()));
                self.hfd.len() - 1
            }
        };
        &mut self.hfd[pos].1
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub depth: Vec<DepthBlock>,
}

/// Which factors enter a linearization.
#[derive(Debug, Clone)]
pub(crate) struct Selection {
    /// IMU and bias-walk factors between keyframes `k, k + 1` for `k` below
    /// this bound.
    pub imu_pairs: usize,
    /// Visual factors per track.
    pub tracks: Vec<bool>,
}

pub(crate) struct Problem<'a> {
    pub params: &'a SolverParams,
    pub window: &'a SlidingWindow,
    pub tracks: Vec<TrackView>,
    sqrt_infos: Vec<Matrix9>,
    prior_index: Vec<usize>,
}

impl<'a> Problem<'a> {
    pub fn new(window: &'a SlidingWindow, params: &'a SolverParams) -> Result<Self, SolverError> {
        window.check()?;
        let sqrt_infos = window
            .preintegrations
            .iter()
            .enumerate()
            .map(|(k, p)| {
                p.sqrt_information().ok_or_else(|| {
                    SolverError::Dataset(format!("preintegration {k} has a non positive-definite covariance"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let prior_index = match &window.prior {
            Some(p) => p.frame_ids.iter().map(|f| window.index_of(*f).unwrap()).collect(),
            None => Vec::new(),
        };
        let mut tracks = Vec::with_capacity(window.tracks.len());
        for t in window.tracks.values() {
            let Some(anchor) = window.index_of(t.anchor) else {
                return Err(SolverError::DimensionMismatch(format!(
                    "track {} anchored outside the window",
                    t.id
                )));
            };
            let a = &t.observations[&t.anchor];
            let obs = t
                .observations
                .iter()
                .filter(|(f, _)| **f != t.anchor)
                .filter_map(|(f, o)| window.index_of(*f).map(|i| (i, [o.x, o.y], o.right)))
                .collect();
            tracks.push(TrackView {
                id: t.id,
                anchor,
                ray: Vector3::new(a.x, a.y, 1.0),
                anchor_right: a.right,
                obs,
                weight: t.weight,
                prev_weight: t.prev_weight,
                n: t.n,
            });
        }
        Ok(Problem {
            params,
            window,
            tracks,
            sqrt_infos,
            prior_index,
        })
    }

    pub fn all(&self) -> Selection {
        Selection {
            imu_pairs: self.window.len() - 1,
            tracks: vec![true; self.tracks.len()],
        }
    }

    fn dim(&self) -> usize {
        self.window.len() * STATE_DIM
    }

    /// Visual terms of one track and the number of residuals attempted.
    fn terms(&self, t: &TrackView, states: &[KeyframeState], depth: f64) -> (Vec<Term>, usize) {
        let p = self.params;
        let sigma = p.reprojection_sigma;
        let b = self.window.baseline;
        let anchor = &states[t.anchor].pose;
        let mut out = Vec::new();
        let mut attempted = 0;
        if let Some(right) = t.anchor_right {
            if b > 0.0 {
                let (r, jd) = anchor_stereo_residual(&t.ray, depth, right, b, sigma);
                out.push(Term::Stereo { r, jd });
                attempted += 1;
            }
        }
        for (i, left, right) in &t.obs {
            let target = &states[*i].pose;
            let cams = std::iter::once((*left, 0.0)).chain(right.filter(|_| b > 0.0).map(|r| (r, b)));
            for (o, offset) in cams {
                attempted += 1;
                if let Some((r, j)) =
                    reprojection_residual(target, anchor, &t.ray, depth, o, offset, sigma, p.min_depth)
                {
                    out.push(Term::Weighted { target: *i, r, j });
                }
            }
        }
        (out, attempted)
    }

    /// Sum of squared reprojection residuals that the track's weight
    /// multiplies, whitened by the weight sigma; `None` if it has no valid
    /// weighted residual.
    pub fn track_residual(&self, t: &TrackView, states: &[KeyframeState], depth: f64) -> Option<f64> {
        let (terms, _) = self.terms(t, states, depth);
        let mut sum = None;
        for term in &terms {
            if let Term::Weighted { r, .. } = term {
                *sum.get_or_insert(0.0) += r.norm_squared();
            }
        }
        sum.map(|s| s / self.params.weight_scale())
    }

    /// Tracks whose residuals are all invalid at the given state.
    pub fn invalid_tracks(&self, states: &[KeyframeState], depths: &[f64]) -> Vec<usize> {
        self.tracks
            .iter()
            .zip(depths)
            .filter_map(|(t, d)| {
                let (terms, attempted) = self.terms(t, states, *d);
                (attempted > 0 && terms.is_empty()).then_some(t.id)
            })
            .collect()
    }

    /// Regularization and momentum penalties of the current weights, in the
    /// units of the data cost.
    pub fn weight_penalty(&self) -> f64 {
        if self.params.mode != SolverMode::RobustWeights {
            return 0.0;
        }
        let p = self.params;
        self.tracks
            .iter()
            .map(|t| {
                let n = t.n as f64;
                p.lambda_w * (1.0 - t.weight).powi(2) + p.lambda_m * n * n * (t.prev_weight - t.weight).powi(2)
            })
            .sum::<f64>()
            * p.weight_scale()
    }

    /// Data cost of the selected factors and, if `lin` is given, the
    /// Gauss-Newton system `H = J^T J`, `g = J^T r` with depths kept aside.
    pub fn accumulate(
        &self,
        states: &[KeyframeState],
        depths: &[f64],
        sel: &Selection,
        mut lin: Option<&mut Linear>,
    ) -> Result<f64, SolverError> {
        let p = self.params;
        let w = self.window;
        let mut cost = 0.0;

        for k in 0..sel.imu_pairs {
            let (r, j0, j1) = imu_residual(
                &states[k],
                &states[k + 1],
                &w.preintegrations[k],
                &self.sqrt_infos[k],
                &w.gravity,
            );
            cost += r.norm_squared();
            if let Some(l) = lin.as_deref_mut() {
                add_pair(l, k, &j0, k + 1, &j1, &r);
            }
            let (r, j0, j1) = bias_walk_residual(
                &states[k],
                &states[k + 1],
                p.accel_bias_step_sigma,
                p.gyro_bias_step_sigma,
            );
            cost += r.norm_squared();
            if let Some(l) = lin.as_deref_mut() {
                add_pair(l, k, &j0, k + 1, &j1, &r);
            }
        }

        if let Some(prior) = &w.prior {
            let sub: Vec<KeyframeState> = self.prior_index.iter().map(|i| states[*i]).collect();
            let (r, j) = prior_residual(&sub, prior)?;
            cost += r.norm_squared();
            if let Some(l) = lin.as_deref_mut() {
                let jtj = j.transpose() * &j;
                let jtr = j.transpose() * &r;
                for (a, ia) in self.prior_index.iter().enumerate() {
                    let mut ga = l.g.rows_mut(ia * STATE_DIM, STATE_DIM);
                    ga += jtr.rows(a * STATE_DIM, STATE_DIM);
                    for (b, ib) in self.prior_index.iter().enumerate() {
                        let mut hab = l.h.view_mut((ia * STATE_DIM, ib * STATE_DIM), (STATE_DIM, STATE_DIM));
                        hab += jtj.view((a * STATE_DIM, b * STATE_DIM), (STATE_DIM, STATE_DIM));
                    }
                }
            }
        }

        let robust = p.mode == SolverMode::RobustWeights;
        for (ti, t) in self.tracks.iter().enumerate() {
            if !sel.tracks[ti] {
                continue;
            }
            let (terms, _) = self.terms(t, states, depths[ti]);
            let mut block = DepthBlock::default();
            for term in terms {
                match term {
                    Term::Weighted { target, r, j } => {
                        let s = r.norm_squared();
                        let scale = if robust {
                            cost += t.weight * t.weight * s;
                            t.weight
                        } else {
                            cost += huber(s, p.huber_delta);
                            huber_weight(s, p.huber_delta).sqrt()
                        };
                        if let Some(l) = lin.as_deref_mut() {
                            let (r, jt, ja, jd) =
                                (r * scale, j.target * scale, j.anchor * scale, j.inverse_depth * scale);
                            add_pose_pair(l, target, &jt, t.anchor, &ja, &r);
                            block.hdd += jd.norm_squared();
                            block.gd += jd.dot(&r);
                            *block.hfd_mut(target) += jt.transpose() * jd;
                            *block.hfd_mut(t.anchor) += ja.transpose() * jd;
                        }
                    }
                    Term::Stereo { r, jd } => {
                        let s = r.norm_squared();
                        let scale = if robust {
                            cost += s;
                            1.0
                        } else {
                            cost += huber(s, p.huber_delta);
                            huber_weight(s, p.huber_delta).sqrt()
                        };
                        block.hdd += (jd * scale).norm_squared();
                        block.gd += (jd * scale).dot(&(r * scale));
                    }
                }
            }
            if let Some(l) = lin.as_deref_mut() {
                l.depth[ti] = block;
            }
        }
        Ok(cost)
    }

    pub fn linearize(
        &self,
        states: &[KeyframeState],
        depths: &[f64],
        sel: &Selection,
    ) -> Result<(f64, Linear), SolverError> {
        let n = self.dim();
        let mut lin = Linear {
            h: DMatrix::zeros(n, n),
            g: DVector::zeros(n),
            depth: vec![DepthBlock::default(); self.tracks.len()],
        };
        let cost = self.accumulate(states, depths, sel, Some(&mut lin))?;
        Ok((cost, lin))
    }
}

fn add_pair<const R: usize>(
    l: &mut Linear,
    i: usize,
    ji: &SMatrix<f64, R, STATE_DIM>,
    j: usize,
    jj: &SMatrix<f64, R, STATE_DIM>,
    r: &SVector<f64, R>,
) {
    let (oi, oj) = (i * STATE_DIM, j * STATE_DIM);
    let mut v = l.h.fixed_view_mut::<STATE_DIM, STATE_DIM>(oi, oi);
    v += ji.transpose() * ji;
    let mut v = l.h.fixed_view_mut::<STATE_DIM, STATE_DIM>(oj, oj);
    v += jj.transpose() * jj;
    let cross = ji.transpose() * jj;
    let mut v = l.h.fixed_view_mut::<STATE_DIM, STATE_DIM>(oi, oj);
    v += cross;
    let mut v = l.h.fixed_view_mut::<STATE_DIM, STATE_DIM>(oj, oi);
    v += cross.transpose();
    let mut v = l.g.fixed_rows_mut::<STATE_DIM>(oi);
    v += ji.transpose() * r;
    let mut v = l.g.fixed_rows_mut::<STATE_DIM>(oj);
    v += jj.transpose() * r;
}

/// Adds a visual residual over the pose dims of two distinct keyframes.
fn add_pose_pair(
    l: &mut Linear,
    i: usize,
    ji: &SMatrix<f64, 2, 6>,
    j: usize,
    jj: &SMatrix<f64, 2, 6>,
    r: &Vector2<f64>,
) {
    let (oi, oj) = (i * STATE_DIM, j * STATE_DIM);
    let mut v = l.h.fixed_view_mut::<6, 6>(oi, oi);
    v += ji.transpose() * ji;
    let mut v = l.h.fixed_view_mut::<6, 6>(oj, oj);
    v += jj.transpose() * jj;
    let cross = ji.transpose() * jj;
    let mut v = l.h.fixed_view_mut::<6, 6>(oi, oj);
    v += cross;
    let mut v = l.h.fixed_view_mut::<6, 6>(oj, oi);
    v += cross.transpose();
    let mut v = l.g.fixed_rows_mut::<6>(oi);
    v += ji.transpose() * r;
    let mut v = l.g.fixed_rows_mut::<6>(oj);
    v += jj.transpose() * r;
}

/// Inverse-depth curvature below which a track is left out of the reduced
/// system.
const MIN_DEPTH_CURVATURE: f64 = 1e-12;

/// Frame-only system after eliminating the inverse depths, with Marquardt
/// damping `mu` on every diagonal entry.
pub(crate) fn reduced_system(lin: &Linear, mu: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = lin.h.clone();
    let mut b = lin.g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += mu * (lin.h[(i, i)] + 1e-6);
    }
    for blk in &lin.depth {
        if blk.hdd < MIN_DEPTH_CURVATURE {
            continue;
        }
        let hdd = blk.hdd * (1.0 + mu);
        for (fa, va) in &blk.hfd {
            let mut bv = b.fixed_rows_mut::<6>(fa * STATE_DIM);
            bv -= va * (blk.gd / hdd);
            for (fb, vb) in &blk.hfd {
                let mut av = a.fixed_view_mut::<6, 6>(fa * STATE_DIM, fb * STATE_DIM);
                av -= va * vb.transpose() / hdd;
            }
        }
    }
    (a, b)
}

/// Back-substituted inverse-depth step for the frame step `dx`.
fn depth_steps(lin: &Linear, mu: f64, dx: &DVector<f64>) -> Vec<f64> {
    lin.depth
        .iter()
        .map(|blk| {
            if blk.hdd < MIN_DEPTH_CURVATURE {
                return 0.0;
            }
            let coupling: f64 = blk
                .hfd
                .iter()
                .map(|(f, v)| v.dot(&dx.fixed_rows::<6>(f * STATE_DIM)))
                .sum();
            -(blk.gd + coupling) / (blk.hdd * (1.0 + mu))
        })
        .collect()
}

/// Damped step with the oldest keyframe's pose held fixed.
fn solve_step(lin: &Linear, mu: f64) -> Option<(DVector<f64>, Vec<f64>)> {
    let (mut a, mut b) = reduced_system(lin, mu);
    for i in 0..6 {
        a.row_mut(i).fill(0.0);
        a.column_mut(i).fill(0.0);
        a[(i, i)] = 1.0;
        b[i] = 0.0;
    }
    let chol = a.cholesky()?;
    let dx = chol.solve(&(-b));
    if dx.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let dd = depth_steps(lin, mu, &dx);
    Some((dx, dd))
}

struct PhaseResult {
    iterations: usize,
    last_step: f64,
    converged: bool,
}

const MAX_DAMPING: f64 = 1e10;

/// Damped Gauss-Newton on states and depths with the weights fixed.
fn gauss_newton(
    problem: &Problem,
    states: &mut Vec<KeyframeState>,
    depths: &mut [f64],
    mu: &mut f64,
) -> Result<PhaseResult, SolverError> {
    let p = problem.params;
    let sel = problem.all();
    let mut result = PhaseResult {
        iterations: 0,
        last_step: 0.0,
        converged: false,
    };
    for _ in 0..p.max_inner_iterations {
        let (cost, lin) = problem.linearize(states, depths, &sel)?;
        result.iterations += 1;
        let mut accepted = false;
        while *mu <= MAX_DAMPING {
            let Some((dx, dd)) = solve_step(&lin, *mu) else {
                *mu = (*mu * 10.0).max(1e-8);
                continue;
            };
            let trial_depths: Vec<f64> = depths.iter().zip(&dd).map(|(d, s)| d + s).collect();
            let step_norm = (dx.norm_squared() + dd.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if trial_depths.iter().all(|d| *d > 0.0 && d.is_finite()) {
                let trial: Vec<KeyframeState> = states
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.retract(dx.rows(i * STATE_DIM, STATE_DIM).as_slice()))
                    .collect();
                let trial_cost = problem.accumulate(&trial, &trial_depths, &sel, None)?;
                if trial_cost.is_finite() && trial_cost <= cost {
                    *states = trial;
                    depths.copy_from_slice(&trial_depths);
                    *mu = (*mu / 10.0).max(1e-12);
                    result.last_step = step_norm;
                    accepted = true;
                    break;
                }
            }
            if step_norm < p.tol_state {
                break;
            }
            *mu = (*mu * 10.0).max(1e-8);
        }
        if !accepted {
            // no decrease at any damping: already at a local minimum
            result.converged = true;
            result.last_step = 0.0;
            break;
        }
        if result.last_step < p.tol_state {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}

/// Optimize the window in place: states, inverse depths and (in robust
/// mode) per-track weights. Tracks whose residuals are all invalid at the
/// initial estimate are removed from the window.
pub fn solve_window(window: &mut SlidingWindow, params: &SolverParams) -> Result<SolveReport, SolverError> {
    params.validate()?;
    let start = Instant::now();

    let dropped = {
        let problem = Problem::new(window, params)?;
        let depths: Vec<f64> = window.tracks.values().map(|t| t.inverse_depth).collect();
        problem.invalid_tracks(&window.states, &depths)
    };
    for id in &dropped {
        log::debug!("dropping track {id}: no valid residual in window");
        window.tracks.remove(id);
    }

    let mut problem = Problem::new(window, params)?;
    let mut states = window.states.clone();
    let mut depths: Vec<f64> = window.tracks.values().map(|t| t.inverse_depth).collect();
    let robust = params.mode == SolverMode::RobustWeights;
    let objective = |pr: &Problem, s: &[KeyframeState], d: &[f64]| -> Result<f64, SolverError> {
        Ok(pr.accumulate(s, d, &pr.all(), None)? + pr.weight_penalty())
    };

    let mut report = SolveReport {
        frame_id: *window.frame_ids.last().unwrap(),
        window_size: window.len(),
        alternations: 0,
        gauss_newton_iterations: 0,
        converged: false,
        objective_trace: vec![objective(&problem, &states, &depths)?],
        final_weight_change: 0.0,
        final_step_norm: 0.0,
        dropped_tracks: dropped,
        elapsed_ms: 0.0,
    };

    let mut mu = params.initial_damping;
    for _ in 0..params.max_alternations {
        report.alternations += 1;
        let mut max_dw: f64 = 0.0;
        if robust {
            let updates: Vec<Option<f64>> = problem
                .tracks
                .iter()
                .zip(&depths)
                .map(|(t, d)| problem.track_residual(t, &states, *d))
                .collect();
            for (t, r) in problem.tracks.iter_mut().zip(updates) {
                if let Some(r) = r {
                    let w = optimal_weight_momentum(r, params.lambda_w, params.lambda_m, t.prev_weight, t.n);
                    max_dw = max_dw.max((w - t.weight).abs());
                    t.weight = w;
                }
            }
            report.objective_trace.push(objective(&problem, &states, &depths)?);
        }
        let phase = gauss_newton(&problem, &mut states, &mut depths, &mut mu)?;
        report.gauss_newton_iterations += phase.iterations;
        report.objective_trace.push(objective(&problem, &states, &depths)?);
        report.final_weight_change = max_dw;
        report.final_step_norm = phase.last_step;
        if max_dw < params.tol_weight && phase.converged {
            report.converged = true;
            break;
        }
    }

    if states.iter().any(|s| !s.is_finite()) {
        return Err(SolverError::Dataset("window solve produced non-finite states".into()));
    }
    let participated: Vec<bool> = problem
        .tracks
        .iter()
        .zip(&depths)
        .map(|(t, d)| problem.track_residual(t, &states, *d).is_some())
        .collect();
    let views = std::mem::take(&mut problem.tracks);
    drop(problem);
    window.states = states;
    for ((view, d), took_part) in views.iter().zip(&depths).zip(participated) {
        let t = window.tracks.get_mut(&view.id).unwrap();
        t.inverse_depth = *d;
        t.weight = view.weight;
        if took_part {
            t.prev_weight = view.weight;
            t.n += 1;
        }
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Objective of the window at its current estimate.
pub fn window_objective(window: &SlidingWindow, params: &SolverParams) -> Result<f64, SolverError> {
    let problem = Problem::new(window, params)?;
    let depths: Vec<f64> = window.tracks.values().map(|t| t.inverse_depth).collect();
    Ok(problem.accumulate(&window.states, &depths, &problem.all(), None)? + problem.weight_penalty())
}

/// Summed squared whitened reprojection residual of every track that has at
/// least one valid weighted residual, keyed by track id.
pub fn track_residuals(window: &SlidingWindow, params: &SolverParams) -> Result<Vec<(usize, f64)>, SolverError> {
    let problem = Problem::new(window, params)?;
    Ok(problem
        .tracks
        .iter()
        .zip(window.tracks.values())
        .filter_map(|(view, t)| {
            problem
                .track_residual(view, &window.states, t.inverse_depth)
                .map(|r| (t.id, r))
        })
        .collect())
}

//! 6-DOF pose graph with weighted loop hypotheses.
//!
//! Each pose is perturbed on the right, `R <- R Exp(dtheta)`, `p <- p + dp`,
//! with the tangent ordered `(dp, dtheta)`. The first pose is held fixed.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::ba::weights::{huber, huber_weight};
use crate::backend::grouping::KeyframeGroup;
use crate::backend::hypothesis::{hypothesis_objective, hypothesis_weight_update, Hypothesis, HypothesisResidual};
use crate::backend::pipeline::BackendParams;
use crate::error::SolverError;
use crate::geometry::{right_jacobian_inv, rotation_vector, skew, Pose};

const MAX_DAMPING: f64 = 1e10;

/// Relative-pose constraint: pose of `to` expressed in the frame of `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub measurement: Pose,
    /// Upper-triangular `L^T` with `L L^T` the information matrix.
    pub sqrt_info: Matrix6<f64>,
}

impl Edge {
    /// `covariance` is over (translation, rotation).
    pub fn new(from: usize, to: usize, measurement: Pose, covariance: &Matrix6<f64>) -> Result<Edge, SolverError> {
        let bad = || SolverError::DimensionMismatch(format!("edge {from}->{to}: covariance is not positive definite"));
        let info = covariance.try_inverse().ok_or_else(bad)?;
        let l = info.cholesky().ok_or_else(bad)?.l();
        Ok(Edge {
            from,
            to,
            measurement,
            sqrt_info: l.transpose(),
        })
    }

    pub fn with_sigmas(from: usize, to: usize, measurement: Pose, translation: f64, rotation: f64) -> Edge {
        let d = Vector6::new(translation, translation, translation, rotation, rotation, rotation);
        Edge {
            from,
            to,
            measurement,
            sqrt_info: Matrix6::from_diagonal(&d.map(|s| 1.0 / s)),
        }
    }
}

/// Whitened residual `[R_a^T (p_b - p_a) - t_z ; Log(R_z^T R_a^T R_b)]` and
/// its Jacobians with respect to the `from` and `to` poses.
pub fn edge_residual(poses: &[Pose], edge: &Edge) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let (a, b) = (&poses[edge.from], &poses[edge.to]);
    let ra = a.rotation_matrix();
    let rb = b.rotation_matrix();
    let d = ra.transpose() * (b.translation - a.translation);
    let et = d - edge.measurement.translation;
    let er = rotation_vector(&(edge.measurement.rotation.inverse() * a.rotation.inverse() * b.rotation));
    let jr_inv = right_jacobian_inv(&er);

    let mut ja = Matrix6::zeros();
    let mut jb = Matrix6::zeros();
    ja.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-ra.transpose()));
    ja.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&d));
    let rel: Matrix3<f64> = rb.transpose() * ra;
    ja.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * rel));
    jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&ra.transpose());
    jb.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);

    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&et);
    r.fixed_rows_mut::<3>(3).copy_from(&er);
    (edge.sqrt_info * r, edge.sqrt_info * ja, edge.sqrt_info * jb)
}

/// Squared whitened residual norm.
pub fn edge_cost(poses: &[Pose], edge: &Edge) -> f64 {
    edge_residual(poses, edge).0.norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHypotheses {
    pub group: KeyframeGroup,
    /// At most two, strongest first.
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub poses: Vec<Pose>,
    /// Odometry chain, `local[i]` links poses `i` and `i + 1`.
    pub local: Vec<Edge>,
    /// One entry per loop candidate; `None` for candidates that reference
    /// keyframes outside the graph.
    pub loops: Vec<Option<Edge>>,
    pub groups: Vec<GroupHypotheses>,
}

impl PoseGraph {
    /// `R_h` and `|H|` of a hypothesis at the current poses.
    pub fn hypothesis_residual(&self, h: &Hypothesis) -> HypothesisResidual {
        let sum = h
            .members
            .iter()
            .filter_map(|&c| self.loops[c].as_ref())
            .map(|e| edge_cost(&self.poses, e))
            .sum();
        HypothesisResidual {
            sum,
            count: h.members.len(),
        }
    }

    fn residual_pair(&self, g: &GroupHypotheses) -> Option<(HypothesisResidual, Option<HypothesisResidual>)> {
        let h0 = self.hypothesis_residual(g.hypotheses.first()?);
        Some((h0, g.hypotheses.get(1).map(|h| self.hypothesis_residual(h))))
    }

    /// Odometry terms plus, for every group with hypotheses, the weighted
    /// loop residuals and the hypothesis regularizer.
    pub fn objective(&self, lambda_l: f64) -> f64 {
        let mut f: f64 = self.local.iter().map(|e| edge_cost(&self.poses, e)).sum();
        for g in &self.groups {
            if let Some((h0, h1)) = self.residual_pair(g) {
                let w = (g.hypotheses[0].weight, g.hypotheses.get(1).map_or(0.0, |h| h.weight));
                f += hypothesis_objective(w, h0, h1, lambda_l);
            }
        }
        f
    }

    /// Closed-form weight update of every group at the current poses.
    /// Returns the largest weight change.
    pub fn update_weights(&mut self, lambda_l: f64) -> f64 {
        let mut change: f64 = 0.0;
        for gi in 0..self.groups.len() {
            let Some((h0, h1)) = self.residual_pair(&self.groups[gi]) else {
                continue;
            };
            let (w0, w1) = hypothesis_weight_update(h0, h1, lambda_l);
            for (h, w) in self.groups[gi].hypotheses.iter_mut().zip([w0, w1]) {
                change = change.max((h.weight - w).abs());
                h.weight = w;
            }
        }
        change
    }

    /// Loop edges with their hypothesis scale `w / |H|`.
    fn weighted_loops(&self) -> Vec<(&Edge, f64)> {
        let mut out = Vec::new();
        for g in &self.groups {
            for h in &g.hypotheses {
                let s = h.weight / h.members.len() as f64;
                if s > 0.0 {
                    out.extend(h.members.iter().filter_map(|&c| self.loops[c].as_ref()).map(|e| (e, s)));
                }
            }
        }
        out
    }
}

/// A residual term of the least-squares problem.
#[derive(Clone, Copy)]
struct Term<'a> {
    edge: &'a Edge,
    scale: f64,
    /// Huber threshold on the whitened norm, if robustified.
    huber: Option<f64>,
}

impl Term<'_> {
    fn cost(&self, poses: &[Pose]) -> f64 {
        let s = self.scale * self.scale * edge_cost(poses, self.edge);
        self.huber.map_or(s, |d| huber(s, d))
    }
}

fn total_cost(poses: &[Pose], terms: &[Term]) -> f64 {
    terms.iter().map(|t| t.cost(poses)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LmOutcome {
    iterations: usize,
    converged: bool,
}

fn linearize(poses: &[Pose], terms: &[Term]) -> (DMatrix<f64>, DVector<f64>) {
    let n = 6 * poses.len();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for t in terms {
        let (r, ja, jb) = edge_residual(poses, t.edge);
        let irls = t
            .huber
            .map_or(1.0, |d| huber_weight(t.scale * t.scale * r.norm_squared(), d).sqrt());
        let s = t.scale * irls;
        let (r, ja, jb) = (r * s, ja * s, jb * s);
        let (a, b) = (6 * t.edge.from, 6 * t.edge.to);
        for (i, ji) in [(a, &ja), (b, &jb)] {
            let mut gi = g.fixed_rows_mut::<6>(i);
            gi += ji.transpose() * r;
            for (j, jj) in [(a, &ja), (b, &jb)] {
                let mut blk = h.fixed_view_mut::<6, 6>(i, j);
                blk += ji.transpose() * jj;
            }
        }
    }
    (h, g)
}

fn retract_all(poses: &[Pose], dx: &DVector<f64>) -> Vec<Pose> {
    let mut out = poses.to_vec();
    for (k, p) in out.iter_mut().enumerate().skip(1) {
        let o = 6 * (k - 1);
        let dp = Vector3::new(dx[o], dx[o + 1], dx[o + 2]);
        let dt = Vector3::new(dx[o + 3], dx[o + 4], dx[o + 5]);
        *p = p.retract(&dt, &dp);
    }
    out
}

/// Levenberg-Marquardt with the first pose fixed. Steps are accepted only if
/// they strictly lower the cost, so the cost never increases.
fn levenberg_marquardt(
    poses: &mut Vec<Pose>,
    terms: &[Term],
    params: &BackendParams,
    max_iterations: usize,
) -> LmOutcome {
    let mut cost = total_cost(poses, terms);
    let mut mu = params.initial_damping;
    let mut iterations = 0;
    if poses.len() < 2 {
        return LmOutcome {
            iterations,
            converged: true,
        };
    }
    while iterations < max_iterations {
        iterations += 1;
        let (h, g) = linearize(poses, terms);
        let m = h.nrows() - 6;
        let hr = h.view((6, 6), (m, m)).into_owned();
        let gr = g.rows(6, m).into_owned();
        if gr.amax() < 1e-14 {
            return LmOutcome {
                iterations,
                converged: true,
            };
        }
        loop {
            let mut a = hr.clone();
            for i in 0..m {
                a[(i, i)] += mu * (hr[(i, i)] + 1e-6);
            }
            let step = a.cholesky().map(|c| c.solve(&(-&gr)));
            let Some(dx) = step else {
                mu *= 10.0;
                if mu > MAX_DAMPING {
                    return LmOutcome {
                        iterations,
                        converged: false,
                    };
                }
                continue;
            };
            let candidate = retract_all(poses, &dx);
            let new_cost = total_cost(&candidate, terms);
            if new_cost < cost {
                *poses = candidate;
                let small = dx.norm() < params.tol_pose || cost - new_cost <= 1e-12 * cost;
                cost = new_cost;
                mu = (mu / 10.0).max(1e-12);
                if small {
                    return LmOutcome {
                        iterations,
                        converged: true,
                    };
                }
                break;
            }
            mu *= 10.0;
            if mu > MAX_DAMPING {
                // no descent direction left at any damping
                return LmOutcome {
                    iterations,
                    converged: true,
                };
            }
        }
    }
    LmOutcome {
        iterations,
        converged: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub alternations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every phase, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub final_weight_change: f64,
    pub elapsed_ms: f64,
}

/// Alternate Gauss-Newton over the poses at fixed hypothesis weights with
/// the closed-form weight update at fixed poses, until the weights settle
/// and the pose step vanishes.
pub fn selective_optimize(graph: &mut PoseGraph, params: &BackendParams) -> GraphReport {
    let start = Instant::now();
    let lambda = params.lambda_l;
    let mut trace = vec![graph.objective(lambda)];
    if graph.groups.iter().all(|g| g.hypotheses.is_empty()) {
        // the odometry chain alone is already at its minimum
        return GraphReport {
            alternations: 0,
            iterations: 0,
            converged: true,
            objective_trace: trace,
            final_weight_change: 0.0,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
    }
    let (mut iterations, mut converged, mut change, mut alternations) = (0, false, f64::INFINITY, 0);
    while alternations < params.max_alternations {
        alternations += 1;
        let mut poses = graph.poses.clone();
        let lm = {
            let mut terms: Vec<Term> = graph
                .local
                .iter()
                .map(|e| Term {
                    edge: e,
                    scale: 1.0,
                    huber: None,
                })
                .collect();
            terms.extend(graph.weighted_loops().into_iter().map(|(e, s)| Term {
                edge: e,
                scale: s,
                huber: None,
            }));
            levenberg_marquardt(&mut poses, &terms, params, params.max_iterations)
        };
        graph.poses = poses;
        iterations += lm.iterations;
        trace.push(graph.objective(lambda));
        change = graph.update_weights(lambda);
        trace.push(graph.objective(lambda));
        if change < params.tol_weight && lm.converged {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("selective optimization stopped after {alternations} alternations (weight change {change:.2e})");
    }
    GraphReport {
        alternations,
        iterations,
        converged,
        objective_trace: trace,
        final_weight_change: change,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Accept every loop with a Huber loss on its whitened residual norm.
pub fn huber_optimize(poses: &mut Vec<Pose>, local: &[Edge], loops: &[Edge], params: &BackendParams) -> GraphReport {
    let start = Instant::now();
    let mut terms: Vec<Term> = local
        .iter()
        .map(|e| Term {
            edge: e,
            scale: 1.0,
            huber: None,
        })
        .collect();
    terms.extend(loops.iter().map(|e| Term {
        edge: e,
        scale: 1.0,
        huber: Some(params.huber_delta),
    }));
    let before = total_cost(poses, &terms);
    let lm = levenberg_marquardt(poses, &terms, params, params.max_iterations * params.max_alternations);
    GraphReport {
        alternations: 1,
        iterations: lm.iterations,
        converged: lm.converged,
        objective_trace: vec![before, total_cost(poses, &terms)],
        final_weight_change: 0.0,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

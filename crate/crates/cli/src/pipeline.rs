//! Odometry plus loop backend on one dataset, and the evaluation of its
//! outputs.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use robvio_core::ba::{run_odometry, OdometryResult, SolverMode, WeightLogEntry};
use robvio_core::backend::{
    run_backend, run_huber_backend, track_sets, BackendResult, GraphReport, HypothesisLogEntry,
};
use robvio_core::eval::{ate_rmse, degradation_rate, weight_separation_stats, AlignmentKind, Metrics};
use robvio_core::io::{self, TimedPose};
use robvio_core::sim::Dataset;
use robvio_core::Pose;

use crate::config::RunConfig;

pub const TRAJECTORY: &str = "trajectory.tum";
pub const ODOMETRY_TRAJECTORY: &str = "odometry.tum";
pub const WEIGHT_LOG: &str = "weights.csv";
pub const HYPOTHESIS_LOG: &str = "hypotheses.csv";
pub const REPORT: &str = "report.json";
pub const CONFIG: &str = "config.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone)]
pub enum BackendOutcome {
    Skipped,
    Selective(BackendResult),
    Huber { poses: Vec<Pose>, report: GraphReport },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub odometry: OdometryResult,
    pub backend: BackendOutcome,
    /// Final trajectory: backend output when it ran, odometry otherwise.
    pub trajectory: Vec<TimedPose>,
}

/// Odometry in `cfg.solver.mode`, then the matching loop backend: selective
/// hypotheses for robust weights, accept-all Huber for the baseline.
pub fn run_pipeline(ds: &Dataset, cfg: &RunConfig) -> Result<RunOutput> {
    let odometry = run_odometry(ds, &cfg.solver).context("odometry")?;
    let poses: Vec<Pose> = odometry.states.iter().map(|s| s.pose).collect();
    let backend = if cfg.no_loops {
        BackendOutcome::Skipped
    } else {
        match cfg.solver.mode {
            SolverMode::RobustWeights => BackendOutcome::Selective(
                run_backend(&poses, &track_sets(&ds.observations), &ds.loop_candidates, &cfg.backend)
                    .context("loop backend")?,
            ),
            SolverMode::BaselineHuber => {
                let (poses, report) =
                    run_huber_backend(&poses, &ds.loop_candidates, &cfg.backend).context("loop backend")?;
                BackendOutcome::Huber { poses, report }
            }
        }
    };
    let last = match &backend {
        BackendOutcome::Skipped => poses,
        BackendOutcome::Selective(r) => r.poses.clone(),
        BackendOutcome::Huber { poses, .. } => poses.clone(),
    };
    let trajectory = odometry
        .trajectory
        .iter()
        .zip(last)
        .map(|(tp, pose)| TimedPose { t: tp.t, pose })
        .collect();
    Ok(RunOutput {
        odometry,
        backend,
        trajectory,
    })
}

/// Number of steps where `trace` rises by more than a relative 1e-12.
pub fn objective_increases(trace: &[f64]) -> usize {
    trace
        .windows(2)
        .filter(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRound {
    pub alternations: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: Option<f64>,
    pub final_objective: Option<f64>,
    pub objective_increases: usize,
}

impl From<&GraphReport> for BackendRound {
    fn from(r: &GraphReport) -> Self {
        BackendRound {
            alternations: r.alternations,
            iterations: r.iterations,
            converged: r.converged,
            initial_objective: r.objective_trace.first().copied(),
            final_objective: r.objective_trace.last().copied(),
            objective_increases: objective_increases(&r.objective_trace),
        }
    }
}

/// Run summary without wall-clock times, so identical runs write identical
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: SolverMode,
    pub seed: u64,
    pub keyframes: usize,
    pub loop_candidates: usize,
    pub backend: String,
    pub window_solves: usize,
    pub unconverged_solves: usize,
    pub marginalizations: usize,
    /// Window solves whose objective trace rose at some step.
    pub odometry_objective_increases: usize,
    pub backend_rounds: Vec<BackendRound>,
}

impl RunReport {
    pub fn new(ds: &Dataset, cfg: &RunConfig, out: &RunOutput) -> Self {
        let od = &out.odometry;
        let (backend, backend_rounds) = match &out.backend {
            BackendOutcome::Skipped => ("skipped", vec![]),
            BackendOutcome::Selective(r) => ("selective", r.reports.iter().map(BackendRound::from).collect()),
            BackendOutcome::Huber { report, .. } => ("huber", vec![BackendRound::from(report)]),
        };
        RunReport {
            mode: cfg.solver.mode,
            seed: ds.manifest.seed,
            keyframes: ds.frame_count(),
            loop_candidates: ds.loop_candidates.len(),
            backend: backend.into(),
            window_solves: od.reports.len(),
            unconverged_solves: od.reports.iter().filter(|r| !r.converged).count(),
            marginalizations: od.marginalizations.len(),
            odometry_objective_increases: od
                .reports
                .iter()
                .filter(|r| objective_increases(&r.objective_trace) > 0)
                .count(),
            backend_rounds,
        }
    }
}

/// Write every run artifact into `dir`.
pub fn write_run(dir: &Path, ds: &Dataset, cfg: &RunConfig, out: &RunOutput) -> Result<()> {
    io::create_dir(dir)?;
    io::write_tum(&dir.join(TRAJECTORY), &out.trajectory)?;
    io::write_tum(&dir.join(ODOMETRY_TRAJECTORY), &out.odometry.trajectory)?;
    io::write_weight_log(&dir.join(WEIGHT_LOG), &out.odometry.weight_log)?;
    let hyp = dir.join(HYPOTHESIS_LOG);
    match &out.backend {
        BackendOutcome::Selective(r) => io::write_hypothesis_log(&hyp, &r.log)?,
        // do not leave a stale log from an earlier run in the same directory
        _ if hyp.exists() => std::fs::remove_file(&hyp).with_context(|| format!("removing {}", hyp.display()))?,
        _ => {}
    }
    io::write_json(&dir.join(CONFIG), cfg)?;
    io::write_json(&dir.join(REPORT), &RunReport::new(ds, cfg, out))?;
    Ok(())
}

/// Last logged weight of every track.
pub fn final_weights(log: &[WeightLogEntry]) -> BTreeMap<usize, f64> {
    log.iter().map(|e| (e.feature_id, e.weight)).collect()
}

/// Inputs of [`evaluate`] beyond the two trajectories.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs<'a> {
    pub weights: Option<&'a [WeightLogEntry]>,
    /// Track id to "static while observed".
    pub labels: Option<&'a BTreeMap<usize, bool>>,
    pub hypotheses: Option<&'a [HypothesisLogEntry]>,
    /// Trajectory of the same mode on the dynamic-free level, for `r_d`.
    pub reference: Option<&'a [TimedPose]>,
}

pub fn evaluate(gt: &[TimedPose], est: &[TimedPose], inputs: &EvalInputs, kind: AlignmentKind) -> Result<Metrics> {
    let ate = ate_rmse(gt, est, kind).context("ATE")?;
    let r_d = match inputs.reference {
        Some(r) => {
            let reference = ate_rmse(gt, r, kind).context("reference ATE")?;
            match degradation_rate(ate, reference) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("{e}");
                    None
                }
            }
        }
        None => None,
    };
    let weight_stats = match (inputs.weights, inputs.labels) {
        (Some(w), Some(labels)) => {
            let samples: Vec<(f64, bool)> = final_weights(w)
                .into_iter()
                .filter_map(|(id, w)| labels.get(&id).map(|&l| (w, l)))
                .collect();
            Some(weight_separation_stats(&samples))
        }
        _ => None,
    };
    let hypothesis_stats = inputs.hypotheses.filter(|h| !h.is_empty()).map(|h| {
        let last = h.iter().map(|e| e.round).max().unwrap_or(0);
        let samples: Vec<(f64, bool)> = h
            .iter()
            .filter(|e| e.round == last)
            .map(|e| (e.weight, e.gt_label))
            .collect();
        weight_separation_stats(&samples)
    });
    Ok(Metrics {
        ate_rmse: Some(ate),
        r_d,
        weight_stats,
        hypothesis_stats,
        levels: Vec::new(),
    })
}

/// Labels of a dataset's tracks: true for static and temporarily static.
pub fn dataset_labels(ds: &Dataset) -> BTreeMap<usize, bool> {
    ds.track_labels
        .iter()
        .map(|l| (l.track_id, l.kind.is_static_while_observed()))
        .collect()
}

//! The four subcommands, callable in-process.

use anyhow::{Context, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use robvio_core::eval::AlignmentKind;
use robvio_core::io::{self, CsvTable};
use robvio_core::sim::{generate_dataset, LandmarkKind};

use crate::config::RunConfig;
use crate::pipeline::{self, evaluate, run_pipeline, write_run, EvalInputs};
use crate::sweep::{run_sweep, write_sweep, SweepResult};

/// Generate the configured scenario into `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_dataset(&cfg.scenario).context("generating scenario")?;
    io::write_dataset(out, &ds)?;
    log::info!(
        "wrote {} keyframes, {} tracks, {} loop candidates ({} false) to {}",
        ds.frame_count(),
        ds.manifest.track_count,
        ds.manifest.loop_candidates,
        ds.manifest.false_loop_candidates,
        out.display()
    );
    Ok(())
}

/// Run odometry and the backend on `dataset` (or on the configured
/// scenario, generated into `out/dataset`) and write the artifacts to `out`.
pub fn run(cfg: &RunConfig, dataset: Option<&Path>, out: &Path) -> Result<()> {
    let ds = match dataset {
        Some(d) => io::read_dataset(d).with_context(|| format!("reading dataset {}", d.display()))?,
        None => {
            let ds = generate_dataset(&cfg.scenario).context("generating scenario")?;
            io::write_dataset(&out.join("dataset"), &ds)?;
            ds
        }
    };
    let result = run_pipeline(&ds, cfg)?;
    write_run(out, &ds, cfg, &result)?;
    log::info!("wrote run of {} keyframes to {}", ds.frame_count(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub ground_truth: PathBuf,
    pub estimate: PathBuf,
    pub weights: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub hypotheses: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub alignment: AlignmentKind,
}

impl EvalArgs {
    /// Inputs found in a dataset directory and a run directory.
    pub fn from_dirs(dataset: &Path, run: &Path) -> EvalArgs {
        let hyp = run.join(pipeline::HYPOTHESIS_LOG);
        EvalArgs {
            ground_truth: dataset.join(io::GROUND_TRUTH),
            estimate: run.join(pipeline::TRAJECTORY),
            weights: Some(run.join(pipeline::WEIGHT_LOG)),
            labels: Some(dataset.join(io::FEATURE_LABELS)),
            hypotheses: hyp.exists().then_some(hyp),
            reference: None,
            alignment: AlignmentKind::Se3,
        }
    }
}

/// Track labels from a labels CSV, or `None` with a warning when the file
/// has no `label` column.
fn read_labels(path: &Path) -> Result<Option<BTreeMap<usize, bool>>> {
    let t = CsvTable::read(path)?;
    let (Some(id), Some(kind)) = (t.column("feature_id"), t.column("label")) else {
        log::warn!(
            "{}: no feature_id/label columns, weight statistics skipped",
            path.display()
        );
        return Ok(None);
    };
    let mut out = BTreeMap::new();
    for (line, row) in &t.rows {
        let raw: String = t.parse(*line, row, kind)?;
        let k = LandmarkKind::parse(&raw)
            .ok_or_else(|| robvio_core::IoError::parse(path, *line, format!("unknown landmark kind `{raw}`")))?;
        out.insert(t.parse(*line, row, id)?, k.is_static_while_observed());
    }
    Ok(Some(out))
}

fn read_hypotheses(path: &Path) -> Result<Option<Vec<robvio_core::backend::HypothesisLogEntry>>> {
    let t = CsvTable::read(path)?;
    if t.column("gt_label").is_none() {
        log::warn!("{}: no gt_label column, hypothesis statistics skipped", path.display());
        return Ok(None);
    }
    Ok(Some(io::read_hypothesis_log(path)?))
}

pub fn eval(args: &EvalArgs, out: &Path) -> Result<robvio_core::eval::Metrics> {
    let gt = io::read_tum(&args.ground_truth)?;
    let est = io::read_tum(&args.estimate)?;
    let weights = args.weights.as_deref().map(io::read_weight_log).transpose()?;
    let labels = match &args.labels {
        Some(p) => read_labels(p)?,
        None => None,
    };
    if weights.is_some() && labels.is_none() {
        log::warn!("weight log given without labels, weight statistics skipped");
    }
    let hypotheses = match &args.hypotheses {
        Some(p) => read_hypotheses(p)?,
        None => None,
    };
    let reference = args.reference.as_deref().map(io::read_tum).transpose()?;
    let inputs = EvalInputs {
        weights: weights.as_deref(),
        labels: labels.as_ref(),
        hypotheses: hypotheses.as_deref(),
        reference: reference.as_deref(),
    };
    let metrics = evaluate(&gt, &est, &inputs, args.alignment)?;
    io::create_dir(out)?;
    io::write_json(&out.join(pipeline::METRICS), &metrics)?;
    Ok(metrics)
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<SweepResult> {
    let result = run_sweep(cfg)?;
    write_sweep(out, &result)?;
    io::write_json(&out.join(pipeline::CONFIG), cfg)?;
    let failures: usize = result.summary.iter().map(|s| s.failures).sum();
    if failures > 0 {
        log::warn!("{failures} sweep runs diverged");
    }
    Ok(result)
}

//! Grid of dynamic levels × modes × seeds.

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use robvio_core::ba::SolverMode;
use robvio_core::eval::{ate_rmse, degradation_rate, median, LevelRow};
use robvio_core::io::{self, f, ground_truth_poses};
use robvio_core::sim::{generate_dataset, Dataset, DynamicLevel};

use crate::config::RunConfig;
use crate::pipeline::run_pipeline;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_HEADER: [&str; 5] = ["level", "mode", "seed", "ate_m", "r_d"];

/// Aggregate over seeds of one (level, mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub level: String,
    pub mode: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_ate_m: Option<f64>,
    pub median_ate_m: Option<f64>,
    pub median_r_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<LevelRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn summary_for(&self, level: DynamicLevel, mode: SolverMode) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.level == level.name() && s.mode == mode.name())
    }
}

fn dataset_for(cfg: &RunConfig, level: DynamicLevel, seed: u64) -> Result<Dataset> {
    let mut scenario = cfg.scenario.clone().with_level(level);
    scenario.seed = seed;
    generate_dataset(&scenario).with_context(|| format!("generating level {} seed {seed}", level.name()))
}

fn run_cell(cfg: &RunConfig, ds: &Dataset, mode: SolverMode) -> Result<f64> {
    let mut cell = cfg.clone();
    cell.solver.mode = mode;
    let out = run_pipeline(ds, &cell)?;
    let ate = ate_rmse(&ground_truth_poses(ds), &out.trajectory, cfg.alignment)?;
    anyhow::ensure!(ate.is_finite(), "non-finite ATE");
    Ok(ate)
}

/// Run the grid of `cfg.sweep` on up to `cfg.workers` threads. Failed runs
/// become rows without values. `r_d` divides by the same mode and seed on
/// the `none` level, when that level is part of the grid.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let s = &cfg.sweep;
    let data_keys: Vec<(DynamicLevel, u64)> = s
        .levels
        .iter()
        .flat_map(|&l| s.seeds.iter().map(move |&seed| (l, seed)))
        .collect();
    let ates: Vec<Option<f64>> = pool.install(|| {
        let datasets: Vec<Option<Dataset>> = data_keys
            .par_iter()
            .map(|&(l, seed)| dataset_for(cfg, l, seed).map_err(|e| log::warn!("{e:#}")).ok())
            .collect();
        let cells: Vec<(usize, SolverMode)> = (0..data_keys.len())
            .flat_map(|i| s.modes.iter().map(move |&m| (i, m)))
            .collect();
        cells
            .par_iter()
            .map(|&(i, mode)| {
                let ds = datasets[i].as_ref()?;
                match run_cell(cfg, ds, mode) {
                    Ok(a) => Some(a),
                    Err(e) => {
                        let (l, seed) = data_keys[i];
                        log::warn!(
                            "run level {} mode {} seed {seed} diverged: {e:#}",
                            l.name(),
                            mode.name()
                        );
                        None
                    }
                }
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(ates.len());
    let mut it = ates.into_iter();
    for &(level, seed) in &data_keys {
        for &mode in &s.modes {
            rows.push(LevelRow {
                level: level.name().into(),
                mode: mode.name().into(),
                seed,
                ate_m: it.next().flatten(),
                r_d: None,
            });
        }
    }
    let reference: Vec<Option<f64>> = rows
        .iter()
        .map(|r| {
            rows.iter()
                .find(|x| x.level == DynamicLevel::None.name() && x.mode == r.mode && x.seed == r.seed)
                .and_then(|x| x.ate_m)
        })
        .collect();
    for (row, reference) in rows.iter_mut().zip(reference) {
        row.r_d = match (row.ate_m, reference) {
            (Some(a), Some(n)) => degradation_rate(a, n).map_err(|e| log::warn!("{e}")).ok(),
            _ => None,
        };
    }
    rows.sort_by(|a, b| {
        let lv = |r: &LevelRow| DynamicLevel::parse(&r.level);
        (lv(a), &a.mode, a.seed).cmp(&(lv(b), &b.mode, b.seed))
    });

    let mut summary = Vec::new();
    for &level in &s.levels {
        for &mode in &s.modes {
            let cell: Vec<&LevelRow> = rows
                .iter()
                .filter(|r| r.level == level.name() && r.mode == mode.name())
                .collect();
            let ates: Vec<f64> = cell.iter().filter_map(|r| r.ate_m).collect();
            summary.push(SummaryRow {
                level: level.name().into(),
                mode: mode.name().into(),
                runs: cell.len(),
                failures: cell.len() - ates.len(),
                mean_ate_m: (!ates.is_empty()).then(|| ates.iter().sum::<f64>() / ates.len() as f64),
                median_ate_m: median(ates.iter().copied()),
                median_r_d: median(cell.iter().filter_map(|r| r.r_d)),
            });
        }
    }
    Ok(SweepResult { rows, summary })
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    io::create_dir(dir)?;
    io::write_csv(
        &dir.join(SWEEP_CSV),
        &SWEEP_HEADER,
        result.rows.iter().map(|r| {
            vec![
                r.level.clone(),
                r.mode.clone(),
                r.seed.to_string(),
                opt(r.ate_m),
                opt(r.r_d),
            ]
        }),
    )?;
    io::write_json(&dir.join(SWEEP_JSON), result)?;
    Ok(())
}

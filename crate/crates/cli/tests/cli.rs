use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Vector3;
use robvio::commands::{self, EvalArgs};
use robvio::pipeline::{self, dataset_labels, EvalInputs};
use robvio::{evaluate, resolve, Overrides};
use robvio_core::ba::SolverMode;
use robvio_core::eval::{ate_rmse, weight_separation_stats, AlignmentKind};
use robvio_core::geometry::Pose;
use robvio_core::io;
use robvio_core::sim::DynamicLevel;
use serde_json::json;

fn robvio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robvio"))
        .args(args)
        .env_remove(robvio::OUT_ENV)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = robvio(args);
    assert!(
        out.status.success(),
        "robvio {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn file(v: serde_json::Value) -> serde_json::Map<String, serde_json::Value> {
    v.as_object().unwrap().clone()
}

#[test]
fn layers_apply_in_order() {
    let base = resolve(None, &Overrides::default()).unwrap();
    assert_eq!(base.solver.lambda_m, 0.2);
    assert_eq!(base.preset, "static");

    let hand = Overrides {
        profile: Some("handheld_like".into()),
        ..Default::default()
    };
    let cfg = resolve(None, &hand).unwrap();
    assert_eq!(
        (cfg.solver.lambda_w, cfg.solver.lambda_m, cfg.backend.lambda_l),
        (1.0, 1.0, 1.0)
    );

    // file beats profile, flags beat file
    let f = file(json!({
        "profile": "handheld_like",
        "preset": "dynamic",
        "solver": { "lambda_m": 0.5, "mode": "baseline_huber" },
        "scenario": { "seed": 9, "landmarks": { "total": 60 } }
    }));
    let cfg = resolve(Some(f.clone()), &Overrides::default()).unwrap();
    assert_eq!(cfg.solver.lambda_m, 0.5);
    assert_eq!(cfg.solver.lambda_w, 1.0);
    assert_eq!(cfg.solver.mode, SolverMode::BaselineHuber);
    assert_eq!(cfg.scenario.seed, 9);
    assert_eq!(cfg.scenario.landmarks.total, 60);
    // untouched preset fields survive the partial override
    assert_eq!(cfg.scenario.landmarks.dynamic_fraction, 0.5);

    let flags = Overrides {
        mode: Some(SolverMode::RobustWeights),
        seed: Some(3),
        level: Some(DynamicLevel::Low),
        no_loops: true,
        workers: Some(2),
        ..Default::default()
    };
    let cfg = resolve(Some(f), &flags).unwrap();
    assert_eq!(cfg.solver.mode, SolverMode::RobustWeights);
    assert_eq!(cfg.scenario.seed, 3);
    assert_eq!(cfg.scenario.level, Some(DynamicLevel::Low));
    assert!(cfg.no_loops);
    assert_eq!(cfg.workers, 2);
}

#[test]
fn config_errors_name_the_field() {
    let e = resolve(
        Some(file(json!({ "solver": { "lamda_w": 1.0 } }))),
        &Overrides::default(),
    )
    .unwrap_err();
    assert!(e.to_string().contains("solver.lamda_w"), "{e}");
    let e = resolve(
        Some(file(json!({ "backend": { "alpha": "ten" } }))),
        &Overrides::default(),
    )
    .unwrap_err();
    assert!(e.to_string().contains("backend.alpha"), "{e}");
    let e = resolve(
        Some(file(json!({ "solver": { "lambda_w": -1.0 } }))),
        &Overrides::default(),
    )
    .unwrap_err();
    assert!(format!("{e:#}").contains("lambda_w"), "{e:#}");
    let e = robvio::config::parse_file_text("{\n  \"solver\": {\n    \"lambda_w\": ,\n  }\n}", "run.json").unwrap_err();
    assert!(format!("{e:#}").contains("line 3"), "{e:#}");
    let e = resolve(
        None,
        &Overrides {
            preset: Some("nowhere".into()),
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(e.to_string().contains("nowhere"));
}

#[test]
fn generate_presets() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, e) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("e"));
    ok(&["generate", "--preset", "static", "--seed", "2", "--out", s(&a)]);
    ok(&["generate", "--preset", "static", "--seed", "2", "--out", s(&b)]);
    let ds = io::read_dataset(&a).unwrap();
    assert_eq!(ds.manifest.dynamic_landmarks, 0);
    assert_eq!(ds.manifest.seed, 2);
    for name in std::fs::read_dir(&a).unwrap() {
        let name = name.unwrap().file_name();
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    ok(&["generate", "--preset", "e_shape", "--out", s(&e)]);
    let table = io::CsvTable::read(&e.join(io::LOOP_CANDIDATES)).unwrap();
    let col = table.column("gt_label").unwrap();
    assert!(table.rows.iter().filter(|(_, r)| r[col] == "false").count() >= 3);
}

#[test]
fn run_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let ds_dir = dir.path().join("ds");
    ok(&["generate", "--preset", "static", "--seed", "1", "--out", s(&ds_dir)]);
    let (robust, baseline, plain) = (
        dir.path().join("robust"),
        dir.path().join("baseline"),
        dir.path().join("plain"),
    );
    ok(&["run", "--dataset", s(&ds_dir), "--out", s(&robust)]);
    ok(&[
        "run",
        "--dataset",
        s(&ds_dir),
        "--mode",
        "baseline_huber",
        "--out",
        s(&baseline),
    ]);
    ok(&["run", "--dataset", s(&ds_dir), "--no-loops", "--out", s(&plain)]);

    assert!(robust.join(pipeline::HYPOTHESIS_LOG).exists());
    assert!(!baseline.join(pipeline::HYPOTHESIS_LOG).exists());
    assert!(baseline.join(pipeline::TRAJECTORY).exists());
    assert_eq!(
        std::fs::read(plain.join(pipeline::TRAJECTORY)).unwrap(),
        std::fs::read(plain.join(pipeline::ODOMETRY_TRAJECTORY)).unwrap()
    );
    let report: serde_json::Value = io::read_json(&plain.join(pipeline::REPORT)).unwrap();
    assert_eq!(report["backend"], "skipped");

    // the command agrees with direct evaluation calls
    let ds = io::read_dataset(&ds_dir).unwrap();
    let m = commands::eval(&EvalArgs::from_dirs(&ds_dir, &robust), &dir.path().join("ev")).unwrap();
    let gt = io::ground_truth_poses(&ds);
    let est = io::read_tum(&robust.join(pipeline::TRAJECTORY)).unwrap();
    assert_eq!(m.ate_rmse, Some(ate_rmse(&gt, &est, AlignmentKind::Se3).unwrap()));
    let log = io::read_weight_log(&robust.join(pipeline::WEIGHT_LOG)).unwrap();
    let labels = dataset_labels(&ds);
    let samples: Vec<(f64, bool)> = pipeline::final_weights(&log)
        .into_iter()
        .map(|(id, w)| (w, labels[&id]))
        .collect();
    assert_eq!(m.weight_stats, Some(weight_separation_stats(&samples)));
    assert!(m.hypothesis_stats.is_some());
    let written: robvio_core::eval::Metrics = io::read_json(&dir.path().join("ev").join(pipeline::METRICS)).unwrap();
    assert_eq!(written, m);

    // identical trajectories give zero error and a unit rate
    let gt_file = ds_dir.join(io::GROUND_TRUTH);
    let out = dir.path().join("self");
    ok(&[
        "eval",
        "--gt",
        s(&gt_file),
        "--est",
        s(&gt_file),
        "--reference",
        s(&est_path(&robust)),
        "--out",
        s(&out),
    ]);
    let m: robvio_core::eval::Metrics = io::read_json(&out.join(pipeline::METRICS)).unwrap();
    assert!(m.ate_rmse.unwrap() < 1e-12);
    assert!(m.weight_stats.is_none());
}

fn est_path(run: &Path) -> std::path::PathBuf {
    run.join(pipeline::TRAJECTORY)
}

#[test]
fn labels_without_kind_column_skip_weight_stats() {
    let dir = tempfile::tempdir().unwrap();
    let ds_dir = dir.path().join("ds");
    let run = dir.path().join("run");
    ok(&["generate", "--preset", "static", "--out", s(&ds_dir)]);
    ok(&["run", "--dataset", s(&ds_dir), "--no-loops", "--out", s(&run)]);
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "feature_id,landmark_id\n0,0\n1,2\n").unwrap();
    let args = EvalArgs {
        labels: Some(labels),
        ..EvalArgs::from_dirs(&ds_dir, &run)
    };
    let m = commands::eval(&args, &dir.path().join("ev")).unwrap();
    assert!(m.ate_rmse.is_some());
    assert!(m.weight_stats.is_none());
}

#[test]
fn evaluate_without_logs_reports_ate_and_rate() {
    let cfg = resolve(
        None,
        &Overrides {
            no_loops: true,
            ..Default::default()
        },
    )
    .unwrap();
    let ds = robvio_core::sim::generate_dataset(&cfg.scenario).unwrap();
    let gt = io::ground_truth_poses(&ds);
    // alternating offsets along z cannot be aligned away
    let offset = |scale: f64| -> Vec<io::TimedPose> {
        gt.iter()
            .enumerate()
            .map(|(i, p)| {
                let dz = if i % 2 == 0 { scale } else { -scale };
                let pose = Pose::new(p.pose.rotation, p.pose.translation + Vector3::new(0.0, 0.0, dz));
                io::TimedPose { t: p.t, pose }
            })
            .collect()
    };
    let (est, reference) = (offset(0.02), offset(0.01));
    let m = evaluate(
        &gt,
        &est,
        &EvalInputs {
            reference: Some(&reference),
            ..Default::default()
        },
        AlignmentKind::Se3,
    )
    .unwrap();
    assert!((m.ate_rmse.unwrap() - 0.02).abs() < 1e-4, "{m:?}");
    assert!((m.r_d.unwrap() - 2.0).abs() < 1e-3, "{m:?}");
    assert!(m.weight_stats.is_none() && m.hypothesis_stats.is_none());
}

#[test]
fn single_level_sweep_has_unit_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    ok(&[
        "sweep",
        "--preset",
        "dynamic",
        "--levels",
        "none",
        "--seeds",
        "5",
        "--modes",
        "robust_weights",
        "--no-loops",
        "--out",
        s(&out),
    ]);
    let table = io::CsvTable::read(&out.join(robvio::sweep::SWEEP_CSV)).unwrap();
    assert_eq!(table.header, ["level", "mode", "seed", "ate_m", "r_d"]);
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0].1;
    assert_eq!(
        (row[0].as_str(), row[1].as_str(), row[2].as_str(), row[4].as_str()),
        ("none", "robust_weights", "5", "1")
    );
    let json: robvio::SweepResult = io::read_json(&out.join(robvio::sweep::SWEEP_JSON)).unwrap();
    assert_eq!(json.summary[0].median_r_d, Some(1.0));
}

#[test]
fn failures_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert!(
        !robvio(&["run", "--dataset", s(&missing), "--out", s(&dir.path().join("r"))])
            .status
            .success()
    );
    assert!(
        !robvio(&["generate", "--preset", "nowhere", "--out", s(&dir.path().join("g"))])
            .status
            .success()
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"solver\": { \"lambda_w\": 0 } }").unwrap();
    let out = robvio(&["generate", "--config", s(&bad), "--out", s(&dir.path().join("g"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_w"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let status = Command::new(env!("CARGO_BIN_EXE_robvio"))
        .args(["generate", "--preset", "static"])
        .env(robvio::OUT_ENV, &root)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join(io::MANIFEST).exists());
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{ "preset": "dynamic", "no_loops": true, "solver": { "mode": "baseline_huber" } }"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    ok(&["run", "--config", s(&cfg), "--seed", "4", "--out", s(&out)]);
    let written: robvio::RunConfig = io::read_json(&out.join(pipeline::CONFIG)).unwrap();
    assert_eq!(written.preset, "dynamic");
    assert_eq!(written.scenario.seed, 4);
    assert_eq!(written.solver.mode, SolverMode::BaselineHuber);
    assert!(out.join("dataset").join(io::MANIFEST).exists());
    let report: serde_json::Value = io::read_json(&out.join(pipeline::REPORT)).unwrap();
    assert_eq!(report["mode"], "baseline_huber");
    assert_eq!(report["odometry_objective_increases"], 0);
}

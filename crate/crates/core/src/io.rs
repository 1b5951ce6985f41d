//! On-disk formats: dataset directories, TUM trajectories and small CSV
//! helpers shared by the writers of logs and reports.
//!
//! Floats are written with Rust's shortest round-trip formatting so that a
//! write/read cycle is lossless and identical inputs give identical bytes.

use nalgebra::{Matrix6, Quaternion, UnitQuaternion, Vector3};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ba::WeightLogEntry;
use crate::backend::HypothesisLogEntry;
use crate::error::IoError;
use crate::geometry::Pose;
use crate::sim::camera::FeatureObservation;
use crate::sim::dataset::{Dataset, LandmarkRecord, Manifest, TrackLabel};
use crate::sim::landmarks::LandmarkKind;
use crate::sim::loops::LoopCandidate;
use crate::state::{ImuPreintegration, KeyframeState, Matrix9};

pub const MANIFEST: &str = "manifest.json";
pub const FRAMES: &str = "frames.csv";
pub const OBSERVATIONS: &str = "observations.csv";
pub const PREINTEGRATION: &str = "preintegration.csv";
pub const GROUND_TRUTH: &str = "groundtruth.tum";
pub const GT_STATES: &str = "gt_states.csv";
pub const LOOP_CANDIDATES: &str = "loop_candidates.csv";
pub const FEATURE_LABELS: &str = "feature_labels.csv";
pub const LANDMARKS: &str = "landmarks.csv";

/// A timestamped pose, the unit of TUM files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

pub fn create_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes rows of string fields as CSV with a header.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> IoError {
    IoError::io(path, std::io::Error::other(e.to_string()))
}

/// Parsed CSV: the header and each record with its 1-based file line.
pub struct CsvTable {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<CsvTable, IoError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_io(path, e))?;
        let header = r
            .headers()
            .map_err(|e| IoError::parse(path, 1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                IoError::parse(path, line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
        }
        Ok(CsvTable {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, IoError> {
        self.column(name)
            .ok_or_else(|| IoError::parse(&self.path, 1, format!("missing column `{name}`")))
    }

    pub fn parse<T: FromStr>(&self, line: usize, row: &[String], idx: usize) -> Result<T, IoError> {
        let raw = row
            .get(idx)
            .ok_or_else(|| IoError::parse(&self.path, line, format!("missing field {}", idx + 1)))?;
        raw.parse::<T>().map_err(|_| {
            IoError::parse(
                &self.path,
                line,
                format!("cannot parse `{raw}` in column `{}`", self.header[idx]),
            )
        })
    }

    pub fn parse_named<T: FromStr>(&self, line: usize, row: &[String], name: &str) -> Result<T, IoError> {
        let idx = self.require(name)?;
        self.parse(line, row, idx)
    }

    fn vec3(&self, line: usize, row: &[String], names: [&str; 3]) -> Result<Vector3<f64>, IoError> {
        Ok(Vector3::new(
            self.parse_named(line, row, names[0])?,
            self.parse_named(line, row, names[1])?,
            self.parse_named(line, row, names[2])?,
        ))
    }

    fn quat(&self, line: usize, row: &[String], prefix: &str) -> Result<UnitQuaternion<f64>, IoError> {
        let get = |c: &str| self.parse_named::<f64>(line, row, &format!("{prefix}{c}"));
        let q = Quaternion::new(get("w")?, get("x")?, get("y")?, get("z")?);
        if !(q.norm() > 0.5) {
            return Err(IoError::parse(&self.path, line, "quaternion is not unit length"));
        }
        Ok(UnitQuaternion::from_quaternion(q))
    }
}

pub fn f(v: f64) -> String {
    format!("{v}")
}

fn push_vec3(row: &mut Vec<String>, v: &Vector3<f64>) {
    row.extend(v.iter().map(|x| f(*x)));
}

fn push_quat(row: &mut Vec<String>, q: &UnitQuaternion<f64>) {
    let q = q.quaternion();
    row.extend([q.i, q.j, q.k, q.w].iter().map(|x| f(*x)));
}

fn upper_names(prefix: &str, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            out.push(format!("{prefix}{i}{j}"));
        }
    }
    out
}

pub fn write_tum(path: &Path, traj: &[TimedPose]) -> Result<(), IoError> {
    let mut text = String::new();
    for tp in traj {
        let t = &tp.pose.translation;
        let q = tp.pose.rotation.quaternion();
        text.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            tp.t, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        ));
    }
    write_text(path, &text)
}

pub fn read_tum(path: &Path) -> Result<Vec<TimedPose>, IoError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::parse(path, i + 1, e.to_string()))?;
        if vals.len() != 8 {
            return Err(IoError::parse(
                path,
                i + 1,
                format!("expected 8 fields, got {}", vals.len()),
            ));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if !(q.norm() > 0.5) {
            return Err(IoError::parse(path, i + 1, "quaternion is not unit length"));
        }
        out.push(TimedPose {
            t: vals[0],
            pose: Pose::new(
                UnitQuaternion::from_quaternion(q),
                Vector3::new(vals[1], vals[2], vals[3]),
            ),
        });
    }
    Ok(out)
}

pub fn ground_truth_poses(ds: &Dataset) -> Vec<TimedPose> {
    ds.times
        .iter()
        .zip(&ds.ground_truth)
        .map(|(&t, s)| TimedPose { t, pose: s.pose })
        .collect()
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<(), IoError> {
    create_dir(dir)?;
    write_json(&dir.join(MANIFEST), &ds.manifest)?;

    write_csv(
        &dir.join(FRAMES),
        &["frame_id", "timestamp"],
        ds.times.iter().enumerate().map(|(i, t)| vec![i.to_string(), f(*t)]),
    )?;

    let stereo = ds.observations.iter().flatten().any(|o| o.right.is_some());
    let obs_header: &[&str] = if stereo {
        &["frame_id", "feature_id", "x", "y", "xr", "yr"]
    } else {
        &["frame_id", "feature_id", "x", "y"]
    };
    write_csv(
        &dir.join(OBSERVATIONS),
        obs_header,
        ds.observations.iter().flatten().map(|o| {
            let mut r = vec![o.frame_id.to_string(), o.feature_id.to_string(), f(o.x), f(o.y)];
            if stereo {
                match o.right {
                    Some([xr, yr]) => r.extend([f(xr), f(yr)]),
                    None => r.extend([String::new(), String::new()]),
                }
            }
            r
        }),
    )?;

    let mut pre_header: Vec<String> = [
        "from_frame",
        "to_frame",
        "dt",
        "dp_x",
        "dp_y",
        "dp_z",
        "dv_x",
        "dv_y",
        "dv_z",
        "dq_x",
        "dq_y",
        "dq_z",
        "dq_w",
        "ba_x",
        "ba_y",
        "ba_z",
        "bg_x",
        "bg_y",
        "bg_z",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    pre_header.extend(upper_names("cov_", 9));
    let pre_header: Vec<&str> = pre_header.iter().map(|s| s.as_str()).collect();
    write_csv(
        &dir.join(PREINTEGRATION),
        &pre_header,
        ds.preintegrations.iter().enumerate().map(|(i, p)| {
            let mut r = vec![i.to_string(), (i + 1).to_string(), f(p.dt)];
            push_vec3(&mut r, &p.delta_p);
            push_vec3(&mut r, &p.delta_v);
            push_quat(&mut r, &p.delta_r);
            push_vec3(&mut r, &p.accel_bias);
            push_vec3(&mut r, &p.gyro_bias);
            for a in 0..9 {
                for b in a..9 {
                    r.push(f(p.covariance[(a, b)]));
                }
            }
            r
        }),
    )?;

    write_tum(&dir.join(GROUND_TRUTH), &ground_truth_poses(ds))?;

    write_csv(
        &dir.join(GT_STATES),
        &[
            "frame_id",
            "timestamp",
            "p_x",
            "p_y",
            "p_z",
            "q_x",
            "q_y",
            "q_z",
            "q_w",
            "v_x",
            "v_y",
            "v_z",
            "ba_x",
            "ba_y",
            "ba_z",
            "bg_x",
            "bg_y",
            "bg_z",
        ],
        ds.ground_truth.iter().enumerate().map(|(i, s)| {
            let mut r = vec![i.to_string(), f(ds.times[i])];
            push_vec3(&mut r, &s.pose.translation);
            push_quat(&mut r, &s.pose.rotation);
            push_vec3(&mut r, &s.velocity);
            push_vec3(&mut r, &s.accel_bias);
            push_vec3(&mut r, &s.gyro_bias);
            r
        }),
    )?;

    let mut loop_header: Vec<String> = ["k", "m", "t_x", "t_y", "t_z", "q_x", "q_y", "q_z", "q_w"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    loop_header.extend(upper_names("cov_", 6));
    loop_header.extend(["rms", "landmark_ids", "gt_label"].iter().map(|s| s.to_string()));
    let loop_header: Vec<&str> = loop_header.iter().map(|s| s.as_str()).collect();
    write_csv(
        &dir.join(LOOP_CANDIDATES),
        &loop_header,
        ds.loop_candidates.iter().map(|c| {
            let mut r = vec![c.k.to_string(), c.m.to_string()];
            push_vec3(&mut r, &c.relative_pose.translation);
            push_quat(&mut r, &c.relative_pose.rotation);
            for a in 0..6 {
                for b in a..6 {
                    r.push(f(c.covariance[(a, b)]));
                }
            }
            r.push(f(c.rms));
            r.push(
                c.landmark_ids
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            r.push(c.gt_label.to_string());
            r
        }),
    )?;

    write_csv(
        &dir.join(FEATURE_LABELS),
        &["feature_id", "landmark_id", "label"],
        ds.track_labels.iter().map(|l| {
            vec![
                l.track_id.to_string(),
                l.landmark_id.to_string(),
                l.kind.name().to_string(),
            ]
        }),
    )?;

    write_csv(
        &dir.join(LANDMARKS),
        &["landmark_id", "label", "x", "y", "z"],
        ds.landmarks.iter().map(|l| {
            let mut r = vec![l.id.to_string(), l.kind.name().to_string()];
            push_vec3(&mut r, &l.position);
            r
        }),
    )?;
    Ok(())
}

fn parse_kind(table: &CsvTable, line: usize, raw: &str) -> Result<LandmarkKind, IoError> {
    LandmarkKind::parse(raw).ok_or_else(|| IoError::parse(&table.path, line, format!("unknown label `{raw}`")))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;

    let frames = CsvTable::read(&dir.join(FRAMES))?;
    let mut times = Vec::new();
    for (line, row) in &frames.rows {
        let id: usize = frames.parse_named(*line, row, "frame_id")?;
        if id != times.len() {
            return Err(IoError::parse(
                &frames.path,
                *line,
                format!("frame ids must be 0..n in order, got {id}"),
            ));
        }
        times.push(frames.parse_named::<f64>(*line, row, "timestamp")?);
    }
    let n = times.len();

    let obs = CsvTable::read(&dir.join(OBSERVATIONS))?;
    let has_right = obs.column("xr").is_some() && obs.column("yr").is_some();
    let mut observations = vec![Vec::new(); n];
    for (line, row) in &obs.rows {
        let frame_id: usize = obs.parse_named(*line, row, "frame_id")?;
        if frame_id >= n {
            return Err(IoError::parse(
                &obs.path,
                *line,
                format!("frame_id {frame_id} out of range"),
            ));
        }
        let right = if has_right && !row.get(obs.require("xr")?).map(|s| s.is_empty()).unwrap_or(true) {
            Some([obs.parse_named(*line, row, "xr")?, obs.parse_named(*line, row, "yr")?])
        } else {
            None
        };
        observations[frame_id].push(FeatureObservation {
            frame_id,
            feature_id: obs.parse_named(*line, row, "feature_id")?,
            x: obs.parse_named(*line, row, "x")?,
            y: obs.parse_named(*line, row, "y")?,
            right,
        });
    }

    let pre = CsvTable::read(&dir.join(PREINTEGRATION))?;
    let mut preintegrations = Vec::new();
    for (line, row) in &pre.rows {
        let from: usize = pre.parse_named(*line, row, "from_frame")?;
        if from != preintegrations.len() {
            return Err(IoError::parse(
                &pre.path,
                *line,
                "preintegration rows must cover consecutive frames in order",
            ));
        }
        let mut covariance = Matrix9::zeros();
        for a in 0..9 {
            for b in a..9 {
                let v: f64 = pre.parse_named(*line, row, &format!("cov_{a}{b}"))?;
                covariance[(a, b)] = v;
                covariance[(b, a)] = v;
            }
        }
        let p = ImuPreintegration {
            dt: pre.parse_named(*line, row, "dt")?,
            delta_p: pre.vec3(*line, row, ["dp_x", "dp_y", "dp_z"])?,
            delta_v: pre.vec3(*line, row, ["dv_x", "dv_y", "dv_z"])?,
            delta_r: pre.quat(*line, row, "dq_")?,
            accel_bias: pre.vec3(*line, row, ["ba_x", "ba_y", "ba_z"])?,
            gyro_bias: pre.vec3(*line, row, ["bg_x", "bg_y", "bg_z"])?,
            covariance,
        };
        if !p.is_valid() {
            return Err(IoError::parse(
                &pre.path,
                *line,
                "dt must be > 0 and covariance positive definite",
            ));
        }
        preintegrations.push(p);
    }
    if n > 0 && preintegrations.len() != n - 1 {
        return Err(IoError::parse(
            &pre.path,
            0,
            format!(
                "expected {} preintegration rows for {n} frames, got {}",
                n - 1,
                preintegrations.len()
            ),
        ));
    }

    let gt = CsvTable::read(&dir.join(GT_STATES))?;
    let mut ground_truth = Vec::new();
    for (line, row) in &gt.rows {
        ground_truth.push(KeyframeState {
            pose: Pose::new(gt.quat(*line, row, "q_")?, gt.vec3(*line, row, ["p_x", "p_y", "p_z"])?),
            velocity: gt.vec3(*line, row, ["v_x", "v_y", "v_z"])?,
            accel_bias: gt.vec3(*line, row, ["ba_x", "ba_y", "ba_z"])?,
            gyro_bias: gt.vec3(*line, row, ["bg_x", "bg_y", "bg_z"])?,
        });
    }
    if ground_truth.len() != n {
        return Err(IoError::parse(
            &gt.path,
            0,
            format!("expected {n} state rows, got {}", ground_truth.len()),
        ));
    }

    let lc = CsvTable::read(&dir.join(LOOP_CANDIDATES))?;
    let mut loop_candidates = Vec::new();
    for (line, row) in &lc.rows {
        let mut covariance = Matrix6::zeros();
        for a in 0..6 {
            for b in a..6 {
                let v: f64 = lc.parse_named(*line, row, &format!("cov_{a}{b}"))?;
                covariance[(a, b)] = v;
                covariance[(b, a)] = v;
            }
        }
        let ids_raw = &row[lc.require("landmark_ids")?];
        let landmark_ids = ids_raw
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::parse(&lc.path, *line, e.to_string()))?;
        let gt_label = match lc.column("gt_label") {
            Some(i) => lc.parse(*line, row, i)?,
            None => true,
        };
        let c = LoopCandidate {
            k: lc.parse_named(*line, row, "k")?,
            m: lc.parse_named(*line, row, "m")?,
            relative_pose: Pose::new(lc.quat(*line, row, "q_")?, lc.vec3(*line, row, ["t_x", "t_y", "t_z"])?),
            covariance,
            landmark_ids,
            rms: lc.parse_named(*line, row, "rms")?,
            gt_label,
        };
        if !(c.m < c.k && c.k < n) {
            return Err(IoError::parse(
                &lc.path,
                *line,
                format!("invalid keyframe pair k={} m={}", c.k, c.m),
            ));
        }
        loop_candidates.push(c);
    }

    let fl = CsvTable::read(&dir.join(FEATURE_LABELS))?;
    let mut track_labels = Vec::new();
    for (line, row) in &fl.rows {
        let raw: String = fl.parse_named(*line, row, "label")?;
        track_labels.push(TrackLabel {
            track_id: fl.parse_named(*line, row, "feature_id")?,
            landmark_id: fl.parse_named(*line, row, "landmark_id")?,
            kind: parse_kind(&fl, *line, &raw)?,
        });
    }
    track_labels.sort_by_key(|l| l.track_id);

    let lm = CsvTable::read(&dir.join(LANDMARKS))?;
    let mut landmarks = Vec::new();
    for (line, row) in &lm.rows {
        let raw: String = lm.parse_named(*line, row, "label")?;
        landmarks.push(LandmarkRecord {
            id: lm.parse_named(*line, row, "landmark_id")?,
            kind: parse_kind(&lm, *line, &raw)?,
            position: lm.vec3(*line, row, ["x", "y", "z"])?,
        });
    }

    Ok(Dataset {
        manifest,
        times,
        ground_truth,
        observations,
        preintegrations,
        loop_candidates,
        track_labels,
        landmarks,
    })
}

pub const WEIGHT_LOG_HEADER: [&str; 5] = ["keyframe_id", "feature_id", "weight", "n", "residual"];
pub const HYPOTHESIS_LOG_HEADER: [&str; 7] = [
    "round",
    "group_id",
    "hypothesis_rank",
    "member_count",
    "weight",
    "mean_residual",
    "gt_label",
];

pub fn write_weight_log(path: &Path, log: &[WeightLogEntry]) -> Result<(), IoError> {
    write_csv(
        path,
        &WEIGHT_LOG_HEADER,
        log.iter().map(|e| {
            vec![
                e.keyframe_id.to_string(),
                e.feature_id.to_string(),
                f(e.weight),
                e.n.to_string(),
                f(e.residual),
            ]
        }),
    )
}

pub fn read_weight_log(path: &Path) -> Result<Vec<WeightLogEntry>, IoError> {
    let t = CsvTable::read(path)?;
    t.rows
        .iter()
        .map(|(line, row)| {
            Ok(WeightLogEntry {
                keyframe_id: t.parse_named(*line, row, "keyframe_id")?,
                feature_id: t.parse_named(*line, row, "feature_id")?,
                weight: t.parse_named(*line, row, "weight")?,
                n: t.parse_named(*line, row, "n")?,
                residual: t.parse_named(*line, row, "residual")?,
            })
        })
        .collect()
}

pub fn write_hypothesis_log(path: &Path, log: &[HypothesisLogEntry]) -> Result<(), IoError> {
    write_csv(
        path,
        &HYPOTHESIS_LOG_HEADER,
        log.iter().map(|e| {
            vec![
                e.round.to_string(),
                e.group_id.to_string(),
                e.hypothesis_rank.to_string(),
                e.member_count.to_string(),
                f(e.weight),
                f(e.mean_residual),
                e.gt_label.to_string(),
            ]
        }),
    )
}

pub fn read_hypothesis_log(path: &Path) -> Result<Vec<HypothesisLogEntry>, IoError> {
    let t = CsvTable::read(path)?;
    t.rows
        .iter()
        .map(|(line, row)| {
            Ok(HypothesisLogEntry {
                round: t.parse_named(*line, row, "round")?,
                group_id: t.parse_named(*line, row, "group_id")?,
                hypothesis_rank: t.parse_named(*line, row, "hypothesis_rank")?,
                member_count: t.parse_named(*line, row, "member_count")?,
                weight: t.parse_named(*line, row, "weight")?,
                mean_residual: t.parse_named(*line, row, "mean_residual")?,
                gt_label: t.parse_named(*line, row, "gt_label")?,
            })
        })
        .collect()
}

use nalgebra::{Vector3, Vector6};

use robvio_core::geometry::so3_log;
use robvio_core::sim::{generate_dataset, DynamicLevel, LandmarkKind, Scenario};
use robvio_core::state::{ImuNoise, Vector9};

fn preset(name: &str, seed: u64) -> Scenario {
    Scenario {
        seed,
        ..Scenario::preset(name).unwrap()
    }
}

#[test]
fn same_seed_same_dataset() {
    for name in ["static", "dynamic", "temporal_static"] {
        let a = generate_dataset(&preset(name, 3)).unwrap();
        assert_eq!(a, generate_dataset(&preset(name, 3)).unwrap(), "{name}");
        assert_ne!(
            a.observations,
            generate_dataset(&preset(name, 4)).unwrap().observations,
            "{name}"
        );
    }
}

#[test]
fn dynamic_count_follows_level() {
    for (level, expected) in [
        (DynamicLevel::None, 0),
        (DynamicLevel::Low, 8),
        (DynamicLevel::Mid, 24),
        (DynamicLevel::High, 40),
    ] {
        let ds = generate_dataset(&preset("dynamic", 0).with_level(level)).unwrap();
        assert_eq!(ds.manifest.dynamic_landmarks, expected, "{level:?}");
        let dynamic = ds.landmarks.iter().filter(|l| l.kind == LandmarkKind::Dynamic).count();
        assert_eq!(dynamic, expected);
    }
    let ds = generate_dataset(&preset("static", 0)).unwrap();
    assert_eq!(ds.manifest.dynamic_landmarks, 0);
    assert!(ds.track_labels.iter().all(|l| l.kind == LandmarkKind::Static));
}

#[test]
fn noiseless_observations_are_exact_projections() {
    let mut s = preset("dynamic", 1);
    s.camera.noise_sigma = 0.0;
    let ds = generate_dataset(&s).unwrap();
    let b = s.camera.baseline;
    let mut checked = 0;
    for (f, frame) in ds.observations.iter().enumerate() {
        let pose = &ds.ground_truth[f].pose;
        let r = pose.rotation.to_rotation_matrix().into_inner();
        for o in frame {
            assert_eq!(o.frame_id, f);
            let label = ds.track_labels[o.feature_id];
            assert_eq!(label.track_id, o.feature_id);
            if label.kind != LandmarkKind::Static {
                continue;
            }
            let p = r.transpose() * (ds.landmarks[label.landmark_id].position - pose.translation);
            assert!(p.z > 0.0);
            assert!((o.x - p.x / p.z).abs() < 1e-12 && (o.y - p.y / p.z).abs() < 1e-12);
            let right = o.right.unwrap();
            assert!((right[0] - (p.x - b) / p.z).abs() < 1e-12 && (right[1] - p.y / p.z).abs() < 1e-12);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

/// Relative motion between two states, written out independently.
fn exact_motion(
    ds: &robvio_core::sim::Dataset,
    i: usize,
) -> (Vector3<f64>, Vector3<f64>, nalgebra::UnitQuaternion<f64>) {
    let (a, b) = (&ds.ground_truth[i], &ds.ground_truth[i + 1]);
    let dt = ds.times[i + 1] - ds.times[i];
    let g = ds.gravity();
    let rt = a.pose.rotation.to_rotation_matrix().into_inner().transpose();
    let dp = rt * (b.pose.translation - a.pose.translation - a.velocity * dt - 0.5 * g * dt * dt);
    let dv = rt * (b.velocity - a.velocity - g * dt);
    (dp, dv, a.pose.rotation.inverse() * b.pose.rotation)
}

#[test]
fn noiseless_imu_matches_true_motion() {
    let mut s = preset("static", 2);
    s.imu = ImuNoise::noiseless();
    let ds = generate_dataset(&s).unwrap();
    assert_eq!(ds.preintegrations.len(), ds.frame_count() - 1);
    for (i, pre) in ds.preintegrations.iter().enumerate() {
        let (dp, dv, dr) = exact_motion(&ds, i);
        assert!((pre.delta_p - dp).norm() < 1e-9);
        assert!((pre.delta_v - dv).norm() < 1e-9);
        assert!(pre.delta_r.angle_to(&dr) < 1e-9);
        assert_eq!(pre.dt, ds.times[i + 1] - ds.times[i]);
    }
}

#[test]
fn imu_noise_matches_declared_covariance() {
    // Mahalanobis norms of the injected noise average the dimension
    let mut total = 0.0;
    let mut n = 0;
    for seed in 0..4 {
        let ds = generate_dataset(&preset("static", seed)).unwrap();
        for (i, pre) in ds.preintegrations.iter().enumerate() {
            let (dp, dv, dr) = exact_motion(&ds, i);
            let e = Vector9::from_iterator(
                (pre.delta_p - dp)
                    .iter()
                    .chain((pre.delta_v - dv).iter())
                    .copied()
                    .chain(so3_log(&(dr.inverse() * pre.delta_r)).unwrap().iter().copied()),
            );
            total += (e.transpose() * pre.covariance.try_inverse().unwrap() * e)[0];
            n += 1;
        }
    }
    let mean = total / n as f64;
    let sd = (18.0 / n as f64).sqrt();
    assert!((mean - 9.0).abs() < 4.0 * sd, "mean {mean} over {n}");
}

#[test]
fn exact_loops_match_true_relative_pose() {
    let mut s = preset("static", 0);
    s.loop_detection.point_noise = 0.0;
    let ds = generate_dataset(&s).unwrap();
    assert!(!ds.loop_candidates.is_empty());
    for c in &ds.loop_candidates {
        assert!(c.m < c.k && c.k - c.m > s.loop_detection.min_separation);
        assert!(c.landmark_ids.len() >= s.loop_detection.min_shared);
        let truth = ds.ground_truth[c.m].pose.inverse().compose(&ds.ground_truth[c.k].pose);
        assert!((c.relative_pose.translation - truth.translation).norm() < 1e-9);
        assert!(c.relative_pose.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!(c.gt_label);
        let sd = Vector6::from_iterator(c.covariance.diagonal().iter().map(|v| v.sqrt()));
        assert_eq!(sd[0], s.loop_detection.translation_sigma);
        assert_eq!(sd[5], s.loop_detection.rotation_sigma);
    }
}

#[test]
fn relocated_objects_yield_false_loops() {
    let ds = generate_dataset(&preset("e_shape", 0)).unwrap();
    let wrong = ds.loop_candidates.iter().filter(|c| !c.gt_label).count();
    assert!(wrong >= 3, "{wrong} false candidates");
    assert_eq!(ds.manifest.false_loop_candidates, wrong);
    assert!(ds.manifest.temporarily_static_landmarks > 0);
}

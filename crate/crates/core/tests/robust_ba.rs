use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robvio_core::ba::marginalize::{marginal_information, prior_from_information};
use robvio_core::ba::weights::{
    converged_loss, loss_rho_m, optimal_weight, optimal_weight_momentum, scalar_fixed_point,
};
use robvio_core::ba::{
    run_odometry, schur_marginal, solve_window, FeatureTrack, SlidingWindow, SolverMode, SolverParams,
};
use robvio_core::sim::{generate_dataset, Dataset, LandmarkKind, Scenario};
use robvio_core::ImuNoise;

fn noiseless(name: &str) -> Dataset {
    let mut s = Scenario::preset(name).unwrap();
    s.camera.noise_sigma = 0.0;
    s.imu = ImuNoise::noiseless();
    generate_dataset(&s).unwrap()
}

fn position_rmse(ds: &Dataset, states: &[robvio_core::KeyframeState]) -> f64 {
    let sum: f64 = states
        .iter()
        .zip(&ds.ground_truth)
        .map(|(a, b)| (a.pose.translation - b.pose.translation).norm_squared())
        .sum();
    (sum / states.len() as f64).sqrt()
}

/// Window over the first `n` keyframes of a dataset at the given states.
fn window_from(ds: &Dataset, n: usize, states: &[robvio_core::KeyframeState]) -> SlidingWindow {
    let mut w = SlidingWindow::new(0, states[0], ds.gravity(), ds.scenario().camera.baseline);
    for (k, state) in states.iter().enumerate().take(n).skip(1) {
        w.frame_ids.push(k);
        w.states.push(*state);
        w.preintegrations.push(ds.preintegrations[k - 1].clone());
    }
    for k in 0..n {
        for o in &ds.observations[k] {
            w.tracks
                .entry(o.feature_id)
                .or_insert_with(|| {
                    let depth = robvio_core::ba::window::stereo_inverse_depth(o, w.baseline).unwrap_or(0.1);
                    FeatureTrack::new(*o, depth)
                })
                .observations
                .insert(k, *o);
        }
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn weights_stay_in_unit_interval(r in 0.0..1e6f64, lw in 1e-3..1e3f64, lm in 0.0..10.0f64, wp in 0.0..=1.0f64, n in 0u32..50) {
        let w = optimal_weight_momentum(r, lw, lm, wp, n);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!((0.0..=1.0).contains(&optimal_weight(r, lw)));
    }

    #[test]
    fn zero_momentum_reduces_exactly(r in 0.0..1e4f64, lw in 1e-3..1e3f64, wp in 0.0..=1.0f64, n in 0u32..50) {
        prop_assert_eq!(optimal_weight_momentum(r, lw, 0.0, wp, n), optimal_weight(r, lw));
    }

    #[test]
    fn closed_form_beats_grid(r in 0.0..100.0f64, lw in 0.01..10.0f64, lm in 0.0..5.0f64, wp in 0.0..=1.0f64, n in 0u32..20) {
        let w = optimal_weight_momentum(r, lw, lm, wp, n);
        let best = loss_rho_m(w, r, lw, lm, wp, n);
        for i in 0..=1000 {
            let g = i as f64 / 1000.0;
            prop_assert!(best <= loss_rho_m(g, r, lw, lm, wp, n) + 1e-12);
        }
    }

    #[test]
    fn weight_response_is_monotone(r in 0.0..100.0f64, dr in 0.0..10.0f64, lw in 0.01..10.0f64, lm in 0.0..5.0f64, wp in 0.0..0.9f64, dw in 0.0..0.1f64, n in 0u32..20) {
        prop_assert!(optimal_weight_momentum(r + dr, lw, lm, wp, n) <= optimal_weight_momentum(r, lw, lm, wp, n));
        prop_assert!(optimal_weight_momentum(r, lw, lm, wp + dw, n) >= optimal_weight_momentum(r, lw, lm, wp, n));
    }
}

#[test]
fn scalar_toy_converges_to_closed_form_loss() {
    for lw in [0.5, 1.0, 2.0] {
        for r in [0.1, 1.0, 10.0] {
            let fp = scalar_fixed_point(r, lw, 0.0, 100, 1e-15);
            assert!((fp.loss - converged_loss(r, lw)).abs() < 1e-9);
            assert_eq!(fp.weight, optimal_weight(r, lw));
        }
    }
}

#[test]
fn noise_free_window_is_a_fixed_point() {
    let ds = noiseless("static");
    let mut start = ds.ground_truth.clone();
    // perturb all but the gauge keyframe
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in start.iter_mut().skip(1).take(5) {
        let d: Vec<f64> = (0..15)
            .map(|i| if i < 6 { rng.random_range(-0.02..0.02) } else { 0.0 })
            .collect();
        *s = s.retract(&d);
    }
    let mut w = window_from(&ds, 6, &start);
    let report = solve_window(&mut w, &SolverParams::default()).unwrap();
    assert!(report.converged);
    for (s, t) in w.states.iter().zip(&ds.ground_truth) {
        assert!((s.pose.translation - t.pose.translation).norm() < 1e-6);
        assert!(s.pose.between(&t.pose).rotation_angle() < 1e-6);
    }
    assert!(w.tracks.values().all(|t| t.weight > 0.99));
}

#[test]
fn objective_never_increases() {
    let s = Scenario::preset("dynamic").unwrap();
    let ds = generate_dataset(&s).unwrap();
    for mode in [SolverMode::RobustWeights, SolverMode::BaselineHuber] {
        let r = run_odometry(
            &ds,
            &SolverParams {
                mode,
                ..Default::default()
            },
        )
        .unwrap();
        for rep in &r.reports {
            for pair in rep.objective_trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] * (1.0 + 1e-12),
                    "keyframe {}: {:?}",
                    rep.frame_id,
                    rep.objective_trace
                );
            }
        }
    }
}

#[test]
fn noise_free_static_odometry_is_exact() {
    let ds = noiseless("static");
    for mode in [SolverMode::RobustWeights, SolverMode::BaselineHuber] {
        let r = run_odometry(
            &ds,
            &SolverParams {
                mode,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.states.len(), ds.frame_count());
        assert!(position_rmse(&ds, &r.states) < 1e-6);
    }
}

#[test]
fn odometry_is_deterministic() {
    let ds = generate_dataset(&Scenario::preset("dynamic").unwrap()).unwrap();
    let p = SolverParams::default();
    let a = run_odometry(&ds, &p).unwrap();
    let b = run_odometry(&ds, &p).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.weight_log, b.weight_log);
}

#[test]
fn dynamic_tracks_are_down_weighted() {
    let ds = generate_dataset(&Scenario::preset("dynamic").unwrap()).unwrap();
    let r = run_odometry(&ds, &SolverParams::default()).unwrap();
    let (mut st, mut dy) = (vec![], vec![]);
    for (id, w) in r.final_weights() {
        match ds.track_kind(id).unwrap() {
            LandmarkKind::Dynamic => dy.push(w),
            _ => st.push(w),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&st) > 0.8, "static mean {}", mean(&st));
    assert!(mean(&dy) < 0.2, "dynamic mean {}", mean(&dy));
    assert!(r.weight_log.iter().all(|e| (0.0..=1.0).contains(&e.weight)));
}

#[test]
fn linear_toy_prior_matches_full_solve() {
    // random linear least squares over x = [m (4), r (6)]; factors touching m
    // are marginalized, the rest kept
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let j_marg = rand_mat(12, 10);
    let mut j_rest = rand_mat(9, 10);
    j_rest.columns_mut(0, 4).fill(0.0);
    let r_marg = DVector::from_column_slice(rand_mat(12, 1).as_slice());
    let r_rest = DVector::from_column_slice(rand_mat(9, 1).as_slice());

    let h_full = j_marg.transpose() * &j_marg + j_rest.transpose() * &j_rest;
    let g_full = j_marg.transpose() * &r_marg + j_rest.transpose() * &r_rest;
    let x_full = h_full.clone().lu().solve(&(-&g_full)).unwrap();

    let (hs, gs) = schur_marginal(&(j_marg.transpose() * &j_marg), &(j_marg.transpose() * &r_marg), 4);
    let (hp, rp) = prior_from_information(&hs, &gs);
    let jr = j_rest.columns(4, 6);
    let h = hp.transpose() * &hp + jr.transpose() * jr;
    let g = -(hp.transpose() * &rp) + jr.transpose() * &r_rest;
    let x = h.lu().solve(&(-g)).unwrap();
    for i in 0..6 {
        assert_relative_eq!(x[i], x_full[4 + i], epsilon = 1e-8);
    }
}

#[test]
fn prior_factorization_reproduces_marginal_information() {
    let ds = generate_dataset(&Scenario::preset("static").unwrap()).unwrap();
    let w = window_from(&ds, 4, &ds.ground_truth);
    let p = SolverParams::default();
    let (h, g) = marginal_information(&w, &p).unwrap();
    assert_eq!(h.nrows(), 3 * 15);
    let (hp, rp) = prior_from_information(&h, &g);
    let h_back = hp.transpose() * &hp;
    let g_back = -(hp.transpose() * &rp);
    let scale = h.norm();
    assert!((h_back - &h).norm() < 1e-8 * scale);
    assert!((g_back - &g).norm() < 1e-8 * scale.max(1.0));
}

#[test]
fn marginal_without_tracks_touches_only_the_imu_neighbor() {
    let ds = generate_dataset(&Scenario::preset("static").unwrap()).unwrap();
    let mut w = window_from(&ds, 4, &ds.ground_truth);
    w.tracks.clear();
    let (h, _) = marginal_information(&w, &SolverParams::default()).unwrap();
    assert!(h.view((0, 0), (15, 15)).norm() > 0.0);
    for (i, j) in [(1, 1), (0, 1), (1, 2), (2, 2), (0, 2)] {
        assert_eq!(h.view((15 * i, 15 * j), (15, 15)).norm(), 0.0, "block ({i}, {j})");
    }
}

#[test]
fn marginalization_below_capacity_is_a_no_op() {
    let ds = generate_dataset(&Scenario::preset("static").unwrap()).unwrap();
    let mut w = window_from(&ds, 4, &ds.ground_truth);
    let before = w.clone();
    assert!(robvio_core::ba::marginalize(&mut w, &SolverParams::default())
        .unwrap()
        .is_none());
    assert_eq!(w, before);
    let m = robvio_core::ba::marginalize(
        &mut w,
        &SolverParams {
            window_capacity: 4,
            ..Default::default()
        },
    )
    .unwrap()
    .unwrap();
    assert_eq!(m.frame_id, 0);
    assert_eq!(w.frame_ids, vec![1, 2, 3]);
    assert!(w
        .tracks
        .values()
        .all(|t| t.anchor >= 1 && !t.observations.contains_key(&0)));
    assert_eq!(w.prior.as_ref().unwrap().frame_ids, vec![1, 2, 3]);
}

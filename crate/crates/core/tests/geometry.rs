use approx::assert_relative_eq;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;

use robvio_core::geometry::{m_from_k, rigid_align, so3_exp, so3_log, world_from_k, Pose, Twist};

fn vec3(max: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-max..max).prop_map(Vector3::from)
}

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    // axis-angle with angle below pi keeps the log unique
    (vec3(1.0), 0.0..3.0f64).prop_filter_map("zero axis", |(axis, angle)| {
        (axis.norm() > 1e-3).then(|| UnitQuaternion::from_scaled_axis(axis.normalize() * angle))
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), vec3(10.0)).prop_map(|(r, t)| Pose::new(r, t))
}

/// Rodrigues' formula written out on the matrix.
fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    if theta < 1e-12 {
        return Matrix3::identity();
    }
    let k = omega / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

proptest! {
    #[test]
    fn exp_matches_rodrigues(omega in vec3(3.0)) {
        let r = so3_exp(&omega).to_rotation_matrix().into_inner();
        assert_relative_eq!(r, rodrigues(&omega), epsilon = 1e-12);
    }

    #[test]
    fn log_inverts_exp(q in rotation()) {
        let back = so3_exp(&so3_log(&q).unwrap());
        prop_assert!(back.angle_to(&q) < 1e-10);
    }

    #[test]
    fn pose_log_inverts_exp(p in pose()) {
        let xi: Twist = p.log().unwrap();
        let back = Pose::exp(&xi);
        prop_assert!(back.rotation.angle_to(&p.rotation) < 1e-10);
        prop_assert!((back.translation - p.translation).norm() < 1e-10);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        assert_relative_eq!(l.to_homogeneous(), r.to_homogeneous(), epsilon = 1e-9);
    }

    #[test]
    fn transform_and_inverse_transform_round_trip(a in pose(), p in vec3(10.0)) {
        let q = a.transform_point(&p);
        assert_relative_eq!(a.inverse_transform_point(&q), p, epsilon = 1e-9);
        assert_relative_eq!(a.inverse().transform_point(&q), p, epsilon = 1e-9);
    }

    #[test]
    fn loop_frame_chain_round_trips(wm in pose(), wk in pose()) {
        let rel = m_from_k(&wm, &wk);
        let back = world_from_k(&wm, &rel);
        assert_relative_eq!(back.to_homogeneous(), wk.to_homogeneous(), epsilon = 1e-9);
    }

    #[test]
    fn alignment_recovers_a_similarity(
        t in pose(),
        scale in 0.2..5.0f64,
        pts in prop::collection::vec(vec3(5.0), 4..30),
    ) {
        // skip nearly collinear clouds
        let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let spread = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<Matrix3<f64>>();
        let eig = spread.symmetric_eigen().eigenvalues;
        prop_assume!(eig.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-2);

        let dst: Vec<_> = pts.iter().map(|p| t.rotation * (p * scale) + t.translation).collect();
        let a = rigid_align(&pts, &dst, true).unwrap();
        prop_assert!((a.scale - scale).abs() < 1e-8 * scale);
        prop_assert!(a.pose.rotation.angle_to(&t.rotation) < 1e-8);
        prop_assert!((a.pose.translation - t.translation).norm() < 1e-7);
        prop_assert!(a.rms < 1e-8);

        let rigid: Vec<_> = pts.iter().map(|p| t.transform_point(p)).collect();
        let a = rigid_align(&pts, &rigid, false).unwrap();
        prop_assert_eq!(a.scale, 1.0);
        prop_assert!(a.pose.rotation.angle_to(&t.rotation) < 1e-8);
    }
}

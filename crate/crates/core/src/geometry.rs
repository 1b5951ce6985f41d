//! Rigid-body geometry on SE(3) / SO(3).
//!
//! Poses are stored world-from-body: `T.transform_point(p_body)` yields the
//! point in the parent frame. `a.compose(&b)` is the matrix product `A * B`,
//! i.e. it applies `b` first and then `a`. Helpers such as
//! [`world_from_k`] spell out the frame chain used by loop closing so that
//! composition order never has to be inferred from notation.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Rotation angles at or beyond `PI - LOG_DEGENERATE_MARGIN` have no unique log.
pub const LOG_DEGENERATE_MARGIN: f64 = 1e-6;
/// Above `PI - LOG_EIGEN_BRANCH_MARGIN` the log uses the eigenvector branch.
pub const LOG_EIGEN_BRANCH_MARGIN: f64 = 1e-3;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// Tangent vector of SE(3) in the (rotation, translation) split used by the
/// solvers: `exp` applies the rotation part through Rodrigues and adds the
/// translation part directly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

/// Normalize and move the quaternion to the `w >= 0` hemisphere.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut raw = *q.quaternion();
    let n = raw.norm();
    raw /= n;
    if raw.w < 0.0 {
        raw = -raw;
    }
    UnitQuaternion::new_unchecked(raw)
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Pose::new(rotation, Vector3::zeros())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self * other`: apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `self^-1 * other`, the pose of `other` expressed in this frame.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rot = UnitQuaternion::from_matrix(&r);
        Pose::new(rot, m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn exp(xi: &Twist) -> Pose {
        Pose::new(so3_exp(&xi.rotation), xi.translation)
    }

    pub fn log(&self) -> Result<Twist, GeometryError> {
        Ok(Twist {
            rotation: so3_log(&self.rotation)?,
            translation: self.translation,
        })
    }

    /// Right-perturbation retraction: `R <- R Exp(dtheta)`, `p <- p + dp`.
    pub fn retract(&self, dtheta: &Vector3<f64>, dp: &Vector3<f64>) -> Pose {
        Pose::new(self.rotation * so3_exp(dtheta), self.translation + dp)
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_vector(&self.rotation).norm()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Pose of keyframe `k` in the world from the pose of `m` and the relative
/// pose `m_from_k` (the pose of `k` expressed in `m`).
pub fn world_from_k(world_from_m: &Pose, m_from_k: &Pose) -> Pose {
    world_from_m.compose(m_from_k)
}

/// Relative pose of `k` expressed in `m`.
pub fn m_from_k(world_from_m: &Pose, world_from_k: &Pose) -> Pose {
    world_from_m.between(world_from_k)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential map.
pub fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = omega.norm();
    let half = 0.5 * theta;
    let (w, s) = if theta < SMALL_ANGLE {
        // sin(theta/2)/theta to second order
        (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    canonical(UnitQuaternion::new_unchecked(Quaternion::new(
        w,
        s * omega.x,
        s * omega.y,
        s * omega.z,
    )))
}

/// Logarithm on the open ball of radius pi.
///
/// Angles within [`LOG_DEGENERATE_MARGIN`] of pi are rejected; between that
/// and [`LOG_EIGEN_BRANCH_MARGIN`] the axis is recovered as the eigenvector
/// of `R` for eigenvalue one.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Result<Vector3<f64>, GeometryError> {
    let q = canonical(*q);
    let v = q.imag();
    let vn = v.norm();
    let theta = 2.0 * vn.atan2(q.w);
    if theta >= std::f64::consts::PI - LOG_DEGENERATE_MARGIN {
        return Err(GeometryError::DegenerateRotation { angle: theta });
    }
    if theta > std::f64::consts::PI - LOG_EIGEN_BRANCH_MARGIN {
        return Ok(log_near_pi(&q, theta));
    }
    Ok(quaternion_log(q.w, &v, vn))
}

/// Infallible rotation vector in `[0, pi]`, used inside residuals where a
/// near-pi discrepancy must still produce a finite value.
pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = canonical(*q);
    let v = q.imag();
    quaternion_log(q.w, &v, v.norm())
}

fn quaternion_log(w: f64, v: &Vector3<f64>, vn: f64) -> Vector3<f64> {
    if vn < SMALL_ANGLE {
        // theta ~ 2|v|/w; higher terms vanish at this scale
        return v * (2.0 / w);
    }
    let theta = 2.0 * vn.atan2(w);
    v * (theta / vn)
}

fn log_near_pi(q: &UnitQuaternion<f64>, theta: f64) -> Vector3<f64> {
    let r = q.to_rotation_matrix().into_inner();
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * theta.cos();
    // sym = (1 - cos theta) a a^T; its largest column is the best-conditioned
    // estimate of the axis.
    let mut best = 0;
    for j in 1..3 {
        if sym.column(j).norm() > sym.column(best).norm() {
            best = j;
        }
    }
    let mut axis: Vector3<f64> = sym.column(best).into_owned();
    axis /= axis.norm();
    let skew_part = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if axis.dot(&skew_part) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3): `Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() - k * 0.5 + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - k * ((1.0 - theta.cos()) / t2) + k * k * ((theta - theta.sin()) / (t2 * theta))
}

/// Inverse right Jacobian: `Log(Exp(phi) Exp(d)) ~ phi + Jr^-1(phi) d`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() + k * 0.5 + k * k / 12.0;
    }
    let t2 = theta * theta;
    let c = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + k * 0.5 + k * k * c
}

/// Result of [`rigid_align`]: `dst ~ scale * R * src + t`.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    pub pose: Pose,
    pub scale: f64,
    pub rms: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation * (p * self.scale) + self.pose.translation
    }
}

/// Least-squares rigid (or similarity) alignment of `src` onto `dst`
/// (Umeyama's closed form).
pub fn rigid_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    estimate_scale: bool,
) -> Result<Alignment, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::AlignmentFailure(format!(
            "point count mismatch ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeometryError::AlignmentFailure(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mu_d = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        cov += (d - mu_d) * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::AlignmentFailure("SVD did not converge".into())),
    };
    let mut sv = svd.singular_values;
    // order singular values descending alongside their vectors
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(std::cmp::Ordering::Equal));
    let u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    let v = Matrix3::from_columns(&[
        v_t.row(idx[0]).transpose(),
        v_t.row(idx[1]).transpose(),
        v_t.row(idx[2]).transpose(),
    ]);
    sv = Vector3::new(sv[idx[0]], sv[idx[1]], sv[idx[2]]);

    if var_s <= f64::EPSILON || sv[0] <= f64::EPSILON || sv[1] <= 1e-9 * sv[0] {
        return Err(GeometryError::AlignmentFailure(
            "degenerate (collinear or coincident) point configuration".into(),
        ));
    }

    let mut s = Matrix3::identity();
    if (u.determinant() * v.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v.transpose();
    let scale = if estimate_scale {
        (sv[0] * s[(0, 0)] + sv[1] * s[(1, 1)] + sv[2] * s[(2, 2)]) / var_s
    } else {
        1.0
    };
    let t = mu_d - r * mu_s * scale;
    let rot = UnitQuaternion::from_matrix(&r);
    let mut out = Alignment {
        pose: Pose::new(rot, t),
        scale,
        rms: 0.0,
    };
    let sq: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (out.apply(s) - d).norm_squared())
        .sum();
    out.rms = (sq / n).sqrt();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rz(angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let w = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        Pose::new(so3_exp(&(w * 1.5)), t)
    }

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        assert!(a.between(b).rotation_angle() < tol, "rotation differs: {a:?} vs {b:?}");
        assert!(
            (a.translation - b.translation).norm() < tol,
            "translation differs: {a:?} vs {b:?}"
        );
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_pose(&mut rng);
        assert_pose_eq(&Pose::identity().compose(&t), &t, 1e-12);
        assert_pose_eq(&t.compose(&t.inverse()), &Pose::identity(), 1e-9);
        assert_pose_eq(&t.inverse().inverse(), &t, 1e-12);
        assert_pose_eq(&Pose::identity().inverse(), &Pose::identity(), 0.0 + 1e-15);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = Pose::new(rz(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::new(rz(FRAC_PI_2), Vector3::new(0.0, 1.0, 0.0));
        let expected: Matrix4<f64> = a.to_homogeneous() * b.to_homogeneous();
        // hand-worked: Rz(180), t = Rz(90)(0,1,0) + (1,0,0) = (0,0,0)
        let manual = Matrix4::new(
            -1.0, 0.0, 0.0, 0.0, //
            0.0, -1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        assert_relative_eq!(expected, manual, epsilon = 1e-12);
        assert_relative_eq!(a.compose(&b).to_homogeneous(), expected, epsilon = 1e-12);
    }

    #[test]
    fn inverse_matches_matrix_inverse() {
        let t = Pose::new(rz(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0));
        let m = t.to_homogeneous().try_inverse().unwrap();
        assert_relative_eq!(t.inverse().to_homogeneous(), m, epsilon = 1e-12);
        // Rz(-90), t = -Rz(-90)(1,0,0) = (0,1,0)
        assert_relative_eq!(t.inverse().translation, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn quaternion_stays_canonical() {
        let q = UnitQuaternion::new_normalize(Quaternion::new(-0.5, 0.5, 0.5, 0.5));
        let p = Pose::new(q, Vector3::zeros());
        assert!(p.rotation.w >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = a.compose(&b).inverse();
            assert!(c.rotation.w >= 0.0);
            assert!((c.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_known_values() {
        assert_eq!(so3_exp(&Vector3::zeros()), UnitQuaternion::identity());
        let q = so3_exp(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!(q.angle_to(&rz(FRAC_PI_2)) < 1e-12);
        let r = q.to_rotation_matrix();
        assert_relative_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_near_pi_and_uses_eigen_branch() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        assert!(matches!(
            so3_log(&so3_exp(&(axis * PI))),
            Err(GeometryError::DegenerateRotation { .. })
        ));
        let omega = axis * (PI - 5e-4);
        let back = so3_log(&so3_exp(&omega)).unwrap();
        assert_relative_eq!(back, omega, epsilon = 1e-9);
        let omega = -axis * (PI - 1e-5);
        let back = so3_log(&so3_exp(&omega)).unwrap();
        assert_relative_eq!(back, omega, epsilon = 1e-8);
    }

    #[test]
    fn right_jacobians_are_inverse_and_match_differences() {
        let phi = Vector3::new(0.3, -0.7, 0.4);
        let jr = right_jacobian(&phi);
        let jri = right_jacobian_inv(&phi);
        assert_relative_eq!(jr * jri, Matrix3::identity(), epsilon = 1e-12);
        let h = 1e-6;
        for c in 0..3 {
            let mut d = Vector3::zeros();
            d[c] = h;
            let plus = rotation_vector(&(so3_exp(&phi) * so3_exp(&d)));
            let minus = rotation_vector(&(so3_exp(&phi) * so3_exp(&(-d))));
            let col = (plus - minus) / (2.0 * h);
            assert_relative_eq!(col, jri.column(c).into_owned(), epsilon = 1e-7);
        }
    }

    #[test]
    fn align_identity_and_exact_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<_> = (0..10)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let a = rigid_align(&src, &src, false).unwrap();
        assert_pose_eq(&a.pose, &Pose::identity(), 1e-12);
        assert_eq!(a.scale, 1.0);
        assert!(a.rms < 1e-12);

        let t = random_pose(&mut rng);
        let dst: Vec<_> = src.iter().map(|p| t.transform_point(p)).collect();
        let a = rigid_align(&src, &dst, false).unwrap();
        assert_pose_eq(&a.pose, &t, 1e-9);

        let dst_s: Vec<_> = src.iter().map(|p| t.transform_point(&(p * 2.5))).collect();
        let a = rigid_align(&src, &dst_s, true).unwrap();
        assert_pose_eq(&a.pose, &t, 1e-9);
        assert_relative_eq!(a.scale, 2.5, epsilon = 1e-9);
    }

    #[test]
    fn align_rejects_degenerate_input() {
        let two = vec![Vector3::zeros(), Vector3::x()];
        assert!(rigid_align(&two, &two, false).is_err());
        let line: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            rigid_align(&line, &line, false),
            Err(GeometryError::AlignmentFailure(_))
        ));
    }

    proptest! {
        #[test]
        fn log_exp_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, mag in 0.0f64..3.0) {
            let dir = Vector3::new(x, y, z);
            prop_assume!(dir.norm() > 1e-3);
            let omega = dir.normalize() * mag;
            let back = so3_log(&so3_exp(&omega)).unwrap();
            prop_assert!((back - omega).norm() < 1e-9);
        }

        #[test]
        fn compose_is_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.between(&r).rotation_angle() < 1e-9);
            prop_assert!((l.translation - r.translation).norm() < 1e-9);
        }

        #[test]
        fn twist_retraction_round_trip(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi = Twist {
                rotation: Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)),
                translation: Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
            };
            let back = Pose::exp(&xi).log().unwrap();
            prop_assert!((back.rotation - xi.rotation).norm() < 1e-9);
            prop_assert!((back.translation - xi.translation).norm() < 1e-9);
        }

        #[test]
        fn alignment_residual_invariant_under_common_transform(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<_> = (0..8).map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
            let t = random_pose(&mut rng);
            let dst: Vec<_> = src.iter().map(|p| t.transform_point(p) + Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))).collect();
            let base = rigid_align(&src, &dst, false).unwrap().rms;
            let g = random_pose(&mut rng);
            let h = random_pose(&mut rng);
            let src2: Vec<_> = src.iter().map(|p| g.transform_point(p)).collect();
            let dst2: Vec<_> = dst.iter().map(|p| h.transform_point(p)).collect();
            let moved = rigid_align(&src2, &dst2, false).unwrap().rms;
            prop_assert!((base - moved).abs() < 1e-9);
        }
    }
}

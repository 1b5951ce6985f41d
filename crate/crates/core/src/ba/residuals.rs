//! Residuals of the sliding-window problem with analytic Jacobians.
//!
//! Keyframe states are perturbed on the right: `R <- R Exp(dtheta)`,
//! `p <- p + dp`, and additively for velocity and biases. Jacobian columns
//! follow the state layout of [`crate::state`]: p, theta, v, ba, bg.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3};

use crate::error::SolverError;
use crate::geometry::{right_jacobian_inv, rotation_vector, skew, Pose};
use crate::state::{ImuPreintegration, KeyframeState, Vector9, BA_IDX, BG_IDX, P_IDX, R_IDX, STATE_DIM, V_IDX};

pub type Matrix2x6 = SMatrix<f64, 2, 6>;
pub type Matrix9x15 = SMatrix<f64, 9, 15>;
pub type Matrix6x15 = SMatrix<f64, 6, 15>;

/// Jacobians of a whitened reprojection residual. Pose blocks are over
/// (dp, dtheta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionJacobians {
    pub target: Matrix2x6,
    pub anchor: Matrix2x6,
    pub inverse_depth: Vector2<f64>,
}

/// Reprojection of a landmark parameterized by inverse depth along `ray`
/// (normalized coordinates `(x, y, 1)` in the anchor frame) into the frame
/// `target`, shifted by `offset` metres along the camera x axis (the
/// stereo baseline for the right camera, 0 for the left). Returns `None`
/// when the point lies closer than `min_depth` in front of the camera.
#[allow(clippy::too_many_arguments)]
pub fn reprojection_residual(
    target: &Pose,
    anchor: &Pose,
    ray: &Vector3<f64>,
    inverse_depth: f64,
    observed: [f64; 2],
    offset: f64,
    sigma: f64,
    min_depth: f64,
) -> Option<(Vector2<f64>, ReprojectionJacobians)> {
    let f = ray / inverse_depth;
    let p_w = anchor.rotation * f + anchor.translation;
    let ri_t = target.rotation.inverse().to_rotation_matrix().into_inner();
    let p_i = ri_t * (p_w - target.translation);
    let p_c = p_i - Vector3::new(offset, 0.0, 0.0);
    if !(p_c.z > min_depth) {
        return None;
    }
    let z_inv = 1.0 / p_c.z;
    let res = Vector2::new(p_c.x * z_inv - observed[0], p_c.y * z_inv - observed[1]) / sigma;
    let d_proj =
        SMatrix::<f64, 2, 3>::new(z_inv, 0.0, -p_c.x * z_inv * z_inv, 0.0, z_inv, -p_c.y * z_inv * z_inv) / sigma;

    let ra = anchor.rotation.to_rotation_matrix().into_inner();
    let mut j_target = Matrix2x6::zeros();
    j_target.fixed_columns_mut::<3>(0).copy_from(&(d_proj * (-ri_t)));
    j_target.fixed_columns_mut::<3>(3).copy_from(&(d_proj * skew(&p_i)));
    let mut j_anchor = Matrix2x6::zeros();
    j_anchor.fixed_columns_mut::<3>(0).copy_from(&(d_proj * ri_t));
    j_anchor
        .fixed_columns_mut::<3>(3)
        .copy_from(&(d_proj * (-ri_t * ra * skew(&f))));
    let d_depth = d_proj * (ri_t * ra * (-ray / (inverse_depth * inverse_depth)));
    Some((
        res,
        ReprojectionJacobians {
            target: j_target,
            anchor: j_anchor,
            inverse_depth: d_depth,
        },
    ))
}

/// Right-camera residual in the anchor frame itself. It depends only on the
/// inverse depth: the predicted right coordinates are `(x - b lambda, y)`.
pub fn anchor_stereo_residual(
    ray: &Vector3<f64>,
    inverse_depth: f64,
    observed_right: [f64; 2],
    baseline: f64,
    sigma: f64,
) -> (Vector2<f64>, Vector2<f64>) {
    let res = Vector2::new(
        ray.x - baseline * inverse_depth - observed_right[0],
        ray.y - observed_right[1],
    ) / sigma;
    (res, Vector2::new(-baseline / sigma, 0.0))
}

/// Whitened IMU residual over (dp, dv, dtheta) and its Jacobians with
/// respect to both keyframe states. `sqrt_info` is the inverse Cholesky
/// factor of the preintegration covariance.
pub fn imu_residual(
    s0: &KeyframeState,
    s1: &KeyframeState,
    preint: &ImuPreintegration,
    sqrt_info: &SMatrix<f64, 9, 9>,
    gravity: &Vector3<f64>,
) -> (Vector9, Matrix9x15, Matrix9x15) {
    let dt = preint.dt;
    let r0_t = s0.pose.rotation.inverse().to_rotation_matrix().into_inner();
    let a = s1.pose.translation - s0.pose.translation - s0.velocity * dt - gravity * (0.5 * dt * dt);
    let b = s1.velocity - s0.velocity - gravity * dt;
    let r_p = r0_t * a - preint.delta_p;
    let r_v = r0_t * b - preint.delta_v;
    let err = preint.delta_r.inverse() * s0.pose.rotation.inverse() * s1.pose.rotation;
    let r_th = rotation_vector(&err);
    let jr_inv = right_jacobian_inv(&r_th);
    let r1_t_r0 = (s1.pose.rotation.inverse() * s0.pose.rotation)
        .to_rotation_matrix()
        .into_inner();

    let mut res = Vector9::zeros();
    res.fixed_rows_mut::<3>(0).copy_from(&r_p);
    res.fixed_rows_mut::<3>(3).copy_from(&r_v);
    res.fixed_rows_mut::<3>(6).copy_from(&r_th);

    let mut j0 = Matrix9x15::zeros();
    let mut j1 = Matrix9x15::zeros();
    j0.fixed_view_mut::<3, 3>(0, P_IDX).copy_from(&(-r0_t));
    j0.fixed_view_mut::<3, 3>(0, R_IDX).copy_from(&skew(&(r0_t * a)));
    j0.fixed_view_mut::<3, 3>(0, V_IDX).copy_from(&(-r0_t * dt));
    j1.fixed_view_mut::<3, 3>(0, P_IDX).copy_from(&r0_t);

    j0.fixed_view_mut::<3, 3>(3, R_IDX).copy_from(&skew(&(r0_t * b)));
    j0.fixed_view_mut::<3, 3>(3, V_IDX).copy_from(&(-r0_t));
    j1.fixed_view_mut::<3, 3>(3, V_IDX).copy_from(&r0_t);

    j0.fixed_view_mut::<3, 3>(6, R_IDX).copy_from(&(-jr_inv * r1_t_r0));
    j1.fixed_view_mut::<3, 3>(6, R_IDX).copy_from(&jr_inv);

    (sqrt_info * res, sqrt_info * j0, sqrt_info * j1)
}

/// Random-walk factor between consecutive bias estimates.
pub fn bias_walk_residual(
    s0: &KeyframeState,
    s1: &KeyframeState,
    accel_sigma: f64,
    gyro_sigma: f64,
) -> (SMatrix<f64, 6, 1>, Matrix6x15, Matrix6x15) {
    let mut res = SMatrix::<f64, 6, 1>::zeros();
    res.fixed_rows_mut::<3>(0)
        .copy_from(&((s1.accel_bias - s0.accel_bias) / accel_sigma));
    res.fixed_rows_mut::<3>(3)
        .copy_from(&((s1.gyro_bias - s0.gyro_bias) / gyro_sigma));
    let mut j0 = Matrix6x15::zeros();
    let mut j1 = Matrix6x15::zeros();
    j0.fixed_view_mut::<3, 3>(0, BA_IDX)
        .copy_from(&(Matrix3::identity() * (-1.0 / accel_sigma)));
    j1.fixed_view_mut::<3, 3>(0, BA_IDX)
        .copy_from(&(Matrix3::identity() / accel_sigma));
    j0.fixed_view_mut::<3, 3>(3, BG_IDX)
        .copy_from(&(Matrix3::identity() * (-1.0 / gyro_sigma)));
    j1.fixed_view_mut::<3, 3>(3, BG_IDX)
        .copy_from(&(Matrix3::identity() / gyro_sigma));
    (res, j0, j1)
}

/// Linear prior `r_p - H_p dx` over a list of keyframe states, where `dx`
/// stacks each state's tangent-space deviation from the linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalizationPrior {
    /// Global ids of the constrained keyframes, in column-block order.
    pub frame_ids: Vec<usize>,
    pub linearization: Vec<KeyframeState>,
    pub h: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl MarginalizationPrior {
    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| v.is_finite()) && self.r.iter().all(|v| v.is_finite())
    }
}

/// Prior residual and its Jacobian with respect to right perturbations of
/// `states` (which must match `prior.frame_ids` in order and count).
pub fn prior_residual(
    states: &[KeyframeState],
    prior: &MarginalizationPrior,
) -> Result<(DVector<f64>, DMatrix<f64>), SolverError> {
    let n = prior.frame_ids.len();
    if states.len() != n || prior.linearization.len() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "prior constrains {n} keyframes, got {} states",
            states.len()
        )));
    }
    if prior.h.ncols() != n * STATE_DIM || prior.h.nrows() != prior.r.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "prior matrix is {}x{}, expected {}x{}",
            prior.h.nrows(),
            prior.h.ncols(),
            prior.r.len(),
            n * STATE_DIM
        )));
    }
    let mut dx = DVector::zeros(n * STATE_DIM);
    let mut dx_jac = DMatrix::identity(n * STATE_DIM, n * STATE_DIM);
    for (b, (s, lin)) in states.iter().zip(&prior.linearization).enumerate() {
        let d = s.local_difference(lin);
        dx.rows_mut(b * STATE_DIM, STATE_DIM).copy_from(&d);
        let phi = Vector3::new(d[R_IDX], d[R_IDX + 1], d[R_IDX + 2]);
        let o = b * STATE_DIM + R_IDX;
        dx_jac.view_mut((o, o), (3, 3)).copy_from(&right_jacobian_inv(&phi));
    }
    let r = &prior.r - &prior.h * dx;
    let j = -(&prior.h * dx_jac);
    Ok((r, j))
}

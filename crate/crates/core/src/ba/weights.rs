//! Closed-form per-feature weights and the losses they minimize.
//!
//! A feature with summed squared residual `r` and weight `w` costs
//! `w^2 r + lambda_w (1 - w)^2`, optionally plus a momentum term
//! `lambda_m n^2 (w_prev - w)^2` tying `w` to the weight it converged to in
//! the previous window solve.

/// Minimizer of `w^2 r + lambda_w (1 - w)^2`.
pub fn optimal_weight(r: f64, lambda_w: f64) -> f64 {
    lambda_w / (r + lambda_w)
}

/// Minimizer over `w in [0, 1]` of [`loss_rho_m`]. The loss is a convex
/// quadratic in `w`, so the stationary point clamped to the interval is
/// the constrained minimizer.
pub fn optimal_weight_momentum(r: f64, lambda_w: f64, lambda_m: f64, w_prev: f64, n: u32) -> f64 {
    let m = lambda_m * (n as f64).powi(2);
    if m == 0.0 {
        return optimal_weight(r, lambda_w);
    }
    ((lambda_w + m * w_prev) / (r + lambda_w + m)).clamp(0.0, 1.0)
}

/// `w^2 r + lambda_w (1 - w)^2 + lambda_m n^2 (w_prev - w)^2`.
pub fn loss_rho_m(w: f64, r: f64, lambda_w: f64, lambda_m: f64, w_prev: f64, n: u32) -> f64 {
    let phi = 1.0 - w;
    let psi = (n as f64) * (w_prev - w);
    w * w * r + lambda_w * phi * phi + lambda_m * psi * psi
}

/// Loss obtained by substituting [`optimal_weight`] back into the weighted
/// cost: `lambda_w r / (lambda_w + r)`.
pub fn converged_loss(r: f64, lambda_w: f64) -> f64 {
    lambda_w * r / (lambda_w + r)
}

/// Huber loss of a squared norm `s` with threshold `delta` on the norm.
pub fn huber(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        s
    } else {
        2.0 * delta * s.sqrt() - delta * delta
    }
}

/// Derivative of [`huber`] with respect to `s`; its square root scales a
/// residual block for iteratively reweighted least squares.
pub fn huber_weight(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        1.0
    } else {
        delta / s.sqrt()
    }
}

/// Outcome of [`scalar_fixed_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarFixedPoint {
    pub weight: f64,
    /// `w^2 r + lambda_w (1 - w)^2` at the final weight.
    pub loss: f64,
    pub rounds: usize,
}

/// Alternating minimization on a single feature whose residual `r` does not
/// depend on the weight: each round is one window solve, updating the weight
/// in closed form and then carrying it over as the momentum target with the
/// solve counter incremented. Stops when the weight changes by less than
/// `tol`.
pub fn scalar_fixed_point(r: f64, lambda_w: f64, lambda_m: f64, max_rounds: usize, tol: f64) -> ScalarFixedPoint {
    let (mut w, mut w_prev, mut n) = (1.0, 1.0, 0u32);
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let next = optimal_weight_momentum(r, lambda_w, lambda_m, w_prev, n);
        let change = (next - w).abs();
        w = next;
        w_prev = next;
        n += 1;
        if change < tol {
            break;
        }
    }
    ScalarFixedPoint {
        weight: w,
        loss: loss_rho_m(w, r, lambda_w, 0.0, w, 0),
        rounds,
    }
}

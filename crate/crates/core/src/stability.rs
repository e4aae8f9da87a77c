//! Sufficient step-size conditions for a non-negative, sup-norm bounded
//! solution.
//!
//! The spatial bound keeps every off-diagonal entry of `A` non-negative, so
//! `A` is Metzler with zero infinity log-norm. The time-step bound keeps the
//! Jacobian of one step non-negative, which makes the update monotone.

use serde::Serialize;

use crate::grid::Grid;
use crate::operator::{DiscreteOperator, StencilCoefficients};

/// Fraction of the strict time-step bound used by [`auto_time_step`].
pub const AUTO_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub h_max: f64,
    pub k_max: f64,
    pub h_used: f64,
    pub k_used: f64,
    pub h_satisfied: bool,
    pub k_satisfied: bool,
    pub satisfied: bool,
    pub mu_inf: f64,
    pub metzler: bool,
}

/// Largest base step keeping `a_{-i}` and `a_{+i}` non-negative:
/// `min_i beta_i d_i / |c_i|` over axes with non-zero drift, `+inf` if none.
pub fn h_condition(d_axis: &[f64], drift: &[f64], beta: &[f64]) -> f64 {
    d_axis
        .iter()
        .zip(drift)
        .zip(beta)
        .filter(|((_, c), _)| **c != 0.0)
        .map(|((d, c), b)| b * d / c.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Strict upper bound on the time step, `h^2 / (d + (r + lambda) h^2)`.
pub fn k_condition(h: f64, d: f64, rate: f64, lambda: f64) -> f64 {
    let h2 = h * h;
    h2 / (d + (rate + lambda) * h2)
}

/// Diagonal coefficient of `e^{a0 k} - k lambda phi(a0, k)`; the step is
/// monotone when this is positive.
pub fn penalty_diagonal(a0: f64, lambda: f64, k: f64) -> f64 {
    let e = (a0 * k).exp();
    e - k * lambda / 6.0 * (1.0 + 4.0 * (a0 * k / 2.0).exp() + e)
}

pub fn report(
    coeffs: &StencilCoefficients,
    drift: &[f64],
    grid: &Grid,
    op: &DiscreteOperator,
    lambda: f64,
    k: f64,
) -> StabilityReport {
    let h_max = h_condition(&coeffs.d_axis, drift, grid.beta());
    let k_max = k_condition(grid.h(), coeffs.d, coeffs.rate, lambda);
    let h_used = grid.h();
    let h_satisfied = h_used <= h_max;
    let k_satisfied = k < k_max;
    StabilityReport {
        h_max,
        k_max,
        h_used,
        k_used: k,
        h_satisfied,
        k_satisfied,
        satisfied: h_satisfied && k_satisfied,
        mu_inf: op.log_norm_inf(),
        metzler: op.is_metzler(),
    }
}

/// Time step at [`AUTO_SAFETY`] of the bound, shortened so an integral
/// number of steps spans `maturity`. Returns `(k, steps)`.
pub fn auto_time_step(k_max: f64, maturity: f64) -> (f64, usize) {
    let target = AUTO_SAFETY * k_max;
    let steps = ((maturity / target).ceil() as usize).max(1);
    (maturity / steps as f64, steps)
}

/// Steps needed to reach `maturity` with a requested `k`, and the adjusted
/// `k = maturity / steps`.
pub fn fixed_time_step(k: f64, maturity: f64) -> (f64, usize) {
    let steps = ((maturity / k - 1e-9).ceil() as usize).max(1);
    (maturity / steps as f64, steps)
}

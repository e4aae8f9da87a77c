//! Action of `e^{Ak}` and of the Simpson weight
//! `phi(A, k) = (I + 4 e^{Ak/2} + e^{Ak}) / 6` on vectors.
//!
//! Two backends share one contract:
//!
//! * [`BackendMode::DenseCached`] forms `e^{Ak/2}` once (Padé scaling and
//!   squaring via `nalgebra`) and squares it for `e^{Ak}`. Memory is
//!   quadratic in the node count, so it is only picked automatically for
//!   small grids.
//! * [`BackendMode::ActionOnly`] never forms a matrix. It evaluates a
//!   truncated Taylor series of the shifted operator `B = A - a0 I`, split
//!   into substeps with `||B dt||_inf <= THETA`. For a Metzler `A` the
//!   shifted operator is non-negative, so every Taylor term of a
//!   non-negative vector is non-negative and the result keeps its sign.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::DiscreteOperator;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Maximum operator applications per Taylor substep.
pub const DEFAULT_BUDGET: usize = 500;
/// Node count up to which [`ExponentialBackend::auto`] picks the dense cache.
pub const DENSE_AUTO_LIMIT: usize = 2500;
/// Norm bound of one Taylor substep.
const THETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    DenseCached,
    ActionOnly,
}

#[derive(Debug, Clone)]
enum Cache {
    Dense {
        half: DMatrix<f64>,
        full: DMatrix<f64>,
    },
    Action {
        tolerance: f64,
        budget: usize,
    },
}

/// Exponential propagators for one operator and one time step.
#[derive(Debug, Clone)]
pub struct ExponentialBackend {
    op: DiscreteOperator,
    k: f64,
    cache: Cache,
}

impl ExponentialBackend {
    pub fn dense(op: DiscreteOperator, k: f64) -> Self {
        let a = op.to_dense() * (0.5 * k);
        let mut half = a.exp();
        pin_zero_rows(&op, &mut half);
        let mut full = &half * &half;
        pin_zero_rows(&op, &mut full);
        Self {
            op,
            k,
            cache: Cache::Dense { half, full },
        }
    }

    pub fn action(op: DiscreteOperator, k: f64) -> Self {
        Self::action_with(op, k, DEFAULT_TOLERANCE, DEFAULT_BUDGET)
    }

    pub fn action_with(op: DiscreteOperator, k: f64, tolerance: f64, budget: usize) -> Self {
        Self {
            op,
            k,
            cache: Cache::Action { tolerance, budget },
        }
    }

    pub fn new(op: DiscreteOperator, k: f64, mode: BackendMode) -> Self {
        match mode {
            BackendMode::DenseCached => Self::dense(op, k),
            BackendMode::ActionOnly => Self::action(op, k),
        }
    }

    /// Dense cache for grids up to [`DENSE_AUTO_LIMIT`] nodes, action otherwise.
    pub fn auto(op: DiscreteOperator, k: f64) -> Self {
        let mode = if op.size() <= DENSE_AUTO_LIMIT {
            BackendMode::DenseCached
        } else {
            BackendMode::ActionOnly
        };
        Self::new(op, k, mode)
    }

    pub fn mode(&self) -> BackendMode {
        match self.cache {
            Cache::Dense { .. } => BackendMode::DenseCached,
            Cache::Action { .. } => BackendMode::ActionOnly,
        }
    }

    pub fn time_step(&self) -> f64 {
        self.k
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    /// `e^{Ak} v`.
    pub fn exp_full(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.cache {
            Cache::Dense { full, .. } => Ok(dense_mul(full, v)),
            Cache::Action { tolerance, budget } => {
                exp_action(&self.op, self.k, v, *tolerance, *budget)
            }
        }
    }

    /// `e^{Ak/2} v`.
    pub fn exp_half(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.cache {
            Cache::Dense { half, .. } => Ok(dense_mul(half, v)),
            Cache::Action { tolerance, budget } => {
                exp_action(&self.op, 0.5 * self.k, v, *tolerance, *budget)
            }
        }
    }

    /// `phi(A, k) v`.
    pub fn phi(&self, v: &[f64]) -> Result<Vec<f64>> {
        let half = self.exp_half(v)?;
        let full = match &self.cache {
            Cache::Dense { full, .. } => dense_mul(full, v),
            Cache::Action { .. } => self.exp_half(&half)?,
        };
        Ok(simpson_combine(v, &half, &full))
    }
}

fn simpson_combine(v: &[f64], half: &[f64], full: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(half)
        .zip(full)
        .map(|((a, b), c)| (a + 4.0 * b + c) / 6.0)
        .collect()
}

/// Rows of `A` that are zero give unit rows in any function `e^{tA}`.
fn pin_zero_rows(op: &DiscreteOperator, m: &mut DMatrix<f64>) {
    for i in (0..op.size()).filter(|&i| !op.is_interior(i)) {
        m.row_mut(i).fill(0.0);
        m[(i, i)] = 1.0;
    }
}

fn dense_mul(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let out = m * DVector::from_column_slice(v);
    out.iter().copied().collect()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `e^{tA} v` by substepped Taylor series of `A - a0 I`, stopping each
/// substep once a rigorous bound on the remaining tail falls below
/// `tolerance / substeps` relative to the partial sum.
pub fn exp_action(
    op: &DiscreteOperator,
    t: f64,
    v: &[f64],
    tolerance: f64,
    budget: usize,
) -> Result<Vec<f64>> {
    let n = op.size();
    assert_eq!(v.len(), n);
    if t == 0.0 || !op.has_interior() {
        return Ok(v.to_vec());
    }
    let shift = op.min_diagonal();
    let norm = op.shifted_norm_inf(shift) * t.abs();
    let substeps = ((norm / THETA).ceil() as usize).max(1);
    let dt = t / substeps as f64;
    let sub_norm = norm / substeps as f64;
    let sub_tol = tolerance / substeps as f64;
    let scale = (shift * dt).exp();

    let mut f = v.to_vec();
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..substeps {
        term.copy_from_slice(&f);
        let mut j = 0usize;
        loop {
            if j >= budget {
                return Err(Error::ConvergenceFailure { budget });
            }
            j += 1;
            op.apply_shifted(shift, &term, &mut next);
            let c = dt / j as f64;
            for ((t_i, f_i), n_i) in term.iter_mut().zip(f.iter_mut()).zip(&next) {
                *t_i = c * n_i;
                *f_i += *t_i;
            }
            let tn = sup_norm(&term);
            if tn == 0.0 {
                break;
            }
            let ratio = sub_norm / (j + 1) as f64;
            if ratio < 1.0 && tn * ratio / (1.0 - ratio) <= sub_tol * sup_norm(&f) {
                break;
            }
        }
        f.iter_mut().for_each(|x| *x *= scale);
    }
    for i in (0..n).filter(|&i| !op.is_interior(i)) {
        f[i] = v[i];
    }
    Ok(f)
}

/// `phi(A, k) v` with the action backend.
pub fn phi_action(
    op: &DiscreteOperator,
    k: f64,
    v: &[f64],
    tolerance: f64,
    budget: usize,
) -> Result<Vec<f64>> {
    let half = exp_action(op, 0.5 * k, v, tolerance, budget)?;
    let full = exp_action(op, 0.5 * k, &half, tolerance, budget)?;
    Ok(simpson_combine(v, &half, &full))
}

/// Scalar Simpson weight `(1 + 4 e^{ak/2} + e^{ak}) / 6`.
pub fn phi_scalar(a: f64, k: f64) -> f64 {
    (1.0 + 4.0 * (0.5 * a * k).exp() + (a * k).exp()) / 6.0
}

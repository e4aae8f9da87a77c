//! The semi-discrete operator `A`.
//!
//! Interior rows carry the same `2M+1` point stencil; boundary rows are zero
//! so boundary values stay pinned at their initial data. Since every interior
//! row is identical, `A` is stored as its coefficients plus an interior mask
//! and applied matrix-free.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::Grid;
use crate::transform::TransformedProblem;

/// Below this many nodes the product runs on one thread.
const PARALLEL_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StencilCoefficients {
    pub a0: f64,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    /// `d_i = D_ii / beta_i^2`.
    pub d_axis: Vec<f64>,
    /// `sum_i d_i`.
    pub d: f64,
    pub h: f64,
    pub rate: f64,
}

impl StencilCoefficients {
    /// Sum of one interior row; equals `-rate` up to rounding.
    pub fn row_sum(&self) -> f64 {
        self.a0
            + self
                .a_plus
                .iter()
                .zip(&self.a_minus)
                .map(|(p, m)| p + m)
                .sum::<f64>()
    }
}

pub fn stencil(tp: &TransformedProblem, grid: &Grid, rate: f64) -> StencilCoefficients {
    let h = grid.h();
    let h2 = h * h;
    let d_axis: Vec<f64> = tp
        .d_diag
        .iter()
        .zip(grid.beta())
        .map(|(dii, b)| dii / (b * b))
        .collect();
    let d: f64 = d_axis.iter().sum();
    let a0 = -(d + rate * h2) / h2;
    let (a_plus, a_minus) = d_axis
        .iter()
        .zip(&tp.drift)
        .zip(grid.beta())
        .map(|((di, ci), b)| {
            let adv = h / b * ci;
            ((di + adv) / (2.0 * h2), (di - adv) / (2.0 * h2))
        })
        .unzip();
    StencilCoefficients {
        a0,
        a_plus,
        a_minus,
        d_axis,
        d,
        h,
        rate,
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    coeffs: StencilCoefficients,
    strides: Vec<usize>,
    interior: Vec<bool>,
}

impl DiscreteOperator {
    pub fn assemble(coeffs: StencilCoefficients, grid: &Grid) -> Self {
        let interior = grid.boundary_mask().into_iter().map(|b| !b).collect();
        Self {
            coeffs,
            strides: grid.strides().to_vec(),
            interior,
        }
    }

    pub fn size(&self) -> usize {
        self.interior.len()
    }

    pub fn coefficients(&self) -> &StencilCoefficients {
        &self.coeffs
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.interior[i]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn has_interior(&self) -> bool {
        self.interior.iter().any(|&b| b)
    }

    /// Structural entries `(column, value)` of row `i`; empty for boundary rows.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        if !self.interior[i] {
            return Vec::new();
        }
        let c = &self.coeffs;
        let mut entries = Vec::with_capacity(2 * self.strides.len() + 1);
        for (m, &s) in self.strides.iter().enumerate().rev() {
            entries.push((i - s, c.a_minus[m]));
        }
        entries.push((i, c.a0));
        for (m, &s) in self.strides.iter().enumerate() {
            entries.push((i + s, c.a_plus[m]));
        }
        entries
    }

    #[inline]
    fn row_dot(&self, i: usize, v: &[f64], shift: f64) -> f64 {
        if !self.interior[i] {
            return -shift * v[i];
        }
        let c = &self.coeffs;
        let mut acc = (c.a0 - shift) * v[i];
        for (m, &s) in self.strides.iter().enumerate() {
            acc += c.a_plus[m] * v[i + s] + c.a_minus[m] * v[i - s];
        }
        acc
    }

    /// `out = A v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.apply_shifted(0.0, v, out);
    }

    /// `out = (A - shift I) v`.
    pub fn apply_shifted(&self, shift: f64, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.size());
        assert_eq!(out.len(), self.size());
        if self.size() >= PARALLEL_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = self.row_dot(i, v, shift));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.row_dot(i, v, shift);
            }
        }
    }

    /// Smallest diagonal entry: `a0` if any row is interior, else 0.
    pub fn min_diagonal(&self) -> f64 {
        if self.has_interior() {
            self.coeffs.a0.min(0.0)
        } else {
            0.0
        }
    }

    /// `||A - shift I||_inf`.
    pub fn shifted_norm_inf(&self, shift: f64) -> f64 {
        let c = &self.coeffs;
        let off: f64 = c.a_plus.iter().chain(&c.a_minus).map(|a| a.abs()).sum();
        let interior = (c.a0 - shift).abs() + off;
        let boundary = shift.abs();
        let has_boundary = self.interior.iter().any(|&b| !b);
        match (self.has_interior(), has_boundary) {
            (true, true) => interior.max(boundary),
            (true, false) => interior,
            (false, _) => boundary,
        }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.size())
            .map(|i| self.row(i).iter().map(|(_, a)| a.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `max_i (a_ii + sum_{j != i} |a_ij|)`.
    pub fn log_norm_inf(&self) -> f64 {
        (0..self.size())
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|&(j, a)| if j == i { a } else { a.abs() })
                    .fold(0.0, |s, x| s + x)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when no off-diagonal entry is negative.
    pub fn is_metzler(&self) -> bool {
        (0..self.size()).all(|i| self.row(i).iter().all(|&(j, a)| j == i || a >= 0.0))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Writes every structural entry as a `row col value` line.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# rows={} cols={}", self.size(), self.size())?;
        for i in 0..self.size() {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

pub fn dense_norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn dense_log_norm_inf(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| {
            (0..a.ncols())
                .map(|j| if i == j { a[(i, j)] } else { a[(i, j)].abs() })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn dense_is_metzler(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] >= 0.0))
}

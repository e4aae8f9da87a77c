//! Uniform tensor grid in transformed coordinates.
//!
//! Flat indices run with the first axis fastest, so the axis-`m` neighbour of
//! a node sits `stride(m) = prod_{n<m} (N_n + 1)` entries away.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::transform::TransformedProblem;

/// Relative tolerance when checking that all axes share one base step.
const STEP_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_BOUND: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    bounds: Vec<(f64, f64)>,
    intervals: Vec<usize>,
    beta: Vec<f64>,
    h: f64,
    strides: Vec<usize>,
    total: usize,
}

impl Grid {
    /// Builds the grid with `intervals[i]` steps on axis `i`, where each
    /// axis step is `beta[i] * h` for a single base step `h`.
    pub fn build(bounds: &[(f64, f64)], intervals: &[usize], beta: &[f64]) -> Result<Self> {
        let m = bounds.len();
        if m == 0 || intervals.len() != m || beta.len() != m {
            return Err(Error::InvalidInput(format!(
                "grid needs matching bounds/intervals/beta, got {}/{}/{}",
                m,
                intervals.len(),
                beta.len()
            )));
        }
        for i in 0..m {
            let (lo, hi) = bounds[i];
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "axis {i}: bounds ({lo}, {hi}) are not increasing"
                )));
            }
            if intervals[i] < 2 {
                return Err(Error::InvalidInput(format!(
                    "axis {i}: need at least 2 intervals, got {}",
                    intervals[i]
                )));
            }
            if !(beta[i] > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "axis {i}: step ratio must be positive, got {}",
                    beta[i]
                )));
            }
        }
        let base = |i: usize| (bounds[i].1 - bounds[i].0) / intervals[i] as f64 / beta[i];
        let h = base(0);
        for i in 1..m {
            let hi = base(i);
            if (hi - h).abs() > STEP_TOLERANCE * h.abs() {
                return Err(Error::InconsistentSteps {
                    axis: i,
                    expected: h,
                    found: hi,
                });
            }
        }
        let mut strides = Vec::with_capacity(m);
        let mut total = 1usize;
        for &n in intervals {
            strides.push(total);
            total = total
                .checked_mul(n + 1)
                .ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        }
        Ok(Self {
            bounds: bounds.to_vec(),
            intervals: intervals.to_vec(),
            beta: beta.to_vec(),
            h,
            strides,
            total,
        })
    }

    /// `dim` axes on `[lo, hi]` with `n` intervals each and unit ratios.
    pub fn uniform(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::build(&vec![(lo, hi); dim], &vec![n; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Step on axis `axis`, `beta_i * h`.
    pub fn step(&self, axis: usize) -> f64 {
        (self.bounds[axis].1 - self.bounds[axis].0) / self.intervals[axis] as f64
    }

    /// Coordinate of node `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        lo + (hi - lo) * (j as f64 / self.intervals[axis] as f64)
    }

    pub fn flatten(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.dim() || multi.iter().zip(&self.intervals).any(|(j, n)| j > n) {
            return Err(Error::IndexOutOfRange {
                index: multi.to_vec(),
            });
        }
        Ok(multi.iter().zip(&self.strides).map(|(j, s)| j * s).sum())
    }

    pub fn unflatten(&self, j: usize) -> Result<Vec<usize>> {
        if j >= self.total {
            return Err(Error::IndexOutOfRange { index: vec![j] });
        }
        let mut multi = vec![0; self.dim()];
        self.unflatten_into(j, &mut multi);
        Ok(multi)
    }

    /// Unchecked variant of [`Grid::unflatten`] writing into `out`.
    pub fn unflatten_into(&self, mut j: usize, out: &mut [usize]) {
        for (o, n) in out.iter_mut().zip(&self.intervals) {
            *o = j % (n + 1);
            j /= n + 1;
        }
    }

    pub fn is_boundary(&self, multi: &[usize]) -> Result<bool> {
        self.flatten(multi)?;
        Ok(self.on_face(multi))
    }

    fn on_face(&self, multi: &[usize]) -> bool {
        multi
            .iter()
            .zip(&self.intervals)
            .any(|(&j, &n)| j == 0 || j == n)
    }

    /// Boundary flags for every node in flat order.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut multi = vec![0; self.dim()];
        (0..self.total)
            .map(|j| {
                self.unflatten_into(j, &mut multi);
                self.on_face(&multi)
            })
            .collect()
    }

    pub fn node_y(&self, j: usize) -> Result<Vec<f64>> {
        let multi = self.unflatten(j)?;
        Ok(multi
            .iter()
            .enumerate()
            .map(|(axis, &ji)| self.coordinate(axis, ji))
            .collect())
    }

    pub fn node_s(&self, j: usize, tp: &TransformedProblem) -> Result<Vec<f64>> {
        Ok(tp.inverse_point(&self.node_y(j)?))
    }
}

//! Explicit exponential time stepping with a penalty for early exercise:
//!
//! ```text
//! u^{n+1} = e^{Ak} u^n + k lambda phi(A, k) (u^0 - u^n)^+
//! ```
//!
//! Values are dimensionless (price divided by strike).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expo::ExponentialBackend;
use crate::grid::Grid;
use crate::model::BasketOption;
use crate::transform::TransformedProblem;

/// Dimensionless payoff at every node.
pub fn initial_vector(grid: &Grid, tp: &TransformedProblem, option: &BasketOption) -> Vec<f64> {
    let mut multi = vec![0; grid.dim()];
    let mut y = vec![0.0; grid.dim()];
    (0..grid.total())
        .map(|j| {
            grid.unflatten_into(j, &mut multi);
            for (axis, (yi, &ji)) in y.iter_mut().zip(&multi).enumerate() {
                *yi = grid.coordinate(axis, ji);
            }
            option.payoff(&tp.inverse_point(&y)) / option.strike
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub u: Vec<f64>,
    pub u0: Vec<f64>,
    pub n: usize,
    pub k: f64,
    pub n_steps: usize,
    boundary: Vec<usize>,
}

impl SolverState {
    /// Starts at `tau = 0`. `boundary` lists the nodes whose values must
    /// never move.
    pub fn new(u0: Vec<f64>, k: f64, n_steps: usize, boundary: Vec<usize>) -> Self {
        Self {
            u: u0.clone(),
            u0,
            n: 0,
            k,
            n_steps,
            boundary,
        }
    }

    /// State whose pinned nodes are the zero rows of the backend operator.
    pub fn for_backend(u0: Vec<f64>, backend: &ExponentialBackend, n_steps: usize) -> Self {
        let op = backend.operator();
        let boundary = (0..op.size()).filter(|&i| !op.is_interior(i)).collect();
        Self::new(u0, backend.time_step(), n_steps, boundary)
    }

    pub fn tau(&self) -> f64 {
        self.n as f64 * self.k
    }

    pub fn is_done(&self) -> bool {
        self.n >= self.n_steps
    }
}

/// Advances `state` by one step.
pub fn step(state: &mut SolverState, backend: &ExponentialBackend, lambda: f64) -> Result<()> {
    let mut next = backend.exp_full(&state.u)?;
    if lambda > 0.0 {
        let gap: Vec<f64> = state
            .u0
            .iter()
            .zip(&state.u)
            .map(|(a, b)| (a - b).max(0.0))
            .collect();
        if gap.iter().any(|&g| g > 0.0) {
            let weight = state.k * lambda;
            let penalty = backend.phi(&gap)?;
            for (x, p) in next.iter_mut().zip(&penalty) {
                *x += weight * p;
            }
        }
    }
    for &i in &state.boundary {
        if next[i] != state.u0[i] {
            return Err(Error::BoundaryDrift {
                node: i,
                expected: state.u0[i],
                found: next[i],
            });
        }
    }
    state.u = next;
    state.n += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

fn diagnostics(n: usize, u: &[f64]) -> StepDiagnostics {
    let (min, max) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    StepDiagnostics { n, min, max }
}

/// Runs the remaining steps; entry 0 of the result describes `u^0`.
pub fn run(
    state: &mut SolverState,
    backend: &ExponentialBackend,
    lambda: f64,
) -> Result<Vec<StepDiagnostics>> {
    let mut diags = vec![diagnostics(state.n, &state.u)];
    while !state.is_done() {
        step(state, backend, lambda)?;
        diags.push(diagnostics(state.n, &state.u));
    }
    Ok(diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expo::phi_scalar;
    use crate::model::{Asset, Exercise, MarketModel, OptionKind};
    use crate::operator::{stencil, DiscreteOperator, StencilCoefficients};

    fn put50() -> (MarketModel, BasketOption) {
        let model = MarketModel::with_uniform_correlation(
            0.05,
            vec![Asset { sigma: 0.3, q: 0.0 }, Asset { sigma: 0.2, q: 0.0 }],
            0.6,
        );
        let option = BasketOption {
            weights: vec![0.7, 0.3],
            strike: 50.0,
            maturity: 1.0,
            kind: OptionKind::Put,
            lambda: 100.0,
            exercise: Exercise::American,
        };
        (model, option)
    }

    fn scalar_op(a: f64) -> DiscreteOperator {
        // 1D grid with 3 nodes: a single interior node whose neighbours carry
        // zero weight, i.e. a 1x1 operator embedded between pinned nodes.
        let coeffs = StencilCoefficients {
            a0: a,
            a_plus: vec![0.0],
            a_minus: vec![0.0],
            d_axis: vec![1.0],
            d: 1.0,
            h: 1.0,
            rate: -a,
        };
        DiscreteOperator::assemble(coeffs, &Grid::uniform(1, -1.0, 1.0, 2).unwrap())
    }

    #[test]
    fn initial_vector_matches_payoff_formula() {
        let (model, option) = put50();
        let tp = TransformedProblem::new(&model, &option).unwrap();
        let grid = Grid::uniform(2, -8.0, 8.0, 80).unwrap();
        let u0 = initial_vector(&grid, &tp, &option);
        assert!(u0.iter().all(|&u| (0.0..=1.0).contains(&u)));
        let centre = grid.flatten(&[40, 40]).unwrap();
        assert_eq!(u0[centre], 0.0);
        for multi in [[38, 41], [30, 50], [10, 70]] {
            let j = grid.flatten(&multi).unwrap();
            let y = grid.node_y(j).unwrap();
            // x_1 = y_1, x_2 = y_2 + rho y_1
            let (x1, x2) = (y[0], y[1] + 0.6 * y[0]);
            let expect = (1.0 - 0.7 * (0.3 * x1).exp() - 0.3 * (0.2 * x2).exp()).max(0.0);
            assert!((u0[j] - expect).abs() < 1e-14, "{multi:?}");
        }
    }

    #[test]
    fn zero_operator_without_penalty_is_a_fixed_point() {
        let op = scalar_op(0.0);
        let be = ExponentialBackend::action(op, 0.1);
        let mut st = SolverState::for_backend(vec![0.2, 0.7, 0.4], &be, 3);
        st.u[1] = 0.5;
        step(&mut st, &be, 0.0).unwrap();
        assert_eq!(st.u, vec![0.2, 0.5, 0.4]);
    }

    #[test]
    fn no_gap_means_pure_propagation() {
        let op = scalar_op(-2.0);
        let be = ExponentialBackend::action(op, 0.1);
        let mut st = SolverState::for_backend(vec![0.0, 0.8, 0.0], &be, 1);
        step(&mut st, &be, 50.0).unwrap();
        let expect = 0.8 * (-0.2f64).exp();
        assert!((st.u[1] - expect).abs() < 1e-13);
    }

    #[test]
    fn scalar_penalty_step_closed_form() {
        let (a, k, lambda) = (-3.0, 0.05, 10.0);
        let be = ExponentialBackend::action_with(scalar_op(a), k, 1e-15, 500);
        let mut st = SolverState::for_backend(vec![0.0, 1.0, 0.0], &be, 1);
        st.u[1] = 0.0;
        step(&mut st, &be, lambda).unwrap();
        let expect = k * lambda * phi_scalar(a, k);
        assert!((st.u[1] - expect).abs() < 1e-14, "{} vs {expect}", st.u[1]);
    }

    #[test]
    fn run_records_every_step_and_pins_boundary() {
        let (model, option) = put50();
        let tp = TransformedProblem::new(&model, &option).unwrap();
        let grid = Grid::uniform(2, -8.0, 8.0, 16).unwrap();
        let op = DiscreteOperator::assemble(stencil(&tp, &grid, model.rate), &grid);
        let u0 = initial_vector(&grid, &tp, &option);
        let be = ExponentialBackend::dense(op, 0.01);
        let mut st = SolverState::for_backend(u0.clone(), &be, 20);
        let diags = run(&mut st, &be, option.lambda).unwrap();
        assert_eq!(diags.len(), 21);
        assert_eq!(diags[20].n, 20);
        assert!((st.tau() - 0.2).abs() < 1e-15);
        for (i, b) in grid.boundary_mask().into_iter().enumerate() {
            if b {
                assert_eq!(st.u[i], u0[i]);
            }
        }
        assert!(diags.iter().all(|d| d.min >= 0.0 && d.max <= 1.0));
    }
}

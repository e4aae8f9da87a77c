//! Decorrelating change of variables.
//!
//! Prices are first mapped to scaled log-moneyness `x_i = ln(S_i/E)/sigma_i`,
//! then rotated by `C = L^{-1}` where `R = L D L^T`. In `y = C x` the
//! diffusion is diagonal with variances `D_ii`, so the discretised operator
//! needs no cross-derivative stencil.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{BasketOption, MarketModel};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Unpivoted `R = L diag(D) L^T` with `L` unit lower-triangular.
pub fn ldlt(r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = r.nrows();
    if m == 0 || r.ncols() != m {
        return Err(Error::InvalidInput(format!(
            "correlation matrix must be square and non-empty, got {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    let scale = (0..m).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::identity(m, m);
    let mut d = DVector::zeros(m);
    for j in 0..m {
        let mut pivot = r[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(pivot > PIVOT_TOLERANCE * scale) {
            return Err(Error::NonPositivePivot { index: j, pivot });
        }
        d[j] = pivot;
        for i in (j + 1)..m {
            let mut v = r[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / pivot;
        }
    }
    Ok((l, d))
}

/// Inverse of a unit lower-triangular matrix by forward substitution.
fn unit_lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let m = l.nrows();
    let mut inv = DMatrix::identity(m, m);
    for col in 0..m {
        for i in (col + 1)..m {
            let mut s = 0.0;
            for k in col..i {
                s += l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = -s;
        }
    }
    inv
}

/// `delta_i = (r - q_i - sigma_i^2/2)/sigma_i` and `c_i = sum_j C_ij delta_j`.
pub fn drift_coefficients(c: &DMatrix<f64>, model: &MarketModel) -> (Vec<f64>, Vec<f64>) {
    let delta: Vec<f64> = model
        .assets
        .iter()
        .map(|a| (model.rate - a.q - 0.5 * a.sigma * a.sigma) / a.sigma)
        .collect();
    let m = delta.len();
    let drift = (0..m)
        .map(|i| (0..m).map(|j| c[(i, j)] * delta[j]).sum())
        .collect();
    (delta, drift)
}

/// Everything the discretisation needs from the change of variables.
#[derive(Debug, Clone)]
pub struct TransformedProblem {
    pub l: DMatrix<f64>,
    /// Diagonal of `D`; the diffusion coefficient of each transformed axis.
    pub d_diag: Vec<f64>,
    /// `C = L^{-1}`, maps `x` to `y`.
    pub c: DMatrix<f64>,
    /// `C^{-1} = L`, maps `y` back to `x`.
    pub c_inv: DMatrix<f64>,
    pub delta: Vec<f64>,
    /// Drift of each transformed axis.
    pub drift: Vec<f64>,
    sigma: Vec<f64>,
    strike: f64,
}

impl TransformedProblem {
    pub fn new(model: &MarketModel, option: &BasketOption) -> Result<Self> {
        let (l, d) = ldlt(&model.correlation)?;
        let c = unit_lower_inverse(&l);
        let (delta, drift) = drift_coefficients(&c, model);
        Ok(Self {
            c_inv: l.clone(),
            l,
            d_diag: d.iter().copied().collect(),
            c,
            delta,
            drift,
            sigma: model.sigmas(),
            strike: option.strike,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    /// Asset prices to transformed coordinates.
    pub fn forward_point(&self, spots: &[f64]) -> Result<Vec<f64>> {
        self.check_len(spots.len())?;
        let mut x = Vec::with_capacity(spots.len());
        for (i, (&s, &sig)) in spots.iter().zip(&self.sigma).enumerate() {
            if !(s > 0.0) {
                return Err(Error::Domain { index: i, value: s });
            }
            x.push((s / self.strike).ln() / sig);
        }
        Ok(mat_vec(&self.c, &x))
    }

    /// Transformed coordinates to asset prices.
    pub fn inverse_point(&self, y: &[f64]) -> Vec<f64> {
        let x = mat_vec(&self.c_inv, y);
        x.iter()
            .zip(&self.sigma)
            .map(|(xi, sig)| self.strike * (sig * xi).exp())
            .collect()
    }

    /// `x = C^{-1} y`, the scaled log-moneyness of each asset.
    pub fn log_moneyness(&self, y: &[f64]) -> Vec<f64> {
        mat_vec(&self.c_inv, y)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {n}",
                self.dim()
            )));
        }
        Ok(())
    }
}

fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * v[j]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Asset, Exercise, OptionKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn option(strike: f64, m: usize) -> BasketOption {
        BasketOption {
            weights: vec![1.0 / m as f64; m],
            strike,
            maturity: 1.0,
            kind: OptionKind::Put,
            lambda: 0.0,
            exercise: Exercise::European,
        }
    }

    fn put50() -> MarketModel {
        MarketModel::with_uniform_correlation(
            0.05,
            vec![Asset { sigma: 0.3, q: 0.0 }, Asset { sigma: 0.2, q: 0.0 }],
            0.6,
        )
    }

    fn call3() -> MarketModel {
        MarketModel::with_uniform_correlation(
            0.04,
            vec![
                Asset { sigma: 0.3, q: 0.0 },
                Asset {
                    sigma: 0.35,
                    q: 0.0,
                },
                Asset { sigma: 0.4, q: 0.0 },
            ],
            0.5,
        )
    }

    /// Pivots of plain Gaussian elimination on `R`, independent of `ldlt`.
    fn elimination_pivots(r: &DMatrix<f64>) -> Vec<f64> {
        let mut a = r.clone();
        let m = a.nrows();
        let mut piv = Vec::new();
        for j in 0..m {
            piv.push(a[(j, j)]);
            for i in (j + 1)..m {
                let f = a[(i, j)] / a[(j, j)];
                for k in j..m {
                    a[(i, k)] -= f * a[(j, k)];
                }
            }
        }
        piv
    }

    #[test]
    fn two_by_two_closed_form() {
        let rho = 0.6;
        let r = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let (l, d) = ldlt(&r).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, rho, 1.0]));
        assert_abs_diff_eq!(d[0], 1.0);
        assert_abs_diff_eq!(d[1], 1.0 - rho * rho, epsilon = 1e-15);
    }

    #[test]
    fn identity_factorises_trivially() {
        let (l, d) = ldlt(&DMatrix::identity(4, 4)).unwrap();
        assert_eq!(l, DMatrix::identity(4, 4));
        assert!(d.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn uniform_half_correlation_matches_elimination() {
        let r = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.5 });
        let (l, d) = ldlt(&r).unwrap();
        let back = &l * DMatrix::from_diagonal(&d) * l.transpose();
        assert!((back - &r).amax() < 1e-12);
        for (a, b) in d.iter().zip(elimination_pivots(&r)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(d[2], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_correlation_reports_pivot() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match ldlt(&r) {
            Err(Error::NonPositivePivot { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn put50_drift() {
        let tp = TransformedProblem::new(&put50(), &option(50.0, 2)).unwrap();
        assert_abs_diff_eq!(tp.delta[0], 0.05 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tp.delta[1], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(tp.drift[0], tp.delta[0], epsilon = 1e-15);
        assert_abs_diff_eq!(tp.drift[1], 0.14, epsilon = 1e-15);
    }

    #[test]
    fn drift_cancels_when_dividend_offsets_rate() {
        let sig = [0.3, 0.25];
        let model = MarketModel::with_uniform_correlation(
            0.05,
            sig.iter()
                .map(|&s| Asset {
                    sigma: s,
                    q: 0.05 - 0.5 * s * s,
                })
                .collect(),
            0.4,
        );
        let tp = TransformedProblem::new(&model, &option(1.0, 2)).unwrap();
        assert!(tp.drift.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn spot_at_strike_maps_to_origin() {
        let tp = TransformedProblem::new(&call3(), &option(100.0, 3)).unwrap();
        let y = tp.forward_point(&[100.0; 3]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(tp.inverse_point(&[0.0; 3]), vec![100.0; 3]);
    }

    #[test]
    fn two_asset_coordinates_match_closed_form() {
        let model = put50();
        let tp = TransformedProblem::new(&model, &option(50.0, 2)).unwrap();
        let s = [37.0, 61.0];
        let y = tp.forward_point(&s).unwrap();
        let l1 = (s[0] / 50.0f64).ln();
        let l2 = (s[1] / 50.0f64).ln();
        assert_abs_diff_eq!(y[0], l1 / 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1], l2 / 0.2 - 0.6 / 0.3 * l1, epsilon = 1e-14);
    }

    #[test]
    fn three_asset_coordinates_and_drift_match_closed_form() {
        let (r12, r13, r23) = (0.3, -0.2, 0.45);
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0]);
        let assets = vec![
            Asset {
                sigma: 0.3,
                q: 0.01,
            },
            Asset {
                sigma: 0.35,
                q: 0.0,
            },
            Asset {
                sigma: 0.4,
                q: 0.02,
            },
        ];
        let model = MarketModel::new(0.04, assets, corr.clone());
        let tp = TransformedProblem::new(&model, &option(100.0, 3)).unwrap();
        let beta = (r12 * r13 - r23) / (1.0 - r12 * r12);

        let s = [83.0, 112.0, 97.0];
        let ln: Vec<f64> = s.iter().map(|v| (v / 100.0f64).ln()).collect();
        let y = tp.forward_point(&s).unwrap();
        assert_abs_diff_eq!(y[0], ln[0] / 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1], ln[1] / 0.35 - r12 / 0.3 * ln[0], epsilon = 1e-14);
        let y3 = ln[2] / 0.4 + beta / 0.35 * ln[1] - (beta * r12 + r13) / 0.3 * ln[0];
        assert_abs_diff_eq!(y[2], y3, epsilon = 1e-14);

        let d = &tp.delta;
        assert_abs_diff_eq!(tp.drift[1], d[1] - r12 * d[0], epsilon = 1e-15);
        let c3 = d[2] + beta * d[1] - (beta * r12 + r13) * d[0];
        assert_abs_diff_eq!(tp.drift[2], c3, epsilon = 1e-15);

        let det = corr.determinant();
        assert_abs_diff_eq!(tp.d_diag[1], 1.0 - r12 * r12, epsilon = 1e-15);
        assert_abs_diff_eq!(tp.d_diag[2], det / (1.0 - r12 * r12), epsilon = 1e-14);
    }

    #[test]
    fn non_positive_spot_is_a_domain_error() {
        let tp = TransformedProblem::new(&put50(), &option(50.0, 2)).unwrap();
        assert!(matches!(
            tp.forward_point(&[10.0, 0.0]),
            Err(Error::Domain { index: 1, .. })
        ));
    }

    /// Random SPD correlation matrix from a random factor loading.
    fn random_correlation(m: usize, entries: &[f64]) -> DMatrix<f64> {
        let b = DMatrix::from_fn(m, m + 1, |i, j| entries[i * (m + 1) + j]);
        let cov = &b * b.transpose() + DMatrix::identity(m, m) * 0.05;
        let s: Vec<f64> = (0..m).map(|i| cov[(i, i)].sqrt()).collect();
        DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                1.0
            } else {
                cov[(i, j)] / (s[i] * s[j])
            }
        })
    }

    proptest! {
        #[test]
        fn ldlt_reconstructs_random_correlations(
            m in 1usize..=5,
            entries in proptest::collection::vec(-1.0f64..1.0, 30),
        ) {
            let r = random_correlation(m, &entries);
            let (l, d) = ldlt(&r).unwrap();
            for i in 0..m {
                prop_assert_eq!(l[(i, i)], 1.0);
                for j in (i + 1)..m {
                    prop_assert_eq!(l[(i, j)], 0.0);
                }
            }
            prop_assert!(d.iter().all(|&p| p > 0.0));
            let back = &l * DMatrix::from_diagonal(&d) * l.transpose();
            prop_assert!((back - &r).amax() < 1e-12);
            let inv = unit_lower_inverse(&l);
            prop_assert!((&inv * &l - DMatrix::<f64>::identity(m, m)).amax() < 1e-12);
        }

        #[test]
        fn forward_inverse_round_trip(
            m in 1usize..=5,
            entries in proptest::collection::vec(-1.0f64..1.0, 30),
            spots in proptest::collection::vec(1.0f64..400.0, 5),
        ) {
            let r = random_correlation(m, &entries);
            let assets = (0..m).map(|i| Asset { sigma: 0.1 + 0.1 * i as f64, q: 0.0 }).collect();
            let model = MarketModel::new(0.03, assets, r);
            let tp = TransformedProblem::new(&model, &option(100.0, m)).unwrap();
            let s = &spots[..m];
            let back = tp.inverse_point(&tp.forward_point(s).unwrap());
            for (a, b) in back.iter().zip(s) {
                prop_assert!(((a - b) / b).abs() < 1e-12);
            }
        }
    }
}

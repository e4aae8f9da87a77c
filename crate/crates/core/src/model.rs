//! Market and contract records.
//!
//! Both records are plain data. [`validate`] checks them against the
//! preconditions of the transformed problem and returns a report rather than
//! failing fast, so callers (the CLI in particular) can show every problem at
//! once.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform;

/// Per-asset parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    /// Volatility, 1/sqrt(year).
    pub sigma: f64,
    /// Continuous dividend yield, 1/year.
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub rate: f64,
    pub assets: Vec<Asset>,
    pub correlation: DMatrix<f64>,
}

impl MarketModel {
    pub fn new(rate: f64, assets: Vec<Asset>, correlation: DMatrix<f64>) -> Self {
        Self {
            rate,
            assets,
            correlation,
        }
    }

    /// Market where every pair of assets shares the same correlation.
    pub fn with_uniform_correlation(rate: f64, assets: Vec<Asset>, rho: f64) -> Self {
        let m = assets.len();
        let correlation = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho });
        Self::new(rate, assets, correlation)
    }

    pub fn dim(&self) -> usize {
        self.assets.len()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.assets.iter().map(|a| a.sigma).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Put,
    Call,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exercise {
    American,
    European,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasketOption {
    pub weights: Vec<f64>,
    pub strike: f64,
    pub maturity: f64,
    pub kind: OptionKind,
    /// Penalty rate for early exercise, 1/year.
    pub lambda: f64,
    pub exercise: Exercise,
}

impl BasketOption {
    /// Penalty rate actually used by the scheme: zero for European exercise.
    pub fn effective_lambda(&self) -> f64 {
        match self.exercise {
            Exercise::American => self.lambda,
            Exercise::European => 0.0,
        }
    }

    pub fn basket(&self, spots: &[f64]) -> f64 {
        self.weights.iter().zip(spots).map(|(w, s)| w * s).sum()
    }

    /// Exercise value at asset prices `spots`.
    pub fn payoff(&self, spots: &[f64]) -> f64 {
        let b = self.basket(spots);
        match self.kind {
            OptionKind::Put => (self.strike - b).max(0.0),
            OptionKind::Call => (b - self.strike).max(0.0),
        }
    }
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }

    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Turns a failed report into [`Error::InvalidInput`] listing every failure.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msg = self
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidInput(msg))
    }
}

const SYMMETRY_TOL: f64 = 1e-12;

pub fn validate(model: &MarketModel, option: &BasketOption) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = model.dim();
    let r = &model.correlation;

    report.push("asset_count", m >= 1, format!("M = {m}"));
    report.push(
        "rate_finite",
        model.rate.is_finite(),
        format!("r = {}", model.rate),
    );

    let bad_sigma: Vec<usize> = (0..m)
        .filter(|&i| !(model.assets[i].sigma > 0.0 && model.assets[i].sigma.is_finite()))
        .collect();
    report.push(
        "volatility_positive",
        bad_sigma.is_empty(),
        format!("non-positive sigma at {bad_sigma:?}"),
    );
    let bad_q: Vec<usize> = (0..m)
        .filter(|&i| !(model.assets[i].q >= 0.0 && model.assets[i].q.is_finite()))
        .collect();
    report.push(
        "dividend_nonnegative",
        bad_q.is_empty(),
        format!("negative dividend yield at {bad_q:?}"),
    );

    let shape_ok = r.nrows() == m && r.ncols() == m;
    report.push(
        "correlation_shape",
        shape_ok,
        format!("{}x{} for M = {m}", r.nrows(), r.ncols()),
    );
    if shape_ok && m >= 1 {
        let mut symmetric = true;
        let mut unit_diag = true;
        let mut bounded = true;
        for i in 0..m {
            unit_diag &= (r[(i, i)] - 1.0).abs() <= SYMMETRY_TOL;
            for j in 0..m {
                symmetric &= (r[(i, j)] - r[(j, i)]).abs() <= SYMMETRY_TOL;
                bounded &= r[(i, j)].abs() <= 1.0 + SYMMETRY_TOL;
            }
        }
        report.push("correlation_symmetric", symmetric, "R != R^T");
        report.push("correlation_unit_diagonal", unit_diag, "diag(R) != 1");
        report.push("correlation_bounded", bounded, "some |rho_ij| > 1");
        match transform::ldlt(r) {
            Ok(_) => report.push("correlation_positive_definite", true, ""),
            Err(e) => report.push("correlation_positive_definite", false, e.to_string()),
        }
    }

    report.push(
        "weights_count",
        option.weights.len() == m,
        format!("{} weights for M = {m}", option.weights.len()),
    );
    report.push(
        "weights_positive",
        option.weights.iter().all(|&w| w > 0.0 && w.is_finite()),
        format!("weights {:?}", option.weights),
    );
    report.push(
        "strike_positive",
        option.strike > 0.0 && option.strike.is_finite(),
        format!("E = {}", option.strike),
    );
    report.push(
        "maturity_positive",
        option.maturity > 0.0 && option.maturity.is_finite(),
        format!("T = {}", option.maturity),
    );
    report.push(
        "lambda_nonnegative",
        option.lambda >= 0.0 && option.lambda.is_finite(),
        format!("lambda = {}", option.lambda),
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn put(weights: Vec<f64>, strike: f64) -> BasketOption {
        BasketOption {
            weights,
            strike,
            maturity: 1.0,
            kind: OptionKind::Put,
            lambda: 100.0,
            exercise: Exercise::American,
        }
    }

    fn two_assets(rho: f64) -> MarketModel {
        MarketModel::with_uniform_correlation(
            0.05,
            vec![Asset { sigma: 0.3, q: 0.0 }, Asset { sigma: 0.2, q: 0.0 }],
            rho,
        )
    }

    #[test]
    fn two_asset_put_is_valid() {
        let report = validate(&two_assets(0.6), &put(vec![0.7, 0.3], 50.0));
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn single_asset_is_valid() {
        let model = MarketModel::new(
            0.05,
            vec![Asset { sigma: 0.2, q: 0.0 }],
            DMatrix::identity(1, 1),
        );
        assert!(validate(&model, &put(vec![1.0], 10.0)).is_valid());
    }

    #[test]
    fn perfect_correlation_is_rejected() {
        let report = validate(&two_assets(1.0), &put(vec![0.7, 0.3], 50.0));
        let failed: Vec<_> = report.failures().map(|c| c.name).collect();
        assert_eq!(failed, vec!["correlation_positive_definite"]);
        assert!(report.into_result().is_err());
    }

    #[test]
    fn bad_contract_fields_are_all_reported() {
        let mut opt = put(vec![0.7, -0.3], -1.0);
        opt.maturity = 0.0;
        opt.lambda = -1.0;
        let report = validate(&two_assets(0.2), &opt);
        let failed: Vec<_> = report.failures().map(|c| c.name).collect();
        assert_eq!(
            failed,
            vec![
                "weights_positive",
                "strike_positive",
                "maturity_positive",
                "lambda_nonnegative"
            ]
        );
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(put(vec![0.7, 0.3], 50.0).payoff(&[50.0, 50.0]), 0.0);
        assert_eq!(put(vec![0.5, 0.5], 9.0).payoff(&[0.0, 0.0]), 9.0);
        let mut call = put(vec![0.5, 0.5], 100.0);
        call.kind = OptionKind::Call;
        assert_eq!(call.payoff(&[120.0, 100.0]), 10.0);
    }

    #[test]
    fn european_disables_penalty() {
        let mut opt = put(vec![1.0], 1.0);
        assert_eq!(opt.effective_lambda(), 100.0);
        opt.exercise = Exercise::European;
        assert_eq!(opt.effective_lambda(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn put_payoff_is_bounded_and_continuous(
                s in proptest::collection::vec(0.0f64..200.0, 3),
                ds in proptest::collection::vec(-1e-6f64..1e-6, 3),
            ) {
                let opt = put(vec![0.2, 0.5, 0.3], 80.0);
                let p = opt.payoff(&s);
                prop_assert!((0.0..=80.0).contains(&p));
                let moved: Vec<f64> = s.iter().zip(&ds).map(|(a, b)| (a + b).max(0.0)).collect();
                let lip: f64 = 0.5 * 3.0 * 1e-6;
                prop_assert!((opt.payoff(&moved) - p).abs() <= lip + 1e-12);
            }

            #[test]
            fn call_payoff_is_nonnegative(s in proptest::collection::vec(0.0f64..500.0, 2)) {
                let mut opt = put(vec![0.4, 0.6], 100.0);
                opt.kind = OptionKind::Call;
                prop_assert!(opt.payoff(&s) >= 0.0);
            }
        }
    }
}

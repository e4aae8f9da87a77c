//! Reference pricers that share no code path with the PDE solver:
//! a four-branch two-asset lattice, a one-asset CRR tree and a correlated
//! Monte Carlo for European baskets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Asset, BasketOption, Exercise, MarketModel};
use crate::transform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub price: f64,
    pub std_error: f64,
    /// Independent samples behind `std_error` (antithetic pairs count once).
    pub samples: usize,
}

/// Paths per independently seeded chunk; fixed so results do not depend on
/// the thread count.
const MC_CHUNK: usize = 1 << 14;

fn check_spot(spot: &[f64], m: usize) -> Result<()> {
    if spot.len() != m {
        return Err(Error::InvalidInput(format!(
            "expected {m} spot prices, got {}",
            spot.len()
        )));
    }
    if let Some((i, &s)) = spot.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::Domain { index: i, value: s });
    }
    Ok(())
}

/// Two-asset recombining lattice with moves `±sigma_i sqrt(dt)` in log price
/// and the four joint branch probabilities
/// `(1 ± rho ± sqrt(dt)(nu_1/sigma_1 ± nu_2/sigma_2)) / 4`,
/// `nu_i = r - q_i - sigma_i^2 / 2`.
pub fn tree_price_2asset(
    model: &MarketModel,
    option: &BasketOption,
    spot: &[f64],
    params: TreeParams,
) -> Result<f64> {
    if model.dim() != 2 || option.weights.len() != 2 {
        return Err(Error::InvalidInput(
            "two-asset lattice needs exactly two assets".into(),
        ));
    }
    check_spot(spot, 2)?;
    let n = params.steps.max(1);
    let dt = option.maturity / n as f64;
    let sq = dt.sqrt();
    let rho = model.correlation[(0, 1)];
    let [a1, a2] = [model.assets[0], model.assets[1]];
    let m1 = (model.rate - a1.q - 0.5 * a1.sigma * a1.sigma) / a1.sigma;
    let m2 = (model.rate - a2.q - 0.5 * a2.sigma * a2.sigma) / a2.sigma;
    let p_uu = 0.25 * (1.0 + rho + sq * (m1 + m2));
    let p_ud = 0.25 * (1.0 - rho + sq * (m1 - m2));
    let p_du = 0.25 * (1.0 - rho + sq * (m2 - m1));
    let p_dd = 0.25 * (1.0 + rho - sq * (m1 + m2));
    let probs = vec![p_uu, p_ud, p_du, p_dd];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidProbabilities(probs));
    }
    let disc = (-model.rate * dt).exp();
    let (u1, u2) = (a1.sigma * sq, a2.sigma * sq);
    let american = option.exercise == Exercise::American;

    // prices at level `level`, index i = number of up moves
    let level_prices = |level: usize, s0: f64, u: f64| -> Vec<f64> {
        (0..=level)
            .map(|i| s0 * ((2.0 * i as f64 - level as f64) * u).exp())
            .collect()
    };

    let s1 = level_prices(n, spot[0], u1);
    let s2 = level_prices(n, spot[1], u2);
    let width = n + 1;
    let mut v = vec![0.0; width * width];
    for i in 0..=n {
        for j in 0..=n {
            v[i * width + j] = option.payoff(&[s1[i], s2[j]]);
        }
    }
    for level in (0..n).rev() {
        let (s1, s2) = if american {
            (
                level_prices(level, spot[0], u1),
                level_prices(level, spot[1], u2),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        for i in 0..=level {
            for j in 0..=level {
                let cont = disc
                    * (p_uu * v[(i + 1) * width + j + 1]
                        + p_ud * v[(i + 1) * width + j]
                        + p_du * v[i * width + j + 1]
                        + p_dd * v[i * width + j]);
                v[i * width + j] = if american {
                    cont.max(option.payoff(&[s1[i], s2[j]]))
                } else {
                    cont
                };
            }
        }
    }
    Ok(v[0])
}

/// Cox-Ross-Rubinstein tree for one asset; the contract's first weight
/// scales the asset.
pub fn crr_price_1d(
    rate: f64,
    asset: Asset,
    option: &BasketOption,
    spot: f64,
    steps: usize,
) -> Result<f64> {
    check_spot(&[spot], 1)?;
    let n = steps.max(1);
    let dt = option.maturity / n as f64;
    let u = (asset.sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let p = (((rate - asset.q) * dt).exp() - d) / (u - d);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbabilities(vec![p, 1.0 - p]));
    }
    let disc = (-rate * dt).exp();
    let american = option.exercise == Exercise::American;
    let price_at = |level: usize, i: usize| spot * u.powi(2 * i as i32 - level as i32);
    let mut v: Vec<f64> = (0..=n).map(|i| option.payoff(&[price_at(n, i)])).collect();
    for level in (0..n).rev() {
        for i in 0..=level {
            let cont = disc * (p * v[i + 1] + (1.0 - p) * v[i]);
            v[i] = if american {
                cont.max(option.payoff(&[price_at(level, i)]))
            } else {
                cont
            };
        }
    }
    Ok(v[0])
}

/// Discounted mean payoff under correlated geometric Brownian motion.
/// Correlated normals are `L D^{1/2} eps` from the LDL^T factor of R.
pub fn mc_price_european(
    model: &MarketModel,
    option: &BasketOption,
    spot: &[f64],
    params: McParams,
) -> Result<McEstimate> {
    let m = model.dim();
    check_spot(spot, m)?;
    if option.weights.len() != m {
        return Err(Error::InvalidInput(
            "weight count does not match assets".into(),
        ));
    }
    let (l, d) = transform::ldlt(&model.correlation)?;
    let t = option.maturity;
    let mut factor = l.clone();
    for j in 0..m {
        let s = d[j].sqrt();
        for i in 0..m {
            factor[(i, j)] *= s;
        }
    }
    let drift: Vec<f64> = model
        .assets
        .iter()
        .map(|a| (model.rate - a.q - 0.5 * a.sigma * a.sigma) * t)
        .collect();
    let vol: Vec<f64> = model.assets.iter().map(|a| a.sigma * t.sqrt()).collect();
    let disc = (-model.rate * t).exp();

    let terminal_payoff = |eps: &[f64], sign: f64, s_t: &mut [f64]| {
        for i in 0..m {
            let mut z = 0.0;
            for j in 0..=i {
                z += factor[(i, j)] * eps[j];
            }
            s_t[i] = spot[i] * (drift[i] + vol[i] * sign * z).exp();
        }
        option.payoff(s_t)
    };

    let samples = if params.antithetic {
        params.paths.div_ceil(2)
    } else {
        params.paths
    };
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut eps = vec![0.0; m];
            let mut s_t = vec![0.0; m];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                let mut x = terminal_payoff(&eps, 1.0, &mut s_t);
                if params.antithetic {
                    x = 0.5 * (x + terminal_payoff(&eps, -1.0, &mut s_t));
                }
                sum += x;
                sum_sq += x * x;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let nf = samples as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    Ok(McEstimate {
        price: disc * mean,
        std_error: disc * (var / nf).sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OptionKind;

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
            lambda: 0.0,
            exercise: Exercise::American,
        };
        (model, option)
    }

    #[test]
    fn short_maturity_collapses_to_payoff() {
        let (model, mut opt) = put50();
        opt.maturity = 1e-8;
        let p = tree_price_2asset(&model, &opt, &[40.0, 45.0], TreeParams { steps: 10 }).unwrap();
        assert!((p - opt.payoff(&[40.0, 45.0])).abs() < 1e-6);
    }

    #[test]
    fn american_dominates_european() {
        let (model, mut opt) = put50();
        let am = tree_price_2asset(&model, &opt, &[50.0, 50.0], TreeParams { steps: 200 }).unwrap();
        opt.exercise = Exercise::European;
        let eu = tree_price_2asset(&model, &opt, &[50.0, 50.0], TreeParams { steps: 200 }).unwrap();
        assert!(am > eu);

        let asset = Asset { sigma: 0.3, q: 0.0 };
        let mut one = opt.clone();
        one.weights = vec![1.0];
        let eu1 = crr_price_1d(0.05, asset, &one, 45.0, 300).unwrap();
        one.exercise = Exercise::American;
        let am1 = crr_price_1d(0.05, asset, &one, 45.0, 300).unwrap();
        assert!(am1 >= eu1);
    }

    #[test]
    fn deep_itm_american_put_is_at_least_intrinsic() {
        let (_, mut opt) = put50();
        opt.weights = vec![1.0];
        let p = crr_price_1d(0.05, Asset { sigma: 0.3, q: 0.0 }, &opt, 10.0, 500).unwrap();
        assert!(p >= 40.0);
    }

    #[test]
    fn crr_converges_under_step_doubling() {
        let (_, mut opt) = put50();
        opt.weights = vec![1.0];
        let asset = Asset { sigma: 0.3, q: 0.0 };
        let a = crr_price_1d(0.05, asset, &opt, 50.0, 2000).unwrap();
        let c = crr_price_1d(0.05, asset, &opt, 50.0, 4000).unwrap();
        assert!((a - c).abs() < 1e-3);
    }

    #[test]
    fn european_crr_matches_black_scholes() {
        // Black-Scholes put, S = K = 50, sigma = 0.3, r = 0.05, T = 1
        let bs = 4.677098618028616;
        let (_, mut opt) = put50();
        opt.weights = vec![1.0];
        opt.exercise = Exercise::European;
        let p = crr_price_1d(0.05, Asset { sigma: 0.3, q: 0.0 }, &opt, 50.0, 4000).unwrap();
        assert!((p - bs).abs() < 1e-3, "{p}");
    }

    #[test]
    fn mc_is_reproducible_and_deterministic_in_zero_vol_limit() {
        let (mut model, mut opt) = put50();
        opt.exercise = Exercise::European;
        let params = McParams {
            paths: 40_000,
            seed: 7,
            antithetic: true,
        };
        let a = mc_price_european(&model, &opt, &[50.0, 50.0], params).unwrap();
        let b = mc_price_european(&model, &opt, &[50.0, 50.0], params).unwrap();
        assert_eq!(a, b);

        for asset in model.assets.iter_mut() {
            asset.sigma = 1e-9;
        }
        opt.kind = OptionKind::Call;
        let p = mc_price_european(&model, &opt, &[50.0, 60.0], params).unwrap();
        let fwd = 0.7 * 50.0 * 0.05f64.exp() + 0.3 * 60.0 * 0.05f64.exp();
        let expect = (-0.05f64).exp() * (fwd - 50.0);
        assert!((p.price - expect).abs() < 1e-6);
    }

    #[test]
    fn rejects_invalid_probabilities() {
        let (model, opt) = put50();
        let mut bad = model.clone();
        bad.rate = 5.0;
        let r = tree_price_2asset(&bad, &opt, &[50.0, 50.0], TreeParams { steps: 1 });
        assert!(matches!(r, Err(Error::InvalidProbabilities(_))));
    }
}

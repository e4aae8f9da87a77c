//! Batch front end: run configuration, the pricing pipeline and its output
//! files.
//!
//! A run is described by a TOML document; see the README for every key.
//! Validation failures point at the line of the offending key.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::expo::{self, BackendMode, ExponentialBackend};
use crate::grid::{Grid, DEFAULT_BOUND};
use crate::model::{self, Asset, BasketOption, Exercise, MarketModel, OptionKind};
use crate::operator::{stencil, DiscreteOperator, StencilCoefficients};
use crate::oracles::{self, McEstimate, McParams, TreeParams};
use crate::stability::{self, StabilityReport};
use crate::stepper::{self, SolverState, StepDiagnostics};
use crate::transform::TransformedProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    pub option: OptionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub queries: QueryConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub rate: f64,
    pub assets: Vec<Asset>,
    /// Full correlation matrix, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Shorthand for a matrix with every off-diagonal entry equal to `rho`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionConfig {
    pub kind: OptionKind,
    #[serde(default = "default_exercise")]
    pub exercise: Exercise,
    pub weights: Vec<f64>,
    pub strike: f64,
    pub maturity: f64,
    #[serde(default)]
    pub lambda: f64,
}

fn default_exercise() -> Exercise {
    Exercise::American
}

/// Computational domain in transformed coordinates. Exactly one of
/// `intervals` and `h` must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[lo, hi]` per axis; defaults to `[-8, 8]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Intervals per axis; each axis has `intervals + 1` nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<usize>>,
    /// Base step; axis `i` then uses `beta_i * h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeStep {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for TimeStep {
    fn default() -> Self {
        TimeStep::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Auto,
    Dense,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub step: TimeStep,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_tolerance() -> f64 {
    expo::DEFAULT_TOLERANCE
}

fn default_budget() -> usize {
    expo::DEFAULT_BUDGET
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            step: TimeStep::default(),
            backend: BackendChoice::default(),
            tolerance: default_tolerance(),
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    #[serde(default)]
    pub spots: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub summary: String,
    pub surface: String,
    pub queries: String,
    pub operator: String,
    pub sweep: String,
    pub write_surface: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            summary: "summary.json".into(),
            surface: "surface.csv".into(),
            queries: "queries.csv".into(),
            operator: "operator.txt".into(),
            sweep: "sweep.csv".into(),
            write_surface: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    pub override_stability: bool,
    pub dump_operator: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub tree_steps: usize,
    pub mc_paths: usize,
    pub antithetic: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tree_steps: 1000,
            mc_paths: 1_000_000,
            antithetic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0],
        }
    }
}

type Section = BTreeMap<String, Spanned<toml::Value>>;

/// Source positions of the keys that validation can complain about.
#[derive(Debug, Default, Deserialize)]
struct Locator {
    market: Option<Spanned<Section>>,
    option: Option<Spanned<Section>>,
    grid: Option<Spanned<Section>>,
}

impl Locator {
    fn line(&self, src: &str, section: &str, key: &str) -> Option<usize> {
        let table = match section {
            "market" => self.market.as_ref(),
            "option" => self.option.as_ref(),
            "grid" => self.grid.as_ref(),
            _ => None,
        }?;
        let start = table
            .get_ref()
            .get(key)
            .map(|v| v.span().start)
            .unwrap_or(table.span().start);
        Some(line_of(src, start))
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

fn check_location(name: &str, market: &MarketConfig) -> (&'static str, &'static str) {
    match name {
        "rate_finite" => ("market", "rate"),
        "asset_count" | "volatility_positive" | "dividend_nonnegative" => ("market", "assets"),
        n if n.starts_with("correlation") => {
            if market.correlation.is_some() {
                ("market", "correlation")
            } else {
                ("market", "rho")
            }
        }
        "weights_count" | "weights_positive" => ("option", "weights"),
        "strike_positive" => ("option", "strike"),
        "maturity_positive" => ("option", "maturity"),
        "lambda_nonnegative" => ("option", "lambda"),
        _ => ("market", ""),
    }
}

fn anchored(line: Option<usize>, msg: impl std::fmt::Display) -> String {
    match line {
        Some(l) => format!("line {l}: {msg}"),
        None => msg.to_string(),
    }
}

/// Parsed inputs of one run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: MarketModel,
    pub option: BasketOption,
    pub tp: TransformedProblem,
    pub grid: Grid,
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        let locator: Locator = toml::from_str(src).unwrap_or_default();
        cfg.check(src, &locator)?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    fn check(&self, src: &str, locator: &Locator) -> Result<()> {
        let model = self
            .market_model()
            .map_err(|e| Error::Config(anchored(locator.line(src, "market", "rho"), e)))?;
        let option = self.basket_option();
        let report = model::validate(&model, &option);
        if !report.is_valid() {
            let msgs: Vec<String> = report
                .failures()
                .map(|c| {
                    let (section, key) = check_location(c.name, &self.market);
                    anchored(
                        locator.line(src, section, key),
                        format_args!("{}: {}", c.name, c.detail),
                    )
                })
                .collect();
            return Err(Error::Config(msgs.join("\n")));
        }
        let grid_key = if self.grid.h.is_some() {
            "h"
        } else {
            "intervals"
        };
        self.build_grid(model.dim())
            .map_err(|e| Error::Config(anchored(locator.line(src, "grid", grid_key), e)))?;
        for spot in &self.queries.spots {
            if spot.len() != model.dim() {
                return Err(Error::Config(format!(
                    "query {spot:?} has {} prices for {} assets",
                    spot.len(),
                    model.dim()
                )));
            }
        }
        if let TimeStep::Fixed(k) = self.time.step {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Config(format!(
                    "time step must be positive, got {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn market_model(&self) -> Result<MarketModel> {
        let m = &self.market;
        let dim = m.assets.len();
        let correlation = match (&m.correlation, m.rho) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput(
                    "give either `correlation` or `rho`, not both".into(),
                ))
            }
            (Some(rows), None) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidInput(format!(
                        "correlation must be {dim}x{dim}"
                    )));
                }
                DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
            }
            (None, Some(rho)) => DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho }),
            (None, None) if dim <= 1 => DMatrix::identity(dim, dim),
            (None, None) => {
                return Err(Error::InvalidInput(
                    "missing `correlation` or `rho` for several assets".into(),
                ))
            }
        };
        Ok(MarketModel::new(m.rate, m.assets.clone(), correlation))
    }

    pub fn basket_option(&self) -> BasketOption {
        let o = &self.option;
        BasketOption {
            weights: o.weights.clone(),
            strike: o.strike,
            maturity: o.maturity,
            kind: o.kind,
            lambda: o.lambda,
            exercise: o.exercise,
        }
    }

    pub fn build_grid(&self, dim: usize) -> Result<Grid> {
        let g = &self.grid;
        let bounds: Vec<(f64, f64)> = match &g.bounds {
            Some(b) if b.len() != dim => {
                return Err(Error::InvalidInput(format!(
                    "{} bounds for {dim} axes",
                    b.len()
                )))
            }
            Some(b) => b.iter().map(|[lo, hi]| (*lo, *hi)).collect(),
            None => vec![(-DEFAULT_BOUND, DEFAULT_BOUND); dim],
        };
        let beta = g.beta.clone().unwrap_or_else(|| vec![1.0; dim]);
        if beta.len() != dim {
            return Err(Error::InvalidInput(format!(
                "{} beta ratios for {dim} axes",
                beta.len()
            )));
        }
        let intervals = match (&g.intervals, g.h) {
            (Some(n), None) => n.clone(),
            (None, Some(h)) => intervals_for_step(&bounds, &beta, h)?,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput(
                    "give either `intervals` or `h`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidInput("grid needs `intervals` or `h`".into()))
            }
        };
        Grid::build(&bounds, &intervals, &beta)
    }

    pub fn problem(&self) -> Result<Problem> {
        let model = self.market_model()?;
        let option = self.basket_option();
        model::validate(&model, &option).into_result()?;
        let tp = TransformedProblem::new(&model, &option).map_err(|e| e.in_stage("transform"))?;
        let grid = self
            .build_grid(model.dim())
            .map_err(|e| e.in_stage("grid"))?;
        Ok(Problem {
            model,
            option,
            tp,
            grid,
        })
    }
}

fn intervals_for_step(bounds: &[(f64, f64)], beta: &[f64], h: f64) -> Result<Vec<usize>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
    }
    bounds
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(axis, (&(lo, hi), &b))| {
            let n = (hi - lo) / (b * h);
            let rounded = n.round();
            if (n - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 2.0 {
                Err(Error::InvalidInput(format!(
                    "axis {axis}: length {} is not a multiple of beta * h = {}",
                    hi - lo,
                    b * h
                )))
            } else {
                Ok(rounded as usize)
            }
        })
        .collect()
}

/// Everything known before time stepping starts.
#[derive(Debug, Clone)]
pub struct Plan {
    pub problem: Problem,
    pub coeffs: StencilCoefficients,
    pub operator: DiscreteOperator,
    pub k: f64,
    pub steps: usize,
    pub stability: StabilityReport,
    pub assembly_s: f64,
}

pub fn plan(cfg: &RunConfig) -> Result<Plan> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let Problem {
        model,
        option,
        tp,
        grid,
        ..
    } = &problem;
    for spot in &cfg.queries.spots {
        locate(grid, tp, spot).map_err(|e| e.in_stage("query"))?;
    }
    let coeffs = stencil(tp, grid, model.rate);
    let operator = DiscreteOperator::assemble(coeffs.clone(), grid);
    let lambda = option.effective_lambda();
    let k_max = stability::k_condition(grid.h(), coeffs.d, coeffs.rate, lambda);
    let (k, steps) = match cfg.time.step {
        TimeStep::Fixed(k) => stability::fixed_time_step(k, option.maturity),
        TimeStep::Auto(_) => stability::auto_time_step(k_max, option.maturity),
    };
    let report = stability::report(&coeffs, &tp.drift, grid, &operator, lambda, k);
    Ok(Plan {
        problem,
        coeffs,
        operator,
        k,
        steps,
        stability: report,
        assembly_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPrice {
    pub spot: Vec<f64>,
    pub price: f64,
}

/// Range of the price surface (currency) after step `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepExtrema {
    pub n: usize,
    pub tau: f64,
    pub min: f64,
    pub max: f64,
}

/// Wall time per phase, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timing {
    pub assembly_s: f64,
    pub exponential_s: f64,
    pub stepping_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dim: usize,
    pub nodes: usize,
    pub intervals: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub beta: Vec<f64>,
    pub h: f64,
    pub lambda: f64,
    pub k: f64,
    pub steps: usize,
    pub backend: BackendMode,
    pub stability: StabilityReport,
    pub queries: Vec<QueryPrice>,
    pub step_extrema: Vec<StepExtrema>,
    pub timing: Timing,
}

impl RunSummary {
    /// JSON of everything except `timing`, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("summary serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("summary serialises")
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub problem: Problem,
    pub operator: DiscreteOperator,
    /// Dimensionless values at `tau = T`.
    pub u: Vec<f64>,
    pub summary: RunSummary,
}

impl Solution {
    pub fn price_at(&self, spot: &[f64]) -> Result<f64> {
        let p = &self.problem;
        query_price(&self.u, &p.grid, &p.tp, &p.option, spot)
    }
}

fn make_backend(cfg: &TimeConfig, op: DiscreteOperator, k: f64) -> ExponentialBackend {
    let action = |op| ExponentialBackend::action_with(op, k, cfg.tolerance, cfg.budget);
    match cfg.backend {
        BackendChoice::Dense => ExponentialBackend::dense(op, k),
        BackendChoice::Action => action(op),
        BackendChoice::Auto if op.size() <= expo::DENSE_AUTO_LIMIT => {
            ExponentialBackend::dense(op, k)
        }
        BackendChoice::Auto => action(op),
    }
}

/// Runs the full pipeline. Fails with [`Error::Unstable`] when the step
/// conditions are violated and `flags.override_stability` is off.
pub fn run(cfg: &RunConfig) -> Result<Solution> {
    let Plan {
        problem,
        operator,
        k,
        steps,
        stability: report,
        assembly_s,
        ..
    } = plan(cfg)?;
    if !report.satisfied && !cfg.flags.override_stability {
        return Err(Error::Unstable {
            h: report.h_used,
            h_max: report.h_max,
            k: report.k_used,
            k_max: report.k_max,
        }
        .in_stage("stability"));
    }

    let start = Instant::now();
    let backend = make_backend(&cfg.time, operator.clone(), k);
    let exponential_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let lambda = problem.option.effective_lambda();
    let u0 = stepper::initial_vector(&problem.grid, &problem.tp, &problem.option);
    let mut state = SolverState::for_backend(u0, &backend, steps);
    let diags = stepper::run(&mut state, &backend, lambda).map_err(|e| e.in_stage("stepper"))?;
    let stepping_s = start.elapsed().as_secs_f64();

    let strike = problem.option.strike;
    let step_extrema = diags
        .iter()
        .map(|&StepDiagnostics { n, min, max }| StepExtrema {
            n,
            tau: n as f64 * k,
            min: min * strike,
            max: max * strike,
        })
        .collect();
    let queries = cfg
        .queries
        .spots
        .iter()
        .map(|s| {
            let price = query_price(&state.u, &problem.grid, &problem.tp, &problem.option, s)?;
            Ok(QueryPrice {
                spot: s.clone(),
                price,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("query"))?;

    let grid = &problem.grid;
    let summary = RunSummary {
        dim: grid.dim(),
        nodes: grid.total(),
        intervals: grid.intervals().to_vec(),
        bounds: grid.bounds().to_vec(),
        beta: grid.beta().to_vec(),
        h: grid.h(),
        lambda,
        k,
        steps,
        backend: backend.mode(),
        stability: report,
        queries,
        step_extrema,
        timing: Timing {
            assembly_s,
            exponential_s,
            stepping_s,
            total_s: assembly_s + exponential_s + stepping_s,
        },
    };
    Ok(Solution {
        problem,
        operator,
        u: state.u,
        summary,
    })
}

/// Enclosing cell of `spot`: lower corner and fractional offsets per axis.
fn locate(grid: &Grid, tp: &TransformedProblem, spot: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let y = tp.forward_point(spot)?;
    let mut base = Vec::with_capacity(y.len());
    let mut frac = Vec::with_capacity(y.len());
    for (axis, &yi) in y.iter().enumerate() {
        let (lo, hi) = grid.bounds()[axis];
        let slack = 1e-12 * (hi - lo);
        if !(yi >= lo - slack && yi <= hi + slack) {
            return Err(Error::OutOfDomain {
                spot: spot.to_vec(),
                y,
            });
        }
        let n = grid.intervals()[axis];
        let t = ((yi - lo) / grid.step(axis)).clamp(0.0, n as f64);
        let j = (t.floor() as usize).min(n - 1);
        base.push(j);
        frac.push(t - j as f64);
    }
    Ok((base, frac))
}

/// Price at `spot` by multilinear interpolation in `y` over the enclosing
/// cell, in currency units.
pub fn query_price(
    u: &[f64],
    grid: &Grid,
    tp: &TransformedProblem,
    option: &BasketOption,
    spot: &[f64],
) -> Result<f64> {
    let (base, frac) = locate(grid, tp, spot)?;
    let dim = grid.dim();
    let mut value = 0.0;
    let mut multi = vec![0usize; dim];
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        for axis in 0..dim {
            let up = (corner >> axis) & 1 == 1;
            multi[axis] = base[axis] + up as usize;
            w *= if up { frac[axis] } else { 1.0 - frac[axis] };
        }
        if w != 0.0 {
            value += w * u[grid.flatten(&multi)?];
        }
    }
    Ok(value * option.strike)
}

/// Formats with 10 significant digits.
pub fn sig10(x: f64) -> String {
    format!("{x:.9e}")
}

/// Writes one CSV row per node in flat-index order:
/// `flat, j0.., S0.., y0.., price`.
pub fn emit_surface(
    u: &[f64],
    grid: &Grid,
    tp: &TransformedProblem,
    option: &BasketOption,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = grid.dim();
    let mut header = vec!["flat".to_string()];
    header.extend((0..dim).map(|i| format!("j{i}")));
    header.extend((0..dim).map(|i| format!("S{i}")));
    header.extend((0..dim).map(|i| format!("y{i}")));
    header.push("price".into());
    writeln!(w, "{}", header.join(","))?;

    let mut multi = vec![0usize; dim];
    let mut y = vec![0.0; dim];
    for (j, &uj) in u.iter().enumerate().take(grid.total()) {
        grid.unflatten_into(j, &mut multi);
        for (axis, yi) in y.iter_mut().enumerate() {
            *yi = grid.coordinate(axis, multi[axis]);
        }
        let s = tp.inverse_point(&y);
        let mut row = vec![j.to_string()];
        row.extend(multi.iter().map(|m| m.to_string()));
        row.extend(s.iter().map(|&v| sig10(v)));
        row.extend(y.iter().map(|&v| sig10(v)));
        row.push(sig10(uj * option.strike));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_query_table(queries: &[QueryPrice], dim: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = (0..dim).map(|i| format!("S{i}")).collect();
    header.push("price".into());
    writeln!(w, "{}", header.join(","))?;
    for q in queries {
        let mut row: Vec<String> = q.spot.iter().map(|&s| sig10(s)).collect();
        row.push(sig10(q.price));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the summary, query table, and optionally the surface and the
/// operator triplets into `dir`. Returns the paths written.
pub fn write_outputs(sol: &Solution, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let out = &cfg.output;
    let mut written = Vec::new();

    let path = dir.join(&out.summary);
    let json = serde_json::to_string_pretty(&sol.summary)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(&path, json + "\n")?;
    written.push(path);

    let path = dir.join(&out.queries);
    write_query_table(&sol.summary.queries, sol.summary.dim, &path)?;
    written.push(path);

    if out.write_surface {
        let p = &sol.problem;
        let path = dir.join(&out.surface);
        emit_surface(&sol.u, &p.grid, &p.tp, &p.option, &path)?;
        written.push(path);
    }
    if cfg.flags.dump_operator {
        let path = dir.join(&out.operator);
        let mut w = BufWriter::new(File::create(&path)?);
        sol.operator.write_triplets(&mut w)?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub k: f64,
    pub steps: usize,
    pub satisfied: bool,
    pub prices: Vec<f64>,
}

/// Reruns the pipeline for every penalty rate in `sweep.lambdas`, with
/// American exercise.
pub fn sweep_lambda(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.sweep
        .lambdas
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.option.lambda = lambda;
            c.option.exercise = Exercise::American;
            c.output.write_surface = false;
            let sol = run(&c)?;
            Ok(SweepRow {
                lambda,
                k: sol.summary.k,
                steps: sol.summary.steps,
                satisfied: sol.summary.stability.satisfied,
                prices: sol.summary.queries.iter().map(|q| q.price).collect(),
            })
        })
        .collect()
}

pub fn write_sweep(rows: &[SweepRow], spots: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec![
        "lambda".to_string(),
        "k".into(),
        "steps".into(),
        "stable".into(),
    ];
    header.extend((0..spots.len()).map(|i| format!("price{i}")));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut row = vec![
            sig10(r.lambda),
            sig10(r.k),
            r.steps.to_string(),
            r.satisfied.to_string(),
        ];
        row.extend(r.prices.iter().map(|&p| sig10(p)));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Lattice prices at every query spot: the four-branch tree for two assets,
/// CRR for one.
pub fn oracle_tree(cfg: &RunConfig) -> Result<Vec<QueryPrice>> {
    let model = cfg.market_model()?;
    let option = cfg.basket_option();
    model::validate(&model, &option).into_result()?;
    cfg.queries
        .spots
        .iter()
        .map(|spot| {
            let price = match model.dim() {
                1 => {
                    let single = BasketOption {
                        weights: vec![1.0],
                        strike: option.strike / option.weights[0],
                        ..option.clone()
                    };
                    let p = oracles::crr_price_1d(
                        model.rate,
                        model.assets[0],
                        &single,
                        spot[0],
                        cfg.oracle.tree_steps,
                    )?;
                    p * option.weights[0]
                }
                2 => oracles::tree_price_2asset(
                    &model,
                    &option,
                    spot,
                    TreeParams {
                        steps: cfg.oracle.tree_steps,
                    },
                )?,
                m => {
                    return Err(Error::InvalidInput(format!(
                        "lattice oracle supports one or two assets, got {m}"
                    )))
                }
            };
            Ok(QueryPrice {
                spot: spot.clone(),
                price,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("oracles"))
}

/// European Monte Carlo estimates at every query spot.
pub fn oracle_mc(cfg: &RunConfig) -> Result<Vec<(Vec<f64>, McEstimate)>> {
    let model = cfg.market_model()?;
    let option = cfg.basket_option();
    model::validate(&model, &option).into_result()?;
    let params = McParams {
        paths: cfg.oracle.mc_paths,
        seed: cfg.flags.seed,
        antithetic: cfg.oracle.antithetic,
    };
    cfg.queries
        .spots
        .iter()
        .map(|spot| {
            Ok((
                spot.clone(),
                oracles::mc_price_european(&model, &option, spot, params)?,
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("oracles"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUT50: &str = r#"
[market]
rate = 0.05
rho = 0.6
assets = [{ sigma = 0.3 }, { sigma = 0.2 }]

[option]
kind = "put"
weights = [0.7, 0.3]
strike = 50.0
maturity = 1.0
lambda = 100.0

[grid]
intervals = [16, 16]

[time]
step = 5e-3

[queries]
spots = [[50.0, 50.0], [45.0, 52.5]]
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml_str(PUT50).unwrap();
        assert_eq!(cfg.option.exercise, Exercise::American);
        assert_eq!(cfg.time.step, TimeStep::Fixed(5e-3));
        assert_eq!(cfg.time.backend, BackendChoice::Auto);
        assert_eq!(cfg.output.summary, "summary.json");
        assert!(!cfg.flags.override_stability);
        let grid = cfg.build_grid(2).unwrap();
        assert_eq!(grid.bounds(), &[(-8.0, 8.0), (-8.0, 8.0)]);
        assert_eq!(grid.h(), 1.0);
    }

    #[test]
    fn auto_keyword_and_step_h() {
        let src = PUT50
            .replace("step = 5e-3", "step = \"auto\"")
            .replace("intervals = [16, 16]", "h = 0.2");
        let cfg = RunConfig::from_toml_str(&src).unwrap();
        assert_eq!(cfg.time.step, TimeStep::Auto(AutoTag::Auto));
        assert_eq!(cfg.build_grid(2).unwrap().intervals(), &[80, 80]);
    }

    #[test]
    fn incompatible_h_is_rejected() {
        let src = PUT50.replace("intervals = [16, 16]", "h = 0.3");
        let err = RunConfig::from_toml_str(&src).unwrap_err().to_string();
        assert!(err.contains("line 15"), "{err}");
        assert!(err.contains("not a multiple"), "{err}");
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let src = PUT50.replace("strike = 50.0", "strike = -50.0");
        let err = RunConfig::from_toml_str(&src).unwrap_err().to_string();
        assert!(err.contains("line 10: strike_positive"), "{err}");

        let src = PUT50.replace("rho = 0.6", "rho = 1.0");
        let err = RunConfig::from_toml_str(&src).unwrap_err().to_string();
        assert!(
            err.contains("line 4: correlation_positive_definite"),
            "{err}"
        );
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let src = PUT50.replace("lambda = 100.0", "lambda = = 100.0");
        let err = RunConfig::from_toml_str(&src).unwrap_err().to_string();
        assert!(err.contains("line 12"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let src = PUT50.replace("lambda = 100.0", "lambda = 100.0\npenalty = 3");
        assert!(RunConfig::from_toml_str(&src).is_err());
    }

    #[test]
    fn node_query_is_exact_and_linear_fields_interpolate_exactly() {
        let cfg = RunConfig::from_toml_str(PUT50).unwrap();
        let p = cfg.problem().unwrap();
        let u: Vec<f64> = (0..p.grid.total())
            .map(|j| {
                let y = p.grid.node_y(j).unwrap();
                0.3 + 0.02 * y[0] - 0.05 * y[1]
            })
            .collect();
        // (50, 50) is the node y = 0
        let centre = p.grid.flatten(&[8, 8]).unwrap();
        let at_node = query_price(&u, &p.grid, &p.tp, &p.option, &[50.0, 50.0]).unwrap();
        assert_eq!(at_node, 50.0 * u[centre]);
        for spot in [[45.0, 52.5], [61.0, 38.0], [50.5, 49.9]] {
            let y = p.tp.forward_point(&spot).unwrap();
            let exact = 50.0 * (0.3 + 0.02 * y[0] - 0.05 * y[1]);
            let got = query_price(&u, &p.grid, &p.tp, &p.option, &spot).unwrap();
            assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
        }
    }

    #[test]
    fn far_spot_is_out_of_domain() {
        let cfg = RunConfig::from_toml_str(PUT50).unwrap();
        let p = cfg.problem().unwrap();
        let u = vec![0.0; p.grid.total()];
        let r = query_price(&u, &p.grid, &p.tp, &p.option, &[1e6, 50.0]);
        assert!(matches!(r, Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn unstable_run_needs_override() {
        let src = PUT50.replace("step = 5e-3", "step = 0.25");
        let cfg = RunConfig::from_toml_str(&src).unwrap();
        let err = run(&cfg).unwrap_err();
        assert!(matches!(err.root(), Error::Unstable { .. }));
        assert!(err.to_string().starts_with("stability:"));
        let mut cfg = cfg;
        cfg.flags.override_stability = true;
        assert!(run(&cfg).is_ok());
    }
}

//! Ergodic BSDE: the constant `λ` and the function `v` (with `v(0) = 0`)
//! solving `λ = Lv + f(x, ∇v σ)`, `∂v/∂n + g = 0`.
//!
//! Two estimators are provided. The discounted one solves the BSDE with
//! driver `f - αy` on a truncated horizon `T_h` for a decreasing sweep of
//! `α` and extrapolates `αY^α(0)` and `Y^α(x) - Y^α(0)` linearly to `α = 0`.
//! The differencing one reads `λ` off the growth of `u(T, 0)` between two
//! horizons and takes `v(x) = u(T, x) - u(T, 0)` at the larger one.
//!
//! All pointwise runs of a sweep share the master seed, so differences
//! across `x`, `α` and `T` are taken under common random numbers.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bsde::{solve_finite_horizon, solve_with_discount, BsdeConfig, NeumannProblem};
use crate::error::{LabError, Result};
use crate::field::{Driver, ScalarField};
use crate::geometry::{dist, DomainSpec};
use crate::stats::{fit_line, Estimate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgodicMethod {
    Discounted,
    #[default]
    Differencing,
}

impl ErgodicMethod {
    pub fn name(self) -> &'static str {
        match self {
            ErgodicMethod::Discounted => "discounted",
            ErgodicMethod::Differencing => "differencing",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ErgodicConfig {
    pub method: ErgodicMethod,
    /// Discount sweep, strictly decreasing, each in `(0, 1]`.
    pub alphas: Vec<f64>,
    /// `T_h = horizon_factor / α`; must be at least 5.
    pub horizon_factor: f64,
    /// Horizon pair `(T1, T2)` for differencing, `T2 - T1 >= 1`.
    pub horizons: (f64, f64),
    /// Spacing of the regression dates.
    pub date_step: f64,
    /// Points where `v` is estimated (the origin is always added).
    pub x_grid: Vec<Vec<f64>>,
    /// Solve the zero-flux problem left after subtracting the Helmholtz lift.
    pub lift: Option<f64>,
    /// Flag the run when `sup |v|` exceeds this.
    pub v_bound: f64,
    pub bsde: BsdeConfig,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        ErgodicConfig {
            method: ErgodicMethod::Differencing,
            alphas: vec![0.5, 0.25, 0.125],
            horizon_factor: 5.0,
            horizons: (3.0, 5.0),
            date_step: 0.02,
            x_grid: [-1.0, -0.5, 0.5, 1.0].iter().map(|&x| vec![x]).collect(),
            lift: None,
            v_bound: 1e3,
            bsde: BsdeConfig { substeps: 1, ..Default::default() },
        }
    }
}

/// `Y^α` at a set of points.
#[derive(Clone, Debug)]
pub struct DiscountedValue {
    pub alpha: f64,
    pub horizon: f64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Estimate>,
    /// Pathwise samples per point (shared paths across points).
    pub pathwise: Vec<Vec<f64>>,
    pub flags: Vec<String>,
}

/// One row of the sweep diagnostics: the sweep parameter (`α` or `T`) and
/// the corresponding `λ` estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub lambda: Estimate,
}

#[derive(Clone, Debug)]
pub struct ErgodicSolution {
    pub lambda: Estimate,
    /// Grid points, origin first.
    pub x_grid: Vec<Vec<f64>>,
    /// `v` on the grid; `v[0] = 0` at the origin.
    pub v: Vec<f64>,
    pub v_se: Vec<f64>,
    pub method: ErgodicMethod,
    pub sweep: Vec<SweepRow>,
    /// Largest difference quotient of `v` over grid pairs.
    pub lipschitz: f64,
    pub flags: Vec<String>,
}

impl ErgodicSolution {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Rows `x_1..x_d,v` in grid order.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.x_grid.first().map_or(1, |x| x.len());
        let header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
        writeln!(w, "{},v", header.join(","))?;
        for (x, v) in self.x_grid.iter().zip(&self.v) {
            let coords: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{v}", coords.join(","))?;
        }
        Ok(())
    }

    /// `key = value` sidecar.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method = \"{}\"", self.method.name());
        let _ = writeln!(s, "lambda = {}", self.lambda.mean);
        let _ = writeln!(s, "lambda_se = {}", self.lambda.se);
        let _ = writeln!(s, "lipschitz = {}", self.lipschitz);
        let params: Vec<String> = self.sweep.iter().map(|r| r.param.to_string()).collect();
        let lams: Vec<String> = self.sweep.iter().map(|r| r.lambda.mean.to_string()).collect();
        let _ = writeln!(s, "sweep_param = [{}]", params.join(", "));
        let _ = writeln!(s, "sweep_lambda = [{}]", lams.join(", "));
        let flags: Vec<String> = self.flags.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(s, "flags = [{}]", flags.join(", "));
        s
    }

    /// Interior residual of `λ = ½σ²v'' + b v' + f(x, σv')` by central
    /// differences on a uniform 1D grid. `None` if the grid is not uniform 1D.
    pub fn pde_residual(&self, problem: &NeumannProblem) -> Option<f64> {
        if problem.dim() != 1 {
            return None;
        }
        let mut pts: Vec<(f64, f64)> = self.x_grid.iter().map(|x| x[0]).zip(self.v.iter().copied()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() < 3 {
            return None;
        }
        let h = pts[1].0 - pts[0].0;
        if pts.windows(2).any(|w| ((w[1].0 - w[0].0) - h).abs() > 1e-9) {
            return None;
        }
        let sigma = problem.coeffs.sigma.rows()[0];
        let mut b = [0.0];
        let mut worst = 0.0f64;
        for w in pts.windows(3) {
            let (x, v0, v1, v2) = (w[1].0, w[0].1, w[1].1, w[2].1);
            let d1 = (v2 - v0) / (2.0 * h);
            let d2 = (v2 - 2.0 * v1 + v0) / (h * h);
            problem.coeffs.drift.eval(&[x], &mut b);
            let rhs = 0.5 * sigma * sigma * d2 + b[0] * d1 + problem.driver.eval(&[x], &[sigma * d1]);
            worst = worst.max((rhs - self.lambda.mean).abs());
        }
        Some(worst)
    }
}

/// Closed-form solution of `v'' = α_h v` on `[lo, hi]` with
/// `v'(hi) = g(hi)` and `v'(lo) = -g(lo)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelmholtzLift {
    pub k: f64,
    pub a: f64,
    pub b: f64,
}

impl HelmholtzLift {
    pub fn value(&self, x: f64) -> f64 {
        self.a * (self.k * x).cosh() + self.b * (self.k * x).sinh()
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.k * (self.a * (self.k * x).sinh() + self.b * (self.k * x).cosh())
    }

    pub fn curvature(&self, x: f64) -> f64 {
        self.k * self.k * self.value(x)
    }

    /// `(v¹, v¹')` on `xs`.
    pub fn sample(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (xs.iter().map(|&x| self.value(x)).collect(), xs.iter().map(|&x| self.slope(x)).collect())
    }
}

pub fn helmholtz_lift(lo: f64, hi: f64, g_lo: f64, g_hi: f64, alpha_h: f64) -> Result<HelmholtzLift> {
    if !(alpha_h > 0.0) || !alpha_h.is_finite() {
        return Err(LabError::Parameter(format!("alpha_h must be positive, got {alpha_h}")));
    }
    if !(hi > lo) {
        return Err(LabError::Parameter(format!("empty interval [{lo}, {hi}]")));
    }
    let k = alpha_h.sqrt();
    // [k sinh(k hi), k cosh(k hi); k sinh(k lo), k cosh(k lo)] (a, b) = (g_hi, -g_lo)
    let (m11, m12) = (k * (k * hi).sinh(), k * (k * hi).cosh());
    let (m21, m22) = (k * (k * lo).sinh(), k * (k * lo).cosh());
    let det = m11 * m22 - m12 * m21;
    if det.abs() < 1e-300 {
        return Err(LabError::Numerical("singular Helmholtz boundary system".into()));
    }
    let (r1, r2) = (g_hi, -g_lo);
    Ok(HelmholtzLift { k, a: (r1 * m22 - m12 * r2) / det, b: (m11 * r2 - m21 * r1) / det })
}

/// The zero-flux problem for `ṽ = v - v¹`, and `v¹`. The lifted driver is
/// `f(x, z̃ + σv¹') + ½σ²v¹'' + b v¹' - α v¹`.
pub fn lifted_problem(problem: &NeumannProblem, alpha_h: f64, alpha: f64) -> Result<(NeumannProblem, HelmholtzLift)> {
    if problem.dim() != 1 {
        return Err(LabError::Precondition("the Helmholtz lift is one-dimensional".into()));
    }
    let (lo, hi) = match problem.domain().spec() {
        DomainSpec::Interval { lo, hi } => (lo, hi),
        _ => return Err(LabError::Precondition("the Helmholtz lift needs an interval domain".into())),
    };
    let lift = helmholtz_lift(lo, hi, problem.boundary_g.eval(&[lo]), problem.boundary_g.eval(&[hi]), alpha_h)?;
    let sigma = problem.coeffs.sigma.rows()[0];
    let drift = problem.coeffs.drift.clone();
    let source = Arc::new(move |x: f64| {
        let mut b = [0.0];
        drift.eval(&[x], &mut b);
        0.5 * sigma * sigma * lift.curvature(x) + b[0] * lift.slope(x) - alpha * lift.value(x)
    });
    let f = problem.driver.clone();
    let label = format!("lift({})", f.label);
    let driver = if f.z_independent {
        let src = source.clone();
        Driver::of_x(label, move |x| f.eval(x, &[0.0]) + src(x[0]))
    } else {
        let lip = f.z_lipschitz;
        Driver::new(label, lip, move |x, z| f.eval(x, &[z[0] + sigma * lift.slope(x[0])]) + source(x[0]))
    };
    let h = problem.terminal_h.clone();
    let lifted = problem
        .clone()
        .with_driver(driver)
        .with_boundary(ScalarField::zero())
        .with_terminal(ScalarField::new(format!("{}-lift", h.label), move |x| h.eval(x) - lift.value(x[0])));
    Ok((lifted, lift))
}

fn dates_for(horizon: f64, date_step: f64) -> usize {
    ((horizon / date_step).round() as usize).max(1)
}

/// `Y^α(x)` on `points`, solving on `[0, T_h]` with zero terminal value.
pub fn solve_discounted(
    problem: &NeumannProblem,
    alpha: f64,
    horizon: f64,
    points: &[Vec<f64>],
    date_step: f64,
    lift: Option<f64>,
    cfg: &BsdeConfig,
) -> Result<DiscountedValue> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(LabError::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let needed = 5.0 / alpha;
    if horizon < needed * (1.0 - 1e-12) {
        return Err(LabError::Precondition(format!(
            "truncation horizon {horizon} too small for alpha = {alpha}: need T_h >= {needed}"
        )));
    }
    let base = problem.clone().with_terminal(ScalarField::zero());
    let (solve_on, lift) = match lift {
        Some(alpha_h) => {
            let (p, l) = lifted_problem(&base, alpha_h, alpha)?;
            (p, Some(l))
        }
        None => (base, None),
    };
    let run_cfg = BsdeConfig { n_steps: dates_for(horizon, date_step), ..cfg.clone() };
    let mut values = Vec::with_capacity(points.len());
    let mut pathwise = Vec::with_capacity(points.len());
    let mut flags = Vec::new();
    for x in points {
        let sol = solve_with_discount(&solve_on, horizon, x, &run_cfg, alpha)?;
        flags.extend(sol.flags.iter().map(|f| format!("alpha={alpha} x={x:?}: {f}")));
        let shift = lift.map_or(0.0, |l| l.value(x[0]));
        values.push(Estimate { mean: sol.y0.mean + shift, se: sol.y0.se });
        pathwise.push(sol.pathwise);
    }
    Ok(DiscountedValue { alpha, horizon, points: points.to_vec(), values, pathwise, flags })
}

fn grid_with_origin(cfg: &ErgodicConfig, d: usize) -> Result<Vec<Vec<f64>>> {
    let origin = vec![0.0; d];
    let mut grid = vec![origin.clone()];
    for x in &cfg.x_grid {
        if x.len() != d {
            return Err(LabError::Parameter(format!("grid point {x:?} has the wrong dimension")));
        }
        if *x != origin {
            grid.push(x.clone());
        }
    }
    Ok(grid)
}

fn lipschitz_probe(grid: &[Vec<f64>], v: &[f64]) -> f64 {
    let mut c = 0.0f64;
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let dx = dist(&grid[i], &grid[j]);
            if dx > 0.0 {
                c = c.max((v[i] - v[j]).abs() / dx);
            }
        }
    }
    c
}

/// Weights `w` with `Σ w_i y_i` the intercept of the LS line through `(p_i, y_i)`.
fn intercept_weights(params: &[f64]) -> Vec<f64> {
    let n = params.len() as f64;
    let mx = params.iter().sum::<f64>() / n;
    let sxx: f64 = params.iter().map(|p| (p - mx) * (p - mx)).sum();
    params.iter().map(|p| 1.0 / n - mx * (p - mx) / sxx).collect()
}

/// Intercept of the LS line through per-path samples `ys[i][path]`, with
/// the standard error of the path-by-path combination.
fn extrapolate_paths(params: &[f64], ys: &[Vec<f64>]) -> Estimate {
    let w = intercept_weights(params);
    let n = ys[0].len();
    let combined: Vec<f64> = (0..n).map(|p| w.iter().zip(ys).map(|(w, y)| w * y[p]).sum()).collect();
    Estimate::from_samples(&combined)
}

/// `λ` and `v` by the configured method.
pub fn solve_ergodic(problem: &NeumannProblem, cfg: &ErgodicConfig) -> Result<ErgodicSolution> {
    let d = problem.dim();
    if !problem.domain().contains_origin() {
        return Err(LabError::Precondition("the normalization v(0) = 0 needs 0 in closure(G)".into()));
    }
    if !(cfg.date_step > 0.0) {
        return Err(LabError::Parameter("date_step must be positive".into()));
    }
    let grid = grid_with_origin(cfg, d)?;
    let mut flags = Vec::new();
    let (lambda, v, v_se, sweep) = match cfg.method {
        ErgodicMethod::Discounted => discounted(problem, cfg, &grid, &mut flags)?,
        ErgodicMethod::Differencing => differencing(problem, cfg, &grid, &mut flags)?,
    };
    let lipschitz = lipschitz_probe(&grid, &v);
    let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sup > cfg.v_bound {
        flags.push(format!("sup |v| = {sup} exceeds the bound {}", cfg.v_bound));
    }
    for f in &flags {
        log::warn!("ebsde: {f}");
    }
    Ok(ErgodicSolution { lambda, x_grid: grid, v, v_se, method: cfg.method, sweep, lipschitz, flags })
}

type Parts = (Estimate, Vec<f64>, Vec<f64>, Vec<SweepRow>);

fn discounted(problem: &NeumannProblem, cfg: &ErgodicConfig, grid: &[Vec<f64>], flags: &mut Vec<String>) -> Result<Parts> {
    let alphas = &cfg.alphas;
    if alphas.len() < 2 || alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Precondition("the alpha sweep must hold at least two strictly decreasing values".into()));
    }
    if cfg.horizon_factor < 5.0 {
        return Err(LabError::Precondition(format!("horizon_factor {} < 5", cfg.horizon_factor)));
    }
    let mut runs = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let run = solve_discounted(problem, alpha, cfg.horizon_factor / alpha, grid, cfg.date_step, cfg.lift, &cfg.bsde)?;
        flags.extend(run.flags.iter().cloned());
        runs.push(run);
    }
    let scaled: Vec<Estimate> =
        runs.iter().map(|r| Estimate { mean: r.alpha * r.values[0].mean, se: r.alpha * r.values[0].se }).collect();
    let sweep: Vec<SweepRow> = alphas.iter().zip(&scaled).map(|(&a, &e)| SweepRow { param: a, lambda: e }).collect();
    let w = intercept_weights(alphas);
    let intercept: f64 = w.iter().zip(&scaled).map(|(w, e)| w * e.mean).sum();
    let paths: Vec<Vec<f64>> = runs.iter().map(|r| r.pathwise[0].iter().map(|y| r.alpha * y).collect()).collect();
    let lambda = Estimate { mean: intercept, se: extrapolate_paths(alphas, &paths).se };
    if let (true, Some(fit)) = (alphas.len() > 2, fit_line(alphas, &scaled.iter().map(|e| e.mean).collect::<Vec<_>>())) {
        for (a, e) in alphas.iter().zip(&scaled) {
            let r = (fit.intercept + fit.slope * a - e.mean).abs();
            if r > (5.0 * e.se).max(1e-2 * (1.0 + intercept.abs())) {
                flags.push(format!("alpha = {a}: alpha*Y departs from the linear ansatz by {r:.2e}"));
            }
        }
    }
    let mut v = vec![0.0; grid.len()];
    let mut v_se = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        let means: f64 = w.iter().zip(&runs).map(|(w, r)| w * (r.values[i].mean - r.values[0].mean)).sum();
        let diffs: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.pathwise[i].iter().zip(&r.pathwise[0]).map(|(a, b)| a - b).collect())
            .collect();
        v[i] = means;
        v_se[i] = extrapolate_paths(alphas, &diffs).se;
    }
    Ok((lambda, v, v_se, sweep))
}

fn differencing(problem: &NeumannProblem, cfg: &ErgodicConfig, grid: &[Vec<f64>], flags: &mut Vec<String>) -> Result<Parts> {
    let (t1, t2) = cfg.horizons;
    if !(t1 > 0.0) || t2 - t1 < 1.0 {
        return Err(LabError::Precondition(format!("need 0 < T1 and T2 - T1 >= 1, got ({t1}, {t2})")));
    }
    let lifted = cfg.lift.map(|alpha_h| lifted_problem(problem, alpha_h, 0.0)).transpose()?;
    let run = |t: f64, x: &[f64], flags: &mut Vec<String>| -> Result<(Estimate, Vec<f64>)> {
        let c = BsdeConfig { n_steps: dates_for(t, cfg.date_step), ..cfg.bsde.clone() };
        let (p, shift) = match &lifted {
            Some((p, l)) => (p, l.value(x[0])),
            None => (problem, 0.0),
        };
        let s = solve_finite_horizon(p, t, x, &c)?;
        flags.extend(s.flags.iter().map(|f| format!("T={t} x={x:?}: {f}")));
        Ok((Estimate { mean: s.y0.mean + shift, se: s.y0.se }, s.pathwise))
    };
    let (u1, p1) = run(t1, &grid[0], flags)?;
    let mut at_t2 = Vec::with_capacity(grid.len());
    for x in grid {
        at_t2.push(run(t2, x, flags)?);
    }
    let (u2, p2) = &at_t2[0];
    let crn_se = |a: &[f64], b: &[f64]| {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Estimate::from_samples(&diffs).se
    };
    let lambda = Estimate { mean: (u2.mean - u1.mean) / (t2 - t1), se: crn_se(p2, &p1) / (t2 - t1) };
    let sweep = vec![
        SweepRow { param: t1, lambda: Estimate { mean: u1.mean / t1, se: u1.se / t1 } },
        SweepRow { param: t2, lambda: Estimate { mean: u2.mean / t2, se: u2.se / t2 } },
    ];
    let v: Vec<f64> = at_t2.iter().map(|(e, _)| e.mean - u2.mean).collect();
    let v_se: Vec<f64> = at_t2.iter().map(|(_, p)| crn_se(p, p2)).collect();
    Ok((lambda, v, v_se, sweep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(method: ErgodicMethod) -> ErgodicConfig {
        ErgodicConfig {
            method,
            horizons: (1.0, 2.0),
            date_step: 0.05,
            bsde: BsdeConfig { n_paths: 1000, substeps: 1, seed: 3, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn helmholtz_closed_forms() {
        let l = helmholtz_lift(-1.0, 1.0, 0.0, 0.0, 2.0).unwrap();
        assert_eq!((l.a, l.b), (0.0, 0.0));
        let l = helmholtz_lift(-1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        for &x in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!((l.value(x) - x.cosh() / 1f64.sinh()).abs() < 1e-12);
            let h = 1e-4;
            let d2 = (l.value(x + h) - 2.0 * l.value(x) + l.value(x - h)) / (h * h);
            assert!((d2 - l.value(x)).abs() < 1e-6);
            assert!((l.curvature(x) - l.value(x)).abs() < 1e-10);
        }
        assert!((l.slope(1.0) - 1.0).abs() < 1e-12 && (l.slope(-1.0) + 1.0).abs() < 1e-12);
        let l = helmholtz_lift(-0.5, 2.0, 0.3, -1.2, 0.7).unwrap();
        assert!((l.slope(2.0) + 1.2).abs() < 1e-12 && (l.slope(-0.5) + 0.3).abs() < 1e-12);
        assert!(helmholtz_lift(-1.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn constant_driver_gives_lambda_c_and_flat_v() {
        let p = NeumannProblem::benchmark().with_boundary(ScalarField::zero()).with_driver(Driver::constant(0.3));
        for m in [ErgodicMethod::Differencing, ErgodicMethod::Discounted] {
            let cfg = ErgodicConfig { horizon_factor: 12.0, ..quick(m) };
            let s = solve_ergodic(&p, &cfg).unwrap();
            assert!((s.lambda.mean - 0.3).abs() < 1e-5, "{m:?}: {}", s.lambda.mean);
            assert!(s.v.iter().all(|v| v.abs() < 1e-9));
            assert_eq!(s.v[0], 0.0);
        }
    }

    #[test]
    fn discounted_preconditions() {
        let p = NeumannProblem::benchmark();
        let cfg = BsdeConfig::default();
        let err = solve_discounted(&p, 0.5, 9.0, &[vec![0.0]], 0.05, None, &cfg).unwrap_err();
        assert!(matches!(err, LabError::Precondition(m) if m.contains("10")));
        assert!(solve_discounted(&p, 1.5, 10.0, &[vec![0.0]], 0.05, None, &cfg).is_err());
        let mut c = quick(ErgodicMethod::Discounted);
        c.alphas = vec![0.25, 0.5];
        assert!(solve_ergodic(&p, &c).is_err());
        let mut c = quick(ErgodicMethod::Differencing);
        c.horizons = (2.0, 2.5);
        assert!(solve_ergodic(&p, &c).is_err());
    }

    #[test]
    fn discounted_constant_driver_matches_scalar_ode() {
        let p = NeumannProblem::benchmark().with_boundary(ScalarField::zero()).with_driver(Driver::constant(1.0));
        let cfg = BsdeConfig { n_paths: 200, substeps: 1, picard_iters: 30, ..Default::default() };
        let r = solve_discounted(&p, 0.5, 10.0, &[vec![0.0]], 0.01, None, &cfg).unwrap();
        let exact = (1.0 - (-5.0f64).exp()) / 0.5;
        assert!((r.values[0].mean - exact).abs() < 1e-2, "{}", r.values[0].mean);
    }

    #[test]
    fn lifted_and_plain_discounted_agree() {
        let p = NeumannProblem::benchmark();
        let cfg = BsdeConfig { n_paths: 4000, substeps: 1, picard_iters: 5, seed: 9, ..Default::default() };
        let pts = vec![vec![0.0], vec![0.6]];
        let plain = solve_discounted(&p, 1.0, 5.0, &pts, 0.01, None, &cfg).unwrap();
        let lifted = solve_discounted(&p, 1.0, 5.0, &pts, 0.01, Some(1.0), &cfg).unwrap();
        for (a, b) in plain.values.iter().zip(&lifted.values) {
            assert!(a.agrees_with(b, 4.0, 2e-2), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn outputs_render() {
        let p = NeumannProblem::benchmark().with_boundary(ScalarField::zero()).with_driver(Driver::constant(0.3));
        let s = solve_ergodic(&p, &quick(ErgodicMethod::Differencing)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_1,v\n0,0\n"));
        assert_eq!(text.lines().count(), 1 + s.x_grid.len());
        assert!(s.summary().contains("method = \"differencing\""));
        assert!(s.pde_residual(&p).unwrap() < 1e-9);
    }
}

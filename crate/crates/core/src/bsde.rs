//! Regression Monte Carlo for the finite-horizon generalized BSDE
//!
//! ```text
//! Y_s = h(X_T) + ∫_s^T f(X_r, Z_r) dr + ∫_s^T g(X_r) dK_r - ∫_s^T Z_r dW_r
//! ```
//!
//! driven by the reflected diffusion `(X, K)`. `Y_0 = u(T, x0)` where `u`
//! solves `∂u/∂t = Lu + f(x, ∇u σ)` with `∂u/∂n + g = 0` (inward normal)
//! and `u(0, ·) = h`.
//!
//! The forward cloud is simulated on a fine grid (`substeps` Euler steps per
//! regression date) and only regression dates are stored, together with the
//! aggregated Brownian increment and the accumulated `∫ g dK` of each
//! interval. The backward sweep is the explicit one-step scheme
//!
//! ```text
//! Z_k = E[(Ŷ_{k+1}(X_{k+1}) - Ŷ_{k+1}(X_k)) ΔW_kᵀ | X_k] / Δ
//! Y_k = E[Ŷ_{k+1}(X_{k+1}) + ∫ g dK | X_k] + f(X_k, Z_k) Δ
//! ```
//!
//! (subtracting `Ŷ_{k+1}(X_k)` leaves the conditional mean unchanged and
//! removes most of the variance of the `Z` target).

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, LabError, Result};
use crate::exec::{chunk_ranges, Exec, CHUNK};
use crate::field::{Driver, ScalarField, VectorField};
use crate::geometry::ConvexDomain;
use crate::regression::{least_squares, BasisSpec, Design, Fit};
use crate::rng::{derive_seed, PathRng};
use crate::sde::{euler_step, ReflectionScheme, Scratch, SdeCoefficients, Sigma};
use crate::stats::Estimate;

/// Coefficients `(b, σ, f, g, h)` of a Neumann problem on a convex domain.
#[derive(Clone, Debug)]
pub struct NeumannProblem {
    pub coeffs: SdeCoefficients,
    pub driver: Driver,
    pub boundary_g: ScalarField,
    pub terminal_h: ScalarField,
}

impl NeumannProblem {
    pub fn new(coeffs: SdeCoefficients, driver: Driver, boundary_g: ScalarField, terminal_h: ScalarField) -> Result<Self> {
        if coeffs.domain.is_none() {
            return Err(LabError::Parameter("a Neumann problem needs a domain".into()));
        }
        Ok(NeumannProblem { coeffs, driver, boundary_g, terminal_h })
    }

    /// `b = 0`, `σ = 1`, `f = 0`, `g = 1`, `h = 0` on `[-1, 1]`.
    pub fn benchmark() -> Self {
        let coeffs = SdeCoefficients::reflected(
            VectorField::zero(1),
            Sigma::scalar(1, 1.0).expect("unit sigma"),
            ConvexDomain::unit_interval(),
        )
        .expect("benchmark coefficients");
        NeumannProblem {
            coeffs,
            driver: Driver::zero(),
            boundary_g: ScalarField::constant(1.0),
            terminal_h: ScalarField::zero(),
        }
    }

    pub fn with_driver(mut self, driver: Driver) -> Self {
        self.driver = driver;
        self
    }

    pub fn with_boundary(mut self, g: ScalarField) -> Self {
        self.boundary_g = g;
        self
    }

    pub fn with_terminal(mut self, h: ScalarField) -> Self {
        self.terminal_h = h;
        self
    }

    pub fn domain(&self) -> &ConvexDomain {
        self.coeffs.domain().expect("checked at construction")
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    /// Spot-check the Lipschitz-in-`z` bound of the driver and finiteness of
    /// `g` and `h` on random probe points.
    pub fn spot_check(&self, n_probe: usize, seed: u64) -> Result<()> {
        let d = self.dim();
        let mut rng = PathRng::new(seed, 0);
        let mut x = vec![0.0; d];
        let mut z1 = vec![0.0; d];
        let mut z2 = vec![0.0; d];
        for _ in 0..n_probe {
            self.domain().sample_uniform(&mut rng, &mut x);
            for j in 0..d {
                z1[j] = 10.0 * (rng.uniform() - 0.5);
                z2[j] = 10.0 * (rng.uniform() - 0.5);
            }
            let df = (self.driver.eval(&x, &z1) - self.driver.eval(&x, &z2)).abs();
            let dz = z1.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if df > self.driver.z_lipschitz * dz + 1e-12 {
                return Err(LabError::Precondition(format!(
                    "driver {} breaks its Lipschitz bound {} at x = {x:?}",
                    self.driver.label, self.driver.z_lipschitz
                )));
            }
            if !self.boundary_g.eval(&x).is_finite() || !self.terminal_h.eval(&x).is_finite() {
                return Err(LabError::Precondition(format!("g or h not finite at {x:?}")));
            }
        }
        Ok(())
    }
}

/// Where the forward cloud starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudInit {
    /// Every path starts at `x0` (pointwise estimator).
    #[default]
    Point,
    /// Uniform draws over `closure(G)` (surface estimator).
    Uniform,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BsdeConfig {
    pub n_paths: usize,
    /// Regression dates.
    pub n_steps: usize,
    /// Euler steps per regression interval.
    pub substeps: usize,
    pub basis: BasisSpec,
    pub picard_iters: usize,
    /// Cap on `|Z|`; breaches are clipped and flag the run.
    pub z_cap: f64,
    pub scheme: ReflectionScheme,
    pub init: CloudInit,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        BsdeConfig {
            n_paths: 10_000,
            n_steps: 100,
            substeps: 2,
            basis: BasisSpec::default_for(1),
            picard_iters: 1,
            z_cap: 50.0,
            scheme: ReflectionScheme::BridgeCorrected,
            init: CloudInit::Point,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

impl BsdeConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.n_paths < 2 || self.n_steps == 0 || self.substeps == 0 {
            return Err(LabError::Parameter("need n_paths >= 2, n_steps >= 1, substeps >= 1".into()));
        }
        if !(self.z_cap > 0.0) {
            return Err(LabError::Parameter("z_cap must be positive".into()));
        }
        self.basis.validate(dim)
    }
}

/// Regression surface at one date: `Ŷ_k(x) = c (m(x) + Δ f(x, ẑ(x)))`.
#[derive(Clone, Debug)]
pub struct StepFit {
    pub t: f64,
    pub dt: f64,
    /// Targets: conditional mean, then `z_1..z_d`.
    pub fit: Fit,
    /// Per-step discount factor from the Picard iterations (1 without discount).
    pub discount: f64,
    /// True when the driver term was integrated pathwise and is already in the mean.
    pub pathwise_driver: bool,
}

#[derive(Clone, Debug)]
pub struct BsdeSolution {
    pub dim: usize,
    pub horizon: f64,
    /// Regression dates `t_0 = 0 < ... < t_N = T`.
    pub time_grid: Vec<f64>,
    pub basis: BasisSpec,
    pub steps: Vec<StepFit>,
    pub y0: Estimate,
    pub z0: Vec<f64>,
    /// Per-path values of the pathwise estimator of `Y_0`, in path order.
    /// Runs sharing a seed share paths, so differences of these samples give
    /// standard errors under common random numbers.
    pub pathwise: Vec<f64>,
    /// `E[K_T]`.
    pub mean_local_time: f64,
    pub flags: Vec<String>,
    driver: Driver,
    z_cap: f64,
    domain: ConvexDomain,
}

impl BsdeSolution {
    fn z_at(&self, k: usize, x: &[f64], buf: &mut [f64], z: &mut [f64]) {
        let s = &self.steps[k];
        for j in 0..self.dim {
            z[j] = s.fit.predict_with(1 + j, x, buf).clamp(-self.z_cap, self.z_cap);
        }
    }

    /// `Ŷ_k(x)`.
    pub fn y_at(&self, k: usize, x: &[f64]) -> f64 {
        let s = &self.steps[k];
        let mut buf = vec![0.0; s.fit.basis.len()];
        let mut z = vec![0.0; self.dim];
        let m = s.fit.predict_with(0, x, &mut buf);
        let f = if s.pathwise_driver {
            0.0
        } else {
            self.z_at(k, x, &mut buf, &mut z);
            s.dt * self.driver.eval(x, &z)
        };
        s.discount * (m + f)
    }

    /// `Ẑ_k(x)`.
    pub fn z(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut buf = vec![0.0; self.steps[k].fit.basis.len()];
        let mut z = vec![0.0; self.dim];
        self.z_at(k, x, &mut buf, &mut z);
        z
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Per-chunk forward cloud; arrays are date-major inside the chunk.
struct ChunkCloud {
    n: usize,
    x: Vec<f64>,
    dw: Vec<f64>,
    bnd: Vec<f64>,
    fint: Vec<f64>,
    k_total: Vec<f64>,
    g_max: f64,
}

impl ChunkCloud {
    fn x_at(&self, k: usize, d: usize) -> &[f64] {
        &self.x[k * self.n * d..(k + 1) * self.n * d]
    }
}

struct Forward<'a> {
    problem: &'a NeumannProblem,
    cfg: &'a BsdeConfig,
    dates: Vec<f64>,
    pathwise_driver: bool,
}

impl Forward<'_> {
    fn simulate(&self, x0: &[f64]) -> Vec<ChunkCloud> {
        let d = self.problem.dim();
        let n_dates = self.dates.len() - 1;
        let init_seed = derive_seed(self.cfg.seed, "cloud-init");
        let chunks = chunk_ranges(self.cfg.n_paths, CHUNK);
        self.cfg.exec.map_slice(&chunks, |range| {
            let n = range.len();
            let mut c = ChunkCloud {
                n,
                x: vec![0.0; (n_dates + 1) * n * d],
                dw: vec![0.0; n_dates * n * d],
                bnd: vec![0.0; n_dates * n],
                fint: if self.pathwise_driver { vec![0.0; n_dates * n] } else { Vec::new() },
                k_total: vec![0.0; n],
                g_max: 0.0,
            };
            let mut s = Scratch::new(d);
            let mut x = vec![0.0; d];
            let mut dw = vec![0.0; d];
            let zero_z = vec![0.0; d];
            for (i, p) in range.clone().enumerate() {
                match self.cfg.init {
                    CloudInit::Point => x.copy_from_slice(x0),
                    CloudInit::Uniform => {
                        let mut r = PathRng::new(init_seed, p as u64);
                        self.problem.domain().sample_uniform(&mut r, &mut x);
                    }
                }
                c.x[i * d..(i + 1) * d].copy_from_slice(&x);
                let mut rng = PathRng::new(self.cfg.seed, p as u64);
                for k in 0..n_dates {
                    let dt = (self.dates[k + 1] - self.dates[k]) / self.cfg.substeps as f64;
                    let mut bnd = 0.0;
                    let mut fint = 0.0;
                    let dw_acc = &mut c.dw[(k * n + i) * d..(k * n + i + 1) * d];
                    for _ in 0..self.cfg.substeps {
                        if self.pathwise_driver {
                            fint += self.problem.driver.eval(&x, &zero_z) * dt;
                        }
                        let dk = euler_step(&self.problem.coeffs, self.cfg.scheme, &mut x, None, dt, &mut rng, &mut dw, &mut s);
                        for j in 0..d {
                            dw_acc[j] += dw[j];
                        }
                        if dk > 0.0 {
                            let g = self.problem.boundary_g.eval(&x);
                            c.g_max = c.g_max.max(g.abs());
                            bnd += g * dk;
                            c.k_total[i] += dk;
                        }
                    }
                    c.bnd[k * n + i] = bnd;
                    if self.pathwise_driver {
                        c.fint[k * n + i] = fint;
                    }
                    c.x[((k + 1) * n + i) * d..((k + 1) * n + i + 1) * d].copy_from_slice(&x);
                }
            }
            c
        })
    }
}

/// Solve the finite-horizon BSDE and return `Y_0 = u(T, x0)`.
pub fn solve_finite_horizon(problem: &NeumannProblem, horizon: f64, x0: &[f64], cfg: &BsdeConfig) -> Result<BsdeSolution> {
    solve_with_discount(problem, horizon, x0, cfg, 0.0)
}

/// Same backward scheme with the extra driver term `-alpha * y`.
pub(crate) fn solve_with_discount(
    problem: &NeumannProblem,
    horizon: f64,
    x0: &[f64],
    cfg: &BsdeConfig,
    alpha: f64,
) -> Result<BsdeSolution> {
    let d = problem.dim();
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(LabError::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if x0.len() != d {
        return Err(LabError::Parameter(format!("x0 has dimension {}, expected {d}", x0.len())));
    }
    check_finite(x0, "x0")?;
    if !problem.domain().contains(x0) {
        return Err(LabError::Precondition(format!("x0 = {x0:?} is outside closure(G)")));
    }
    cfg.validate(d)?;
    if alpha > 0.0 && cfg.picard_iters == 0 {
        return Err(LabError::Parameter("a discounted driver needs picard_iters >= 1".into()));
    }

    let n_dates = cfg.n_steps;
    let dates: Vec<f64> = (0..=n_dates).map(|k| horizon * k as f64 / n_dates as f64).collect();
    let pathwise_driver = problem.driver.z_independent;
    let fwd = Forward { problem, cfg, dates: dates.clone(), pathwise_driver };
    let clouds = fwd.simulate(x0);
    let n = cfg.n_paths;
    let mut flags = Vec::new();

    // Terminal values.
    let mut y_next: Vec<Vec<f64>> = clouds
        .iter()
        .map(|c| c.x_at(n_dates, d).chunks_exact(d).map(|x| problem.terminal_h.eval(x)).collect())
        .collect();
    let mut pathwise = y_next.clone();
    let h_sup = y_next.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut f_sup = 0.0f64;
    let mut z_breaches = 0usize;
    let mut degraded = 0usize;
    let mut steps: Vec<StepFit> = Vec::with_capacity(n_dates);
    let driver = problem.driver.clone();

    for k in (0..n_dates).rev() {
        let dt = dates[k + 1] - dates[k];
        let discount = (0..=cfg.picard_iters).map(|j| (-alpha * dt).powi(j as i32)).sum::<f64>();
        let next_fit = steps.last().cloned();
        // Targets per chunk: [mean target, z_1..z_d].
        let targets: Vec<Vec<Vec<f64>>> = cfg.exec.map(clouds.len(), |ci| {
            let c = &clouds[ci];
            let xk = c.x_at(k, d);
            let mut out = vec![vec![0.0; c.n]; 1 + d];
            let mut buf = vec![0.0; next_fit.as_ref().map(|s| s.fit.basis.len()).unwrap_or(1)];
            let mut zbuf = vec![0.0; d];
            for i in 0..c.n {
                let x = &xk[i * d..(i + 1) * d];
                let yn = y_next[ci][i];
                let mut m = yn + c.bnd[k * c.n + i];
                if pathwise_driver {
                    m += c.fint[k * c.n + i];
                }
                out[0][i] = m;
                let cv = match &next_fit {
                    None => problem.terminal_h.eval(x),
                    Some(s) => eval_step(s, &driver, cfg.z_cap, d, x, &mut buf, &mut zbuf),
                };
                let dw = &c.dw[(k * c.n + i) * d..(k * c.n + i + 1) * d];
                let incr = yn + c.bnd[k * c.n + i] - cv;
                for j in 0..d {
                    out[1 + j][i] = incr * dw[j] / dt;
                }
            }
            out
        });
        let designs: Vec<Design> = clouds
            .iter()
            .zip(&targets)
            .map(|(c, t)| Design { points: c.x_at(k, d), targets: t.iter().map(|v| v.as_slice()).collect() })
            .collect();
        let fit = least_squares(cfg.basis, d, &designs, cfg.exec)?;
        if fit.degraded {
            degraded += 1;
        }
        let step = StepFit { t: dates[k], dt, fit, discount, pathwise_driver };

        // Roll values back to date k.
        let rolled: Vec<(Vec<f64>, Vec<f64>, usize, f64)> = cfg.exec.map(clouds.len(), |ci| {
            let c = &clouds[ci];
            let xk = c.x_at(k, d);
            let mut buf = vec![0.0; step.fit.basis.len()];
            let mut z = vec![0.0; d];
            let mut ys = Vec::with_capacity(c.n);
            let mut ps = Vec::with_capacity(c.n);
            let mut breaches = 0;
            let mut fmax = 0.0f64;
            for i in 0..c.n {
                let x = &xk[i * d..(i + 1) * d];
                let m = step.fit.predict_with(0, x, &mut buf);
                let fterm = if pathwise_driver {
                    c.fint[k * c.n + i]
                } else {
                    for j in 0..d {
                        let raw = step.fit.predict_with(1 + j, x, &mut buf);
                        if raw.abs() > cfg.z_cap {
                            breaches += 1;
                        }
                        z[j] = raw.clamp(-cfg.z_cap, cfg.z_cap);
                    }
                    driver.eval(x, &z) * dt
                };
                fmax = fmax.max((fterm / dt).abs());
                let y = if pathwise_driver { discount * m } else { discount * (m + fterm) };
                ys.push(y);
                ps.push(discount * (pathwise[ci][i] + c.bnd[k * c.n + i] + fterm));
            }
            (ys, ps, breaches, fmax)
        });
        for (ci, (ys, ps, b, fm)) in rolled.into_iter().enumerate() {
            y_next[ci] = ys;
            pathwise[ci] = ps;
            z_breaches += b;
            f_sup = f_sup.max(fm);
        }
        steps.push(step);
    }
    steps.reverse();

    let first = &steps[0];
    let mut buf = vec![0.0; first.fit.basis.len()];
    let mut zbuf = vec![0.0; d];
    let y0_value = eval_step(first, &driver, cfg.z_cap, d, x0, &mut buf, &mut zbuf);
    let z0: Vec<f64> = (0..d).map(|j| first.fit.predict_with(1 + j, x0, &mut buf).clamp(-cfg.z_cap, cfg.z_cap)).collect();
    let all_pathwise: Vec<f64> = pathwise.into_iter().flatten().collect();
    let pe = Estimate::from_samples(&all_pathwise);
    let mean_k = clouds.iter().flat_map(|c| c.k_total.iter()).sum::<f64>() / n as f64;
    let g_sup = clouds.iter().fold(0.0f64, |m, c| m.max(c.g_max));

    if z_breaches > 0 {
        flags.push(format!("z_cap {} exceeded {z_breaches} times", cfg.z_cap));
    }
    if degraded > 0 {
        flags.push(format!("basis degraded at {degraded} dates"));
    }
    let bound = h_sup + horizon * f_sup + g_sup * mean_k;
    let slack = 0.05 * (1.0 + bound) + 5.0 * pe.se;
    if y0_value.abs() > bound + slack {
        flags.push(format!("|y0| = {:.4} exceeds the a priori bound {:.4}", y0_value.abs(), bound));
    }
    for f in &flags {
        log::warn!("bsde: {f}");
    }

    Ok(BsdeSolution {
        dim: d,
        horizon,
        time_grid: dates,
        basis: cfg.basis,
        steps,
        y0: Estimate { mean: y0_value, se: pe.se },
        z0,
        pathwise: all_pathwise,
        mean_local_time: mean_k,
        flags,
        driver,
        z_cap: cfg.z_cap,
        domain: problem.domain().clone(),
    })
}

#[inline]
fn eval_step(s: &StepFit, driver: &Driver, z_cap: f64, d: usize, x: &[f64], buf: &mut [f64], z: &mut [f64]) -> f64 {
    let m = s.fit.predict_with(0, x, buf);
    if s.pathwise_driver {
        return s.discount * m;
    }
    for j in 0..d {
        z[j] = s.fit.predict_with(1 + j, x, buf).clamp(-z_cap, z_cap);
    }
    s.discount * (m + s.dt * driver.eval(x, &z[..d]))
}

/// Plain Monte Carlo of `E[h(X_T) + ∫ f(X) ds + ∫ g(X) dK]` for drivers that
/// do not depend on `z`. Uses the same per-path streams as the regression solver.
pub fn direct_estimator(problem: &NeumannProblem, horizon: f64, x0: &[f64], cfg: &BsdeConfig) -> Result<Estimate> {
    if !problem.driver.z_independent {
        return Err(LabError::Precondition(format!(
            "direct estimator needs a z-independent driver, got {}",
            problem.driver.label
        )));
    }
    let d = problem.dim();
    if !(horizon > 0.0) {
        return Err(LabError::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if x0.len() != d || !problem.domain().contains(x0) {
        return Err(LabError::Precondition(format!("x0 = {x0:?} is not a point of closure(G)")));
    }
    cfg.validate(d)?;
    let n_fine = cfg.n_steps * cfg.substeps;
    let dt = horizon / n_fine as f64;
    let zero_z = vec![0.0; d];
    let chunks = chunk_ranges(cfg.n_paths, CHUNK);
    let parts = cfg.exec.map_slice(&chunks, |range| {
        let mut s = Scratch::new(d);
        let mut x = vec![0.0; d];
        let mut dw = vec![0.0; d];
        range
            .clone()
            .map(|p| {
                let mut rng = PathRng::new(cfg.seed, p as u64);
                x.copy_from_slice(x0);
                let mut acc = 0.0;
                for _ in 0..n_fine {
                    acc += problem.driver.eval(&x, &zero_z) * dt;
                    let dk = euler_step(&problem.coeffs, cfg.scheme, &mut x, None, dt, &mut rng, &mut dw, &mut s);
                    if dk > 0.0 {
                        acc += problem.boundary_g.eval(&x) * dk;
                    }
                }
                acc + problem.terminal_h.eval(&x)
            })
            .collect::<Vec<f64>>()
    });
    let all: Vec<f64> = parts.into_iter().flatten().collect();
    Ok(Estimate::from_samples(&all))
}

/// The fitted `Y` surface at time 0 on `x_grid`. Points outside
/// `closure(G)` are projected first. This is an extrapolating estimator
/// without standard errors.
pub fn evaluate_u(solution: &BsdeSolution, x_grid: &[Vec<f64>]) -> Vec<f64> {
    let mut p = vec![0.0; solution.dim];
    x_grid
        .iter()
        .map(|x| {
            if solution.domain.contains(x) {
                solution.y_at(0, x)
            } else {
                log::warn!("evaluate_u: {x:?} outside closure(G), projecting");
                solution.domain.project_into(x, &mut p);
                solution.y_at(0, &p)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> BsdeConfig {
        BsdeConfig { n_paths: 4000, n_steps: 20, substeps: 5, seed: 17, ..Default::default() }
    }

    #[test]
    fn constant_terminal_value_propagates_exactly() {
        let p = NeumannProblem::benchmark().with_boundary(ScalarField::zero()).with_terminal(ScalarField::constant(3.0));
        let sol = solve_finite_horizon(&p, 1.0, &[0.2], &small_cfg()).unwrap();
        assert!((sol.y0.mean - 3.0).abs() < 1e-12, "{}", sol.y0.mean);
        let u = evaluate_u(&sol, &[vec![-0.5], vec![0.9], vec![1.5]]);
        assert!(u.iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(evaluate_u(&sol, &[]).is_empty());
    }

    #[test]
    fn constant_driver_integrates_to_c_t() {
        let p = NeumannProblem::benchmark().with_boundary(ScalarField::zero()).with_driver(Driver::constant(0.7));
        let sol = solve_finite_horizon(&p, 2.0, &[0.0], &small_cfg()).unwrap();
        assert!((sol.y0.mean - 1.4).abs() < 1e-12);
        let z_dep = Driver::new("c+0z", 1.0, |_, z| 0.7 + 0.0 * z[0]);
        let p2 = p.with_driver(z_dep);
        let sol2 = solve_finite_horizon(&p2, 2.0, &[0.0], &small_cfg()).unwrap();
        assert!((sol2.y0.mean - 1.4).abs() < 1e-9);
    }

    #[test]
    fn direct_estimator_trivial_cases() {
        let base = NeumannProblem::benchmark().with_boundary(ScalarField::zero());
        let cfg = small_cfg();
        let e = direct_estimator(&base.clone().with_terminal(ScalarField::constant(1.0)), 1.0, &[0.0], &cfg).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.se, 0.0);
        let e = direct_estimator(&base.clone().with_driver(Driver::constant(1.0)), 3.0, &[0.0], &cfg).unwrap();
        assert!((e.mean - 3.0).abs() < 1e-12);
        let err = direct_estimator(&base.with_driver(Driver::abs_z(1.0)), 1.0, &[0.0], &cfg).unwrap_err();
        assert!(matches!(err, LabError::Precondition(_)));
    }

    #[test]
    fn bad_inputs_rejected() {
        let p = NeumannProblem::benchmark();
        assert!(solve_finite_horizon(&p, 0.0, &[0.0], &small_cfg()).is_err());
        assert!(solve_finite_horizon(&p, 1.0, &[1.2], &small_cfg()).is_err());
        let mut cfg = small_cfg();
        cfg.n_steps = 0;
        assert!(solve_finite_horizon(&p, 1.0, &[0.0], &cfg).is_err());
    }

    #[test]
    fn regression_matches_direct_for_x_dependent_driver() {
        let p = NeumannProblem::benchmark().with_driver(Driver::of_x("x^2", |x| x[0] * x[0]));
        let cfg = small_cfg();
        let sol = solve_finite_horizon(&p, 1.0, &[0.3], &cfg).unwrap();
        let direct = direct_estimator(&p, 1.0, &[0.3], &cfg).unwrap();
        assert!(sol.y0.agrees_with(&direct, 3.0, 1e-2), "{:?} vs {direct:?}", sol.y0);
    }

    #[test]
    fn terminal_comparison_is_monotone() {
        let cfg = small_cfg();
        let base = NeumannProblem::benchmark().with_driver(Driver::abs_z(-1.0));
        let lo = solve_finite_horizon(&base.clone().with_terminal(ScalarField::new("x", |x| x[0])), 0.5, &[0.0], &cfg).unwrap();
        let hi = solve_finite_horizon(&base.with_terminal(ScalarField::new("x+0.1", |x| x[0] + 0.1)), 0.5, &[0.0], &cfg).unwrap();
        assert!(hi.y0.mean > lo.y0.mean);
    }

    #[test]
    fn solutions_are_reproducible_and_mode_independent() {
        let p = NeumannProblem::benchmark().with_driver(Driver::abs_z(-1.0));
        let mut cfg = small_cfg();
        let a = solve_finite_horizon(&p, 0.5, &[0.1], &cfg).unwrap();
        let b = solve_finite_horizon(&p, 0.5, &[0.1], &cfg).unwrap();
        cfg.exec = Exec::Sequential;
        let c = solve_finite_horizon(&p, 0.5, &[0.1], &cfg).unwrap();
        assert_eq!(a.y0.mean.to_bits(), b.y0.mean.to_bits());
        assert_eq!(a.y0.mean.to_bits(), c.y0.mean.to_bits());
    }

    #[test]
    fn z_cap_breach_flags_the_run() {
        let p = NeumannProblem::benchmark()
            .with_boundary(ScalarField::zero())
            .with_terminal(ScalarField::new("5x", |x| 5.0 * x[0]))
            .with_driver(Driver::abs_z(-1.0));
        let mut cfg = small_cfg();
        cfg.z_cap = 0.5;
        let sol = solve_finite_horizon(&p, 0.5, &[0.0], &cfg).unwrap();
        assert!(sol.is_flagged());
    }

    #[test]
    fn spot_check_catches_wrong_lipschitz_metadata() {
        let ok = NeumannProblem::benchmark().with_driver(Driver::abs_z(-1.0));
        assert!(ok.spot_check(200, 1).is_ok());
        let mut bad = Driver::abs_z(-2.0);
        bad.z_lipschitz = 1.0;
        assert!(ok.with_driver(bad).spot_check(200, 1).is_err());
    }
}

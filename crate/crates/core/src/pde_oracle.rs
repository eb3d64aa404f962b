//! Finite-difference oracle for one-dimensional Neumann problems.
//!
//! Solves `∂u/∂t = ½σ²u'' + b u' + f(x, σu') - αu` on `[lo, hi]` with
//! `u'(hi) = g(hi)`, `u'(lo) = -g(lo)` and `u(0, ·) = h`. The linear part is
//! Crank–Nicolson in increment form (so constants are preserved exactly),
//! started with backward-Euler quarter steps to damp the high modes. The
//! driver is treated explicitly with second-order extrapolation. Boundary
//! conditions use ghost points.

use serde::{Deserialize, Serialize};

use crate::bsde::NeumannProblem;
use crate::error::{LabError, Result};
use crate::geometry::DomainSpec;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FdConfig {
    /// Number of cells; the grid has `n_cells + 1` nodes.
    pub n_cells: usize,
    pub dt: f64,
    /// Snapshot spacing in time (`None` keeps only the endpoints).
    pub save_every: Option<f64>,
    /// Extra snapshot times (rounded to the nearest step).
    #[serde(default)]
    pub save_at: Vec<f64>,
    /// Backward-Euler quarter steps before switching to Crank–Nicolson.
    pub rannacher_steps: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { n_cells: 400, dt: 1e-3, save_every: None, save_at: Vec::new(), rannacher_steps: 4 }
    }
}

/// Values on a space-time grid; `values[k][i] = u(times[k], xs[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl GridField {
    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.xs.len() - 1;
        let dx = (self.xs[n] - self.xs[0]) / n as f64;
        let s = ((x - self.xs[0]) / dx).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        (i, s - i as f64)
    }

    fn time_weights(&self, t: f64) -> (usize, usize, f64) {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[last] {
            return (last, last, 0.0);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, k + 1, w)
    }

    /// Index of the snapshot at time `t` (within `tol`).
    pub fn snapshot(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= tol)
    }

    /// Linear interpolation in `x` of snapshot `k`.
    pub fn value(&self, k: usize, x: f64) -> f64 {
        let (i, w) = self.locate(x);
        let v = &self.values[k];
        (1.0 - w) * v[i] + w * v[i + 1]
    }

    /// Slope of snapshot `k` at `x` (cell-wise difference, linear between midpoints).
    pub fn gradient(&self, k: usize, x: f64) -> f64 {
        let n = self.xs.len() - 1;
        let dx = (self.xs[n] - self.xs[0]) / n as f64;
        let v = &self.values[k];
        let slope = |c: usize| (v[c + 1] - v[c]) / dx;
        let s = ((x - self.xs[0]) / dx - 0.5).clamp(0.0, (n - 1) as f64);
        let c = (s.floor() as usize).min(n.saturating_sub(2));
        if n < 2 {
            return slope(0);
        }
        let w = s - c as f64;
        (1.0 - w) * slope(c) + w * slope(c + 1)
    }

    /// Bilinear value at `(t, x)`.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        let (a, b, w) = self.time_weights(t);
        (1.0 - w) * self.value(a, x) + w * self.value(b, x)
    }

    /// Slope at `(t, x)`, linear in time between snapshots.
    pub fn gradient_at(&self, t: f64, x: f64) -> f64 {
        let (a, b, w) = self.time_weights(t);
        (1.0 - w) * self.gradient(a, x) + w * self.gradient(b, x)
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().expect("non-empty field")
    }

    /// Rows `t,x,u`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,u")?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, u) in self.xs.iter().zip(row) {
                writeln!(w, "{t},{x},{u}")?;
            }
        }
        Ok(())
    }
}

/// Coefficients of a 1D problem sampled on the grid.
struct Discretized {
    xs: Vec<f64>,
    dx: f64,
    half_s2: f64,
    sigma: f64,
    b: Vec<f64>,
    g_lo: f64,
    g_hi: f64,
    alpha: f64,
}

impl Discretized {
    fn new(problem: &NeumannProblem, alpha: f64, n_cells: usize) -> Result<Self> {
        if problem.dim() != 1 {
            return Err(LabError::Precondition(format!("the FD oracle is one-dimensional, got d = {}", problem.dim())));
        }
        let (lo, hi) = match problem.domain().spec() {
            DomainSpec::Interval { lo, hi } => (lo, hi),
            DomainSpec::Ball { radius, .. } => (-radius, radius),
            DomainSpec::Ellipsoid { semi_axes } => (-semi_axes[0], semi_axes[0]),
        };
        if n_cells < 4 {
            return Err(LabError::Parameter("the FD grid needs at least 4 cells".into()));
        }
        let dx = (hi - lo) / n_cells as f64;
        let xs: Vec<f64> = (0..=n_cells).map(|i| lo + dx * i as f64).collect();
        let sigma = problem.coeffs.sigma.rows()[0];
        let mut out = [0.0];
        let b = xs
            .iter()
            .map(|&x| {
                problem.coeffs.drift.eval(&[x], &mut out);
                out[0]
            })
            .collect();
        Ok(Discretized {
            xs,
            dx,
            half_s2: 0.5 * sigma * sigma,
            sigma,
            b,
            g_lo: problem.boundary_g.eval(&[lo]),
            g_hi: problem.boundary_g.eval(&[hi]),
            alpha,
        })
    }

    fn n(&self) -> usize {
        self.xs.len()
    }

    /// Tridiagonal coefficients `(sub, diag, sup)` of the linear operator and its affine part.
    fn operator(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let m = n - 1;
        let (dx, a) = (self.dx, self.half_s2 / (self.dx * self.dx));
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut src = vec![0.0; n];
        for i in 0..n {
            let c = self.b[i] / (2.0 * dx);
            diag[i] = -2.0 * a - self.alpha;
            if i == 0 {
                // Ghost u_{-1} = u_1 + 2 dx g(lo).
                sup[i] = 2.0 * a;
                src[i] = (a - c) * 2.0 * dx * self.g_lo;
            } else if i == m {
                // Ghost u_{m+1} = u_{m-1} + 2 dx g(hi).
                sub[i] = 2.0 * a;
                src[i] = (a + c) * 2.0 * dx * self.g_hi;
            } else {
                sub[i] = a - c;
                sup[i] = a + c;
            }
        }
        (sub, diag, sup, src)
    }

    fn slopes(&self, u: &[f64], out: &mut [f64]) {
        let m = u.len() - 1;
        out[0] = -self.g_lo;
        out[m] = self.g_hi;
        for i in 1..m {
            out[i] = (u[i + 1] - u[i - 1]) / (2.0 * self.dx);
        }
    }
}

/// Thomas solver for `(I - c A) δ = r` with precomputed elimination.
struct Tridiag {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiag {
    fn new(sub: &[f64], diag: &[f64], sup: &[f64], c: f64) -> Self {
        let n = diag.len();
        let lo: Vec<f64> = sub.iter().map(|v| -c * v).collect();
        let up: Vec<f64> = sup.iter().map(|v| -c * v).collect();
        let mut d: Vec<f64> = diag.iter().map(|v| 1.0 - c * v).collect();
        let mut l = vec![0.0; n];
        for i in 1..n {
            l[i] = lo[i] / d[i - 1];
            d[i] -= l[i] * up[i - 1];
        }
        Tridiag { lower: l, diag: d, upper: up }
    }

    fn solve(&self, r: &mut [f64]) {
        let n = r.len();
        for i in 1..n {
            r[i] -= self.lower[i] * r[i - 1];
        }
        r[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            r[i] = (r[i] - self.upper[i] * r[i + 1]) / self.diag[i];
        }
    }
}

fn apply(sub: &[f64], diag: &[f64], sup: &[f64], u: &[f64], out: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let mut v = diag[i] * u[i];
        if i > 0 {
            v += sub[i] * u[i - 1];
        }
        if i + 1 < n {
            v += sup[i] * u[i + 1];
        }
        out[i] = v;
    }
}

fn march(problem: &NeumannProblem, disc: &Discretized, u0: Vec<f64>, horizon: f64, cfg: &FdConfig, dt: f64) -> Option<GridField> {
    let n = disc.n();
    let (sub, diag, sup, src) = disc.operator();
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let dt = horizon / n_steps as f64;
    let save_stride = cfg.save_every.map(|s| ((s / dt).round() as usize).max(1));
    let mut save_steps: Vec<usize> = cfg.save_at.iter().map(|t| (t / dt).round() as usize).collect();
    save_steps.sort_unstable();
    let quarter = dt / 4.0;
    let be = Tridiag::new(&sub, &diag, &sup, quarter);
    let cn = Tridiag::new(&sub, &diag, &sup, 0.5 * dt);
    let scale = 1.0 + u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let linear_driver = problem.driver.z_independent;
    let mut u = u0;
    let mut au = vec![0.0; n];
    let mut slope = vec![0.0; n];
    let mut f_now = vec![0.0; n];
    let mut f_prev: Option<Vec<f64>> = None;
    let mut rhs = vec![0.0; n];
    let mut times = vec![0.0];
    let mut values = vec![u.clone()];
    let driver_at = |u: &[f64], slope: &mut [f64], out: &mut [f64]| {
        disc.slopes(u, slope);
        for i in 0..n {
            out[i] = problem.driver.eval(&[disc.xs[i]], &[disc.sigma * slope[i]]);
        }
    };

    let mut t = 0.0;
    for step in 0..n_steps {
        if step < cfg.rannacher_steps.div_ceil(4) {
            for _ in 0..4 {
                driver_at(&u, &mut slope, &mut f_now);
                apply(&sub, &diag, &sup, &u, &mut au);
                for i in 0..n {
                    rhs[i] = quarter * (au[i] + src[i] + f_now[i]);
                }
                be.solve(&mut rhs);
                for i in 0..n {
                    u[i] += rhs[i];
                }
            }
            f_prev = None;
        } else {
            driver_at(&u, &mut slope, &mut f_now);
            apply(&sub, &diag, &sup, &u, &mut au);
            for i in 0..n {
                let f = match (&f_prev, linear_driver) {
                    (Some(p), false) => 1.5 * f_now[i] - 0.5 * p[i],
                    _ => f_now[i],
                };
                rhs[i] = dt * (au[i] + src[i] + f);
            }
            cn.solve(&mut rhs);
            for i in 0..n {
                u[i] += rhs[i];
            }
            f_prev = Some(f_now.clone());
        }
        t = dt * (step + 1) as f64;
        let bound = 1e8 * scale * (1.0 + t);
        if u.iter().any(|v| !v.is_finite() || v.abs() > bound) {
            return None;
        }
        let last = step + 1 == n_steps;
        if last || save_stride.is_some_and(|s| (step + 1) % s == 0) || save_steps.binary_search(&(step + 1)).is_ok() {
            times.push(t);
            values.push(u.clone());
        }
    }
    debug_assert!((t - horizon).abs() < 1e-9 * horizon.max(1.0));
    Some(GridField { times, xs: disc.xs.clone(), values })
}

fn solve_from(problem: &NeumannProblem, alpha: f64, u0: Option<Vec<f64>>, horizon: f64, cfg: &FdConfig) -> Result<GridField> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(LabError::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if !(cfg.dt > 0.0) {
        return Err(LabError::Parameter("dt must be positive".into()));
    }
    let disc = Discretized::new(problem, alpha, cfg.n_cells)?;
    let u0 = u0.unwrap_or_else(|| disc.xs.iter().map(|&x| problem.terminal_h.eval(&[x])).collect());
    if u0.len() != disc.n() {
        return Err(LabError::Parameter("initial data does not match the grid".into()));
    }
    let mut dt = cfg.dt.min(horizon);
    for attempt in 0..6 {
        if let Some(field) = march(problem, &disc, u0.clone(), horizon, cfg, dt) {
            if attempt > 0 {
                log::warn!("fd: stable after halving dt {attempt} times (dt = {dt})");
            }
            return Ok(field);
        }
        log::warn!("fd: blow-up detected at dt = {dt}, halving");
        dt *= 0.5;
    }
    Err(LabError::Numerical(format!("fd solver blew up down to dt = {dt}")))
}

/// `u` on `[0, T]` for the problem `problem`.
pub fn solve_parabolic_fd(problem: &NeumannProblem, horizon: f64, cfg: &FdConfig) -> Result<GridField> {
    solve_from(problem, 0.0, None, horizon, cfg)
}

/// Same with the extra `-alpha u` term.
pub fn solve_discounted_fd(problem: &NeumannProblem, alpha: f64, horizon: f64, cfg: &FdConfig) -> Result<GridField> {
    if alpha < 0.0 {
        return Err(LabError::Parameter("alpha must be non-negative".into()));
    }
    solve_from(problem, alpha, None, horizon, cfg)
}

/// Ergodic pair from the FD oracle, normalized by `v(x_ref) = 0`.
#[derive(Clone, Debug)]
pub struct FdErgodic {
    pub lambda: f64,
    pub xs: Vec<f64>,
    pub v: Vec<f64>,
    /// Time reached.
    pub horizon: f64,
    /// Profile change over the last unit of time.
    pub residual: f64,
}

impl FdErgodic {
    pub fn v_at(&self, x: f64) -> f64 {
        let f = GridField { times: vec![0.0], xs: self.xs.clone(), values: vec![self.v.clone()] };
        f.value(0, x)
    }

    pub fn gradient_at(&self, x: f64) -> f64 {
        let f = GridField { times: vec![0.0], xs: self.xs.clone(), values: vec![self.v.clone()] };
        f.gradient(0, x)
    }
}

/// `λ` and `v` from long-time FD with `h ≡ 0`. The solver advances one unit
/// of time at a time; `λ = u(t + 1, x_ref) - u(t, x_ref)` once the profile
/// `u(t, ·) - u(t, x_ref)` moves by less than `tol` per unit time.
pub fn solve_ergodic_fd(problem: &NeumannProblem, x_ref: f64, t_max: f64, tol: f64, cfg: &FdConfig) -> Result<FdErgodic> {
    let problem = problem.clone().with_terminal(crate::field::ScalarField::zero());
    let first_cfg = FdConfig { save_every: None, ..cfg.clone() };
    let next_cfg = FdConfig { rannacher_steps: 0, ..first_cfg.clone() };
    let mut field = solve_from(&problem, 0.0, None, 1.0, &first_cfg)?;
    let mut t = 1.0;
    loop {
        let next = solve_from(&problem, 0.0, Some(field.last().to_vec()), 1.0, &next_cfg)?;
        t += 1.0;
        let k_old = field.times.len() - 1;
        let k_new = next.times.len() - 1;
        let (r_old, r_new) = (field.value(k_old, x_ref), next.value(k_new, x_ref));
        let lambda = r_new - r_old;
        let change = field
            .last()
            .iter()
            .zip(next.last())
            .fold(0.0f64, |m, (a, b)| m.max(((b - r_new) - (a - r_old)).abs()));
        let converged = change < tol;
        let residual = change;
        field = next;
        if converged {
            let v = field.last().iter().map(|u| u - r_new).collect();
            return Ok(FdErgodic { lambda, xs: field.xs, v, horizon: t, residual });
        }
        if t >= t_max {
            return Err(LabError::Numerical(format!(
                "fd ergodic solve not stationary by t = {t} (profile change {residual:.2e} per unit time)"
            )));
        }
    }
}

/// `sup_x |u(t1 + t2) - S_{t2} u(t1)|` where `S` restarts the solver from the
/// snapshot at `t1`.
pub fn flow_composition_check(problem: &NeumannProblem, t1: f64, t2: f64, cfg: &FdConfig) -> Result<f64> {
    let whole = solve_parabolic_fd(problem, t1 + t2, &FdConfig { save_every: None, ..cfg.clone() })?;
    let first = solve_parabolic_fd(problem, t1, &FdConfig { save_every: None, ..cfg.clone() })?;
    let second = solve_from(problem, 0.0, Some(first.last().to_vec()), t2, &FdConfig { save_every: None, ..cfg.clone() })?;
    Ok(whole.last().iter().zip(second.last()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Driver, ScalarField};
    use std::f64::consts::PI;

    fn bench() -> NeumannProblem {
        NeumannProblem::benchmark()
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let p = bench().with_boundary(ScalarField::zero()).with_terminal(ScalarField::constant(2.5));
        let u = solve_parabolic_fd(&p, 1.0, &FdConfig::default()).unwrap();
        assert!(u.last().iter().all(|v| *v == 2.5));
    }

    #[test]
    fn cosine_mode_decays_at_the_right_rate() {
        // h = cos(pi x / 1 * ...) with zero flux: cos(pi (x+1)) decays like exp(-pi^2 t / 2).
        let p = bench().with_boundary(ScalarField::zero()).with_terminal(ScalarField::new("cos", |x| (PI * (x[0] + 1.0)).cos()));
        let u = solve_parabolic_fd(&p, 0.5, &FdConfig::default()).unwrap();
        let exact = (-PI * PI * 0.5 / 2.0).exp();
        assert!((u.value(u.times.len() - 1, -1.0) - exact).abs() < 1e-4);
        assert!((u.value(u.times.len() - 1, 0.0) + exact).abs() < 1e-4);
    }

    #[test]
    fn benchmark_grows_linearly_with_quadratic_profile() {
        let u = solve_parabolic_fd(&bench(), 4.0, &FdConfig::default()).unwrap();
        let k = u.times.len() - 1;
        for &x in &[-1.0, -0.3, 0.0, 0.6, 1.0] {
            let exact = 2.0 + 0.5 * x * x - 1.0 / 6.0;
            assert!((u.value(k, x) - exact).abs() < 1e-4, "x = {x}: {}", u.value(k, x));
        }
        assert!((u.gradient(k, 0.5) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn ergodic_benchmark() {
        let e = solve_ergodic_fd(&bench(), 0.0, 64.0, 1e-8, &FdConfig::default()).unwrap();
        assert!((e.lambda - 0.5).abs() < 1e-6, "{}", e.lambda);
        assert!((e.v_at(0.8) - 0.32).abs() < 1e-4);
    }

    #[test]
    fn composition_holds() {
        let p = bench().with_driver(Driver::abs_z(-1.0)).with_terminal(ScalarField::new("x", |x| x[0]));
        let gap = flow_composition_check(&p, 0.5, 0.5, &FdConfig::default()).unwrap();
        assert!(gap < 1e-4, "{gap}");
    }

    #[test]
    fn snapshots_and_interpolation() {
        let cfg = FdConfig { save_every: Some(0.25), ..Default::default() };
        let u = solve_parabolic_fd(&bench(), 1.0, &cfg).unwrap();
        assert_eq!(u.times.len(), 5);
        let mid = u.value_at(0.375, 0.0);
        assert!(mid > u.value(1, 0.0) && mid < u.value(2, 0.0));
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,x,u\n0,-1,"));
    }

    #[test]
    fn rejects_multidimensional_problems() {
        use crate::geometry::ConvexDomain;
        use crate::sde::{SdeCoefficients, Sigma};
        use crate::field::VectorField;
        let c = SdeCoefficients::reflected(VectorField::zero(2), Sigma::scalar(2, 1.0).unwrap(), ConvexDomain::ball(2, 1.0).unwrap()).unwrap();
        let p = NeumannProblem::new(c, Driver::zero(), ScalarField::zero(), ScalarField::zero()).unwrap();
        assert!(matches!(solve_parabolic_fd(&p, 1.0, &FdConfig::default()), Err(LabError::Precondition(_))));
    }
}

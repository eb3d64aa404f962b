//! Forward simulation: reflected diffusions with boundary local time,
//! the penalized approximation, free (unreflected) diffusions, and the
//! moment and coupling diagnostics.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, LabError, Result};
use crate::exec::{chunk_ranges, Exec, CHUNK};
use crate::field::{ScalarField, VectorField};
use crate::geometry::{dist, ConvexDomain, DriftExtension, BOUNDARY_TOL};
use crate::rng::PathRng;
use crate::stats::Estimate;

/// Constant invertible diffusion matrix, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sigma {
    dim: usize,
    m: Vec<f64>,
    inv: Vec<f64>,
}

impl Sigma {
    pub fn new(dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != dim * dim || dim == 0 {
            return Err(LabError::Parameter(format!("sigma needs {dim}x{dim} entries, got {}", rows.len())));
        }
        check_finite(&rows, "sigma")?;
        let m = DMatrix::from_row_slice(dim, dim, &rows);
        let det = m.clone().lu().determinant();
        if det.abs() <= 1e-12 {
            return Err(LabError::Parameter(format!("sigma is singular (det = {det:e})")));
        }
        let inv = m
            .try_inverse()
            .ok_or_else(|| LabError::Parameter("sigma is not invertible".into()))?;
        let inv_rows = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect();
        Ok(Sigma { dim, m: rows, inv: inv_rows })
    }

    pub fn scalar(dim: usize, s: f64) -> Result<Self> {
        let mut rows = vec![0.0; dim * dim];
        for i in 0..dim {
            rows[i * dim + i] = s;
        }
        Sigma::new(dim, rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[f64] {
        &self.m
    }

    #[inline]
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        mat_vec(&self.m, self.dim, v, out)
    }

    #[inline]
    pub fn apply_inverse(&self, v: &[f64], out: &mut [f64]) {
        mat_vec(&self.inv, self.dim, v, out)
    }

    /// `|sigma^T n|^2`, the variance rate of `<sigma W, n>`.
    #[inline]
    pub fn normal_variance(&self, n: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for j in 0..d {
            let mut c = 0.0;
            for i in 0..d {
                c += self.m[i * d + j] * n[i];
            }
            s += c * c;
        }
        s
    }

    /// Row vector `z sigma^{-1} r`.
    pub fn pairing(&self, z: &[f64], r: &[f64]) -> f64 {
        let mut tmp = vec![0.0; self.dim];
        self.apply_inverse(r, &mut tmp);
        z.iter().zip(&tmp).map(|(a, b)| a * b).sum()
    }
}

#[inline]
fn mat_vec(m: &[f64], d: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += m[i * d + j] * v[j];
        }
        out[i] = s;
    }
}

/// Drift, constant diffusion and (optionally) the reflecting domain.
/// Without a domain the process is the free diffusion on R^d.
#[derive(Clone, Debug)]
pub struct SdeCoefficients {
    pub drift: VectorField,
    pub sigma: Sigma,
    pub domain: Option<Arc<ConvexDomain>>,
}

impl SdeCoefficients {
    pub fn reflected(drift: VectorField, sigma: Sigma, domain: ConvexDomain) -> Result<Self> {
        if drift.dim != domain.dim() || sigma.dim() != domain.dim() {
            return Err(LabError::Parameter("drift, sigma and domain dimensions differ".into()));
        }
        Ok(SdeCoefficients { drift, sigma, domain: Some(Arc::new(domain)) })
    }

    pub fn free(drift: VectorField, sigma: Sigma) -> Result<Self> {
        if drift.dim != sigma.dim() {
            return Err(LabError::Parameter("drift and sigma dimensions differ".into()));
        }
        Ok(SdeCoefficients { drift, sigma, domain: None })
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn domain(&self) -> Option<&ConvexDomain> {
        self.domain.as_deref()
    }
}

/// How a step that leaves the domain is pulled back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionScheme {
    /// Euler step then projection; `dK` is the distance pushed.
    #[default]
    Projection,
    /// Euler step, then the exact half-space Skorokhod map of a Brownian
    /// bridge in the normal direction of the nearest boundary point. Removes
    /// the `O(sqrt(h))` local-time bias of plain projection.
    BridgeCorrected,
}

impl ReflectionScheme {
    /// Uniform draws consumed per step (kept fixed for common random numbers).
    pub fn uniforms_per_step(self) -> usize {
        match self {
            ReflectionScheme::Projection => 0,
            ReflectionScheme::BridgeCorrected => 1,
        }
    }
}

/// Strictly increasing time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(LabError::Parameter("time grid needs at least two points".into()));
        }
        check_finite(&times, "time grid")?;
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Parameter("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn uniform(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t1 > t0) {
            return Err(LabError::Parameter(format!("bad uniform grid [{t0}, {t1}] with {n_steps} steps")));
        }
        let h = (t1 - t0) / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h).collect();
        times[n_steps] = t1;
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// Simulation controls shared by the path simulators.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Euler steps per grid interval.
    pub substeps: usize,
    pub scheme: ReflectionScheme,
    pub exec: Exec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_paths: 1000, seed: 0, substeps: 1, scheme: ReflectionScheme::Projection, exec: Exec::Parallel }
    }
}

/// Discretized trajectories with their boundary local time.
///
/// `states` is path-major: the point of path `p` at grid index `k` starts at
/// `(p * n_times + k) * dim`.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub dim: usize,
    pub time_grid: TimeGrid,
    pub n_paths: usize,
    pub states: Vec<f64>,
    pub local_time: Vec<f64>,
    /// True when states are projected into `closure(G)`.
    pub constrained: bool,
    pub seed: u64,
    /// RNG stream of each path (the path index).
    pub streams: Vec<u64>,
    pub warnings: Vec<String>,
}

impl PathBundle {
    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.n_times() + k) * self.dim;
        &self.states[i..i + self.dim]
    }

    pub fn local_time(&self, path: usize, k: usize) -> f64 {
        self.local_time[path * self.n_times() + k]
    }

    /// CSV with columns `path_id, t, x_1..x_d, K`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("path_id,t");
        for j in 1..=self.dim {
            header.push_str(&format!(",x_{j}"));
        }
        header.push_str(",K");
        writeln!(w, "{header}")?;
        let times = self.time_grid.times();
        for p in 0..self.n_paths {
            for (k, t) in times.iter().enumerate() {
                write!(w, "{p},{t}")?;
                for v in self.state(p, k) {
                    write!(w, ",{v}")?;
                }
                writeln!(w, ",{}", self.local_time(p, k))?;
            }
        }
        Ok(())
    }
}

/// Per-worker scratch buffers.
pub(crate) struct Scratch {
    pub drift: Vec<f64>,
    pub noise: Vec<f64>,
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
}

impl Scratch {
    pub fn new(d: usize) -> Self {
        Scratch {
            drift: vec![0.0; d],
            noise: vec![0.0; d],
            y: vec![0.0; d],
            q: vec![0.0; d],
            n: vec![0.0; d],
            p: vec![0.0; d],
        }
    }
}

/// One Euler step of the (reflected or free) dynamics.
///
/// `x` is advanced in place, `dw` receives the Brownian increment and the
/// boundary local-time increment is returned. `extra_drift` is added to the
/// drift (used by controlled dynamics).
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_step(
    coeffs: &SdeCoefficients,
    scheme: ReflectionScheme,
    x: &mut [f64],
    extra_drift: Option<&[f64]>,
    dt: f64,
    rng: &mut PathRng,
    dw: &mut [f64],
    s: &mut Scratch,
) -> f64 {
    let d = x.len();
    let sq = dt.sqrt();
    coeffs.drift.eval(x, &mut s.drift);
    if let Some(e) = extra_drift {
        for i in 0..d {
            s.drift[i] += e[i];
        }
    }
    for v in dw.iter_mut() {
        *v = rng.normal() * sq;
    }
    coeffs.sigma.apply(dw, &mut s.noise);
    for i in 0..d {
        s.y[i] = x[i] + s.drift[i] * dt + s.noise[i];
    }
    let Some(domain) = coeffs.domain() else {
        x.copy_from_slice(&s.y);
        return 0.0;
    };
    match scheme {
        ReflectionScheme::Projection => {
            domain.project_into(&s.y, x);
            dist(&s.y, x)
        }
        ReflectionScheme::BridgeCorrected => {
            let u = rng.uniform_open();
            domain.nearest_boundary(&s.y, &mut s.q, &mut s.n);
            let mut a = 0.0;
            let mut c = 0.0;
            for i in 0..d {
                a += (x[i] - s.q[i]) * s.n[i];
                c += (s.y[i] - s.q[i]) * s.n[i];
            }
            let a = a.max(0.0);
            let var = coeffs.sigma.normal_variance(&s.n) * dt;
            // Minimum of the bridge from a to c in the normal coordinate.
            let m = 0.5 * (a + c - ((c - a) * (c - a) - 2.0 * var * u.ln()).sqrt());
            let push = (-m).max(0.0);
            for i in 0..d {
                s.p[i] = s.y[i] + push * s.n[i];
            }
            domain.project_into(&s.p, x);
            push + dist(&s.p, x)
        }
    }
}

fn check_start(coeffs: &SdeCoefficients, x0: &[f64]) -> Result<()> {
    if x0.len() != coeffs.dim() {
        return Err(LabError::Parameter(format!("x0 has dimension {}, expected {}", x0.len(), coeffs.dim())));
    }
    check_finite(x0, "x0")?;
    if let Some(g) = coeffs.domain() {
        if !g.contains(x0) {
            return Err(LabError::Precondition(format!("x0 = {x0:?} is outside closure(G)")));
        }
    }
    Ok(())
}

/// Simulate the reflected SDE `dX = b dt + sigma dW + grad(phi) dK` from `x0`.
pub fn simulate_reflected(coeffs: &SdeCoefficients, x0: &[f64], grid: &TimeGrid, cfg: &SimConfig) -> Result<PathBundle> {
    if coeffs.domain.is_none() {
        return Err(LabError::Precondition("reflected simulation needs a domain".into()));
    }
    simulate(coeffs, x0, grid, cfg)
}

/// Simulate the reflected SDE, or the free diffusion when `coeffs` has no domain.
pub fn simulate(coeffs: &SdeCoefficients, x0: &[f64], grid: &TimeGrid, cfg: &SimConfig) -> Result<PathBundle> {
    check_start(coeffs, x0)?;
    if cfg.n_paths == 0 || cfg.substeps == 0 {
        return Err(LabError::Parameter("n_paths and substeps must be positive".into()));
    }
    let d = coeffs.dim();
    let nt = grid.len();
    let times = grid.times().to_vec();
    let chunks = chunk_ranges(cfg.n_paths, CHUNK);
    let parts = cfg.exec.map_slice(&chunks, |range| {
        let mut states = Vec::with_capacity(range.len() * nt * d);
        let mut lt = Vec::with_capacity(range.len() * nt);
        let mut s = Scratch::new(d);
        let mut x = x0.to_vec();
        let mut dw = vec![0.0; d];
        for p in range.clone() {
            let mut rng = PathRng::new(cfg.seed, p as u64);
            x.copy_from_slice(x0);
            let mut k_acc = 0.0;
            states.extend_from_slice(&x);
            lt.push(0.0);
            for w in times.windows(2) {
                let dt = (w[1] - w[0]) / cfg.substeps as f64;
                for _ in 0..cfg.substeps {
                    k_acc += euler_step(coeffs, cfg.scheme, &mut x, None, dt, &mut rng, &mut dw, &mut s);
                }
                states.extend_from_slice(&x);
                lt.push(k_acc);
            }
        }
        (states, lt)
    });
    let mut states = Vec::with_capacity(cfg.n_paths * nt * d);
    let mut local_time = Vec::with_capacity(cfg.n_paths * nt);
    for (s, l) in parts {
        states.extend(s);
        local_time.extend(l);
    }
    Ok(PathBundle {
        dim: d,
        time_grid: grid.clone(),
        n_paths: cfg.n_paths,
        states,
        local_time,
        constrained: coeffs.domain.is_some(),
        seed: cfg.seed,
        streams: (0..cfg.n_paths as u64).collect(),
        warnings: Vec::new(),
    })
}

/// Step rule for the penalized dynamics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyStep {
    /// Explicit while `2nh < 1`, semi-implicit otherwise.
    #[default]
    Auto,
    Explicit,
    /// Explicit drift `b̃`, implicit force `F_n` through its closed-form resolvent.
    SemiImplicit,
}

/// Euler scheme for `dX = [b̃(X) + F_n(X)] dt + sigma dW`.
///
/// The `local_time` field reports the proxy `∫ 2n dist(X_s, closure(G)) ds`.
/// Uses the same per-path streams (one normal per coordinate per step) as
/// the projection scheme, so both can be compared path by path.
pub fn simulate_penalized(
    ext: &DriftExtension,
    sigma: &Sigma,
    n: u32,
    x0: &[f64],
    grid: &TimeGrid,
    cfg: &SimConfig,
    step: PenaltyStep,
) -> Result<PathBundle> {
    if n == 0 {
        return Err(LabError::Parameter("penalization index n must be >= 1".into()));
    }
    let d = ext.domain.dim();
    if x0.len() != d || sigma.dim() != d {
        return Err(LabError::Parameter("dimension mismatch in penalized simulation".into()));
    }
    check_finite(x0, "x0")?;
    if cfg.n_paths == 0 || cfg.substeps == 0 {
        return Err(LabError::Parameter("n_paths and substeps must be positive".into()));
    }
    let h = grid.max_step() / cfg.substeps as f64;
    let stiffness = 2.0 * n as f64 * h;
    let mut warnings = Vec::new();
    let implicit = match step {
        PenaltyStep::SemiImplicit => true,
        PenaltyStep::Explicit => {
            if stiffness >= 1.0 {
                let msg = format!("explicit penalized step is unstable: 2nh = {stiffness:.3} >= 1");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            false
        }
        PenaltyStep::Auto => {
            if stiffness >= 1.0 {
                let msg = format!("2nh = {stiffness:.3} >= 1, switching to the semi-implicit penalized step");
                log::warn!("{msg}");
                warnings.push(msg);
                true
            } else {
                false
            }
        }
    };
    let nt = grid.len();
    let times = grid.times().to_vec();
    let nf = n as f64;
    let chunks = chunk_ranges(cfg.n_paths, CHUNK);
    let parts = cfg.exec.map_slice(&chunks, |range| {
        let mut states = Vec::with_capacity(range.len() * nt * d);
        let mut lt = Vec::with_capacity(range.len() * nt);
        let mut x = x0.to_vec();
        let mut drift = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut proj = vec![0.0; d];
        for p in range.clone() {
            let mut rng = PathRng::new(cfg.seed, p as u64);
            x.copy_from_slice(x0);
            let mut k_acc = 0.0;
            states.extend_from_slice(&x);
            lt.push(0.0);
            for w in times.windows(2) {
                let dt = (w[1] - w[0]) / cfg.substeps as f64;
                let sq = dt.sqrt();
                for _ in 0..cfg.substeps {
                    ext.eval(&x, &mut drift);
                    ext.domain.project_into(&x, &mut proj);
                    let dist_before = dist(&x, &proj);
                    for v in dw.iter_mut() {
                        *v = rng.normal() * sq;
                    }
                    sigma.apply(&dw, &mut noise);
                    if implicit {
                        for i in 0..d {
                            x[i] += drift[i] * dt + noise[i];
                        }
                        // Resolvent of y + 2n dt (y - Π(y)) = x̂.
                        ext.domain.project_into(&x, &mut proj);
                        let shrink = 1.0 / (1.0 + 2.0 * nf * dt);
                        for i in 0..d {
                            x[i] = proj[i] + (x[i] - proj[i]) * shrink;
                        }
                    } else {
                        for i in 0..d {
                            x[i] += (drift[i] - 2.0 * nf * (x[i] - proj[i])) * dt + noise[i];
                        }
                    }
                    k_acc += 2.0 * nf * dist_before * dt;
                }
                states.extend_from_slice(&x);
                lt.push(k_acc);
            }
        }
        (states, lt)
    });
    let mut states = Vec::with_capacity(cfg.n_paths * nt * d);
    let mut local_time = Vec::with_capacity(cfg.n_paths * nt);
    for (s, l) in parts {
        states.extend(s);
        local_time.extend(l);
    }
    Ok(PathBundle {
        dim: d,
        time_grid: grid.clone(),
        n_paths: cfg.n_paths,
        states,
        local_time,
        constrained: false,
        seed: cfg.seed,
        streams: (0..cfg.n_paths as u64).collect(),
        warnings,
    })
}

/// `E sup_t |X^a_t - X^b_t|^2` over two bundles sharing streams and grid.
pub fn sup_sq_distance(a: &PathBundle, b: &PathBundle) -> Result<Estimate> {
    if a.n_paths != b.n_paths || a.time_grid != b.time_grid || a.dim != b.dim {
        return Err(LabError::Parameter("bundles are not comparable".into()));
    }
    let vals: Vec<f64> = (0..a.n_paths)
        .map(|p| {
            (0..a.n_times())
                .map(|k| {
                    let (x, y) = (a.state(p, k), b.state(p, k));
                    x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(Estimate::from_samples(&vals))
}

/// Largest (over grid times) empirical `E|X_t|^p`, with its standard error.
pub fn moment_estimate(bundle: &PathBundle, p: u32) -> Result<Estimate> {
    if p == 0 || p % 2 == 1 {
        return Err(LabError::Parameter(format!("moment order must be even and positive, got {p}")));
    }
    if bundle.n_paths == 0 {
        return Err(LabError::Parameter("empty bundle".into()));
    }
    let half = (p / 2) as i32;
    let mut best: Option<Estimate> = None;
    for k in 0..bundle.n_times() {
        let vals: Vec<f64> = (0..bundle.n_paths)
            .map(|i| {
                let r2: f64 = bundle.state(i, k).iter().map(|v| v * v).sum();
                r2.powi(half)
            })
            .collect();
        let e = Estimate::from_samples(&vals);
        if best.as_ref().is_none_or(|b| e.mean > b.mean) {
            best = Some(e);
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Bounded test function for the coupling diagnostic.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub f: ScalarField,
    pub sup_norm: f64,
}

impl TestFunction {
    pub fn new(f: ScalarField) -> Result<Self> {
        match f.sup_norm {
            Some(s) if s.is_finite() => Ok(TestFunction { sup_norm: s, f }),
            _ => Err(LabError::Parameter(format!("test function {} has no finite sup-norm bound", f.label))),
        }
    }

    /// Indicator of `{x_1 > 0}`.
    pub fn positive_half_space() -> Self {
        TestFunction {
            f: ScalarField::new("1{x1>0}", |x| if x[0] > 0.0 { 1.0 } else { 0.0 }).with_sup_norm(1.0),
            sup_norm: 1.0,
        }
    }
}

/// `|P_t[phi](x) - P_t[phi](y)|` per grid time, estimated with common random
/// numbers (both starting points use the same per-path streams).
pub fn coupling_gap(
    coeffs: &SdeCoefficients,
    test: &TestFunction,
    x: &[f64],
    y: &[f64],
    grid: &TimeGrid,
    cfg: &SimConfig,
) -> Result<Vec<(f64, Estimate)>> {
    if !test.sup_norm.is_finite() {
        return Err(LabError::Parameter("test function must be bounded".into()));
    }
    let bx = simulate(coeffs, x, grid, cfg)?;
    let by = simulate(coeffs, y, grid, cfg)?;
    let out = grid
        .times()
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let diffs: Vec<f64> = (0..cfg.n_paths)
                .map(|p| test.f.eval(bx.state(p, k)) - test.f.eval(by.state(p, k)))
                .collect();
            let e = Estimate::from_samples(&diffs);
            (*t, Estimate { mean: e.mean.abs(), se: e.se })
        })
        .collect();
    Ok(out)
}

/// Check of the local-time support property on a projection-scheme bundle:
/// returns the number of steps where `K` increased although the state
/// did not reach the boundary.
pub fn local_time_violations(bundle: &PathBundle, domain: &ConvexDomain) -> usize {
    let mut bad = 0;
    for p in 0..bundle.n_paths {
        for k in 1..bundle.n_times() {
            let dk = bundle.local_time(p, k) - bundle.local_time(p, k - 1);
            if dk < -BOUNDARY_TOL || (dk > 0.0 && domain.phi(bundle.state(p, k)).abs() > 1e-9) {
                bad += 1;
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benchmark() -> SdeCoefficients {
        SdeCoefficients::reflected(VectorField::zero(1), Sigma::scalar(1, 1.0).unwrap(), ConvexDomain::unit_interval())
            .unwrap()
    }

    #[test]
    fn sigma_rejects_singular() {
        assert!(Sigma::new(2, vec![1.0, 2.0, 2.0, 4.0]).is_err());
        let s = Sigma::new(2, vec![2.0, 0.0, 1.0, 1.0]).unwrap();
        let mut out = [0.0; 2];
        s.apply_inverse(&[2.0, 1.0], &mut out);
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
        let g = TimeGrid::uniform(0.0, 2.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn start_outside_domain_is_rejected() {
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let err = simulate_reflected(&benchmark(), &[1.5], &grid, &SimConfig::default()).unwrap_err();
        assert!(matches!(err, LabError::Precondition(_)));
    }

    #[test]
    fn tiny_noise_never_reaches_boundary() {
        let coeffs = SdeCoefficients::reflected(
            VectorField::zero(1),
            Sigma::scalar(1, 1e-8).unwrap(),
            ConvexDomain::unit_interval(),
        )
        .unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let cfg = SimConfig { n_paths: 50, ..Default::default() };
        let b = simulate_reflected(&coeffs, &[0.2], &grid, &cfg).unwrap();
        for p in 0..50 {
            assert_eq!(b.local_time(p, 100), 0.0);
            assert!((b.state(p, 100)[0] - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_bundle_respects_support_and_monotonicity() {
        let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        let cfg = SimConfig { n_paths: 300, seed: 9, ..Default::default() };
        let b = simulate_reflected(&benchmark(), &[0.8], &grid, &cfg).unwrap();
        let g = ConvexDomain::unit_interval();
        assert_eq!(local_time_violations(&b, &g), 0);
        assert!(b.states.iter().all(|x| x.abs() <= 1.0));
        assert!(b.local_time.iter().any(|k| *k > 0.0));
    }

    #[test]
    fn ball_paths_stay_inside() {
        let g = ConvexDomain::ball(2, 1.0).unwrap();
        let coeffs = SdeCoefficients::reflected(VectorField::zero(2), Sigma::scalar(2, 1.0).unwrap(), g.clone()).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        for scheme in [ReflectionScheme::Projection, ReflectionScheme::BridgeCorrected] {
            let cfg = SimConfig { n_paths: 100, seed: 2, substeps: 2, scheme, ..Default::default() };
            let b = simulate_reflected(&coeffs, &[0.5, 0.0], &grid, &cfg).unwrap();
            for p in 0..100 {
                for k in 0..grid.len() {
                    assert!(g.contains(b.state(p, k)));
                    if k > 0 {
                        assert!(b.local_time(p, k) >= b.local_time(p, k - 1));
                    }
                }
            }
        }
    }

    #[test]
    fn bundles_identical_across_execution_modes() {
        let grid = TimeGrid::uniform(0.0, 0.5, 50).unwrap();
        let mut cfg = SimConfig { n_paths: 1500, seed: 4, scheme: ReflectionScheme::BridgeCorrected, ..Default::default() };
        let a = simulate_reflected(&benchmark(), &[0.0], &grid, &cfg).unwrap();
        cfg.exec = Exec::Sequential;
        let b = simulate_reflected(&benchmark(), &[0.0], &grid, &cfg).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.local_time, b.local_time);
    }

    #[test]
    fn odd_moment_rejected_and_reflected_moment_bounded() {
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let cfg = SimConfig { n_paths: 200, seed: 1, ..Default::default() };
        let b = simulate_reflected(&benchmark(), &[0.9], &grid, &cfg).unwrap();
        assert!(moment_estimate(&b, 3).is_err());
        assert!(moment_estimate(&b, 2).unwrap().mean <= 4.0);
        assert!(moment_estimate(&b, 4).unwrap().mean <= 16.0);
    }

    #[test]
    fn deterministic_path_moment() {
        let coeffs = SdeCoefficients::free(VectorField::zero(1), Sigma::scalar(1, 1e-9).unwrap()).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let cfg = SimConfig { n_paths: 20, ..Default::default() };
        let b = simulate(&coeffs, &[0.5], &grid, &cfg).unwrap();
        assert!((moment_estimate(&b, 2).unwrap().mean - 0.25).abs() < 1e-8);
    }

    #[test]
    fn coupling_gap_vanishes_for_equal_starts() {
        let coeffs = SdeCoefficients::free(VectorField::linear_restoring(1, 1.0), Sigma::scalar(1, 1.0).unwrap()).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let cfg = SimConfig { n_paths: 100, ..Default::default() };
        let gaps = coupling_gap(&coeffs, &TestFunction::positive_half_space(), &[0.3], &[0.3], &grid, &cfg).unwrap();
        assert!(gaps.iter().all(|(_, e)| e.mean == 0.0));
        let unbounded = ScalarField::new("x", |x| x[0]);
        assert!(TestFunction::new(unbounded).is_err());
    }

    #[test]
    fn penalized_without_noise_inside_is_constant() {
        let g = ConvexDomain::unit_interval();
        let ext = crate::geometry::extend_drift(VectorField::zero(1), &g);
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let cfg = SimConfig { n_paths: 10, ..Default::default() };
        let b = simulate_penalized(&ext, &Sigma::scalar(1, 1e-6).unwrap(), 16, &[0.3], &grid, &cfg, PenaltyStep::Auto)
            .unwrap();
        for p in 0..10 {
            assert!((b.state(p, 100)[0] - 0.3).abs() < 1e-4);
            assert_eq!(b.local_time(p, 100), 0.0);
        }
        assert!(simulate_penalized(&ext, &Sigma::scalar(1, 1.0).unwrap(), 0, &[0.3], &grid, &cfg, PenaltyStep::Auto).is_err());
    }

    #[test]
    fn stiff_penalization_switches_to_semi_implicit() {
        let g = ConvexDomain::unit_interval();
        let ext = crate::geometry::extend_drift(VectorField::zero(1), &g);
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let cfg = SimConfig { n_paths: 200, seed: 3, ..Default::default() };
        let b = simulate_penalized(&ext, &Sigma::scalar(1, 1.0).unwrap(), 1000, &[0.0], &grid, &cfg, PenaltyStep::Auto)
            .unwrap();
        assert_eq!(b.warnings.len(), 1);
        // Resolvent keeps the overshoot tiny: at most the free overshoot / (1 + 2nh).
        assert!(b.states.iter().all(|x| x.abs() < 1.1));
        let e = simulate_penalized(&ext, &Sigma::scalar(1, 1.0).unwrap(), 1000, &[0.0], &grid, &cfg, PenaltyStep::Explicit)
            .unwrap();
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn csv_dump_has_expected_shape() {
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let cfg = SimConfig { n_paths: 2, ..Default::default() };
        let b = simulate_reflected(&benchmark(), &[0.0], &grid, &cfg).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,x_1,K");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("0,0,0,0"));
    }
}

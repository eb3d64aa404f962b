//! Large-time behaviour of `u(T, x)`: the growth rate `λ`, the renormalized
//! profile `w_T(x) = u(T, x) - λT - v(x)`, its limit `L` and the
//! exponential rate `η` of `w_T → L`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bsde::{solve_finite_horizon, BsdeConfig, NeumannProblem};
use crate::error::{LabError, Result};
use crate::pde_oracle::{solve_parabolic_fd, FdConfig, FdErgodic, GridField};
use crate::stats::{fit_line, Estimate, LineFit};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Bsde,
    #[default]
    FdOracle,
    Both,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Bsde => "bsde",
            Source::FdOracle => "fd_oracle",
            Source::Both => "both",
        }
    }
}

/// How `u(T, x)` is computed.
#[derive(Clone, Debug)]
pub enum Evaluator {
    Fd(FdConfig),
    /// Pointwise regression runs; `date_step` fixes the regression dates so
    /// every horizon shares the same paths.
    Bsde { cfg: BsdeConfig, date_step: f64 },
}

impl Evaluator {
    pub fn source(&self) -> Source {
        match self {
            Evaluator::Fd(_) => Source::FdOracle,
            Evaluator::Bsde { .. } => Source::Bsde,
        }
    }

    /// `u(T, x)` for every `(T, x)`, indexed `[T][x]`.
    pub fn evaluate(&self, problem: &NeumannProblem, t_grid: &[f64], x_grid: &[Vec<f64>]) -> Result<Vec<Vec<Estimate>>> {
        check_grid(t_grid)?;
        match self {
            Evaluator::Fd(fd) => {
                let t_max = *t_grid.last().expect("checked non-empty");
                let cfg = FdConfig { save_every: None, save_at: t_grid.to_vec(), ..fd.clone() };
                let field = solve_parabolic_fd(problem, t_max, &cfg)?;
                let tol = 0.5 * cfg.dt + 1e-12;
                t_grid
                    .iter()
                    .map(|&t| {
                        let k = field.snapshot(t, tol).ok_or_else(|| {
                            LabError::Parameter(format!("horizon {t} is not a multiple of the FD step {}", cfg.dt))
                        })?;
                        Ok(x_grid.iter().map(|x| Estimate::exact(field.value(k, x[0]))).collect())
                    })
                    .collect()
            }
            Evaluator::Bsde { cfg, date_step } => t_grid
                .iter()
                .map(|&t| {
                    let n_steps = ((t / date_step).round() as usize).max(1);
                    let c = BsdeConfig { n_steps, ..cfg.clone() };
                    x_grid
                        .iter()
                        .map(|x| {
                            let s = solve_finite_horizon(problem, t, x, &c)?;
                            for f in &s.flags {
                                log::warn!("asymptotics: T={t} x={x:?}: {f}");
                            }
                            Ok(s.y0)
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Parameter("horizon grid must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Ergodic reference `(λ, v)` used to renormalize.
#[derive(Clone, Debug)]
pub struct ErgodicReference {
    pub lambda: f64,
    pub xs: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl ErgodicReference {
    pub fn from_fd(e: &FdErgodic, x_grid: &[Vec<f64>]) -> Self {
        ErgodicReference { lambda: e.lambda, xs: x_grid.to_vec(), v: x_grid.iter().map(|x| e.v_at(x[0])).collect() }
    }

    pub fn from_solution(e: &crate::ebsde::ErgodicSolution) -> Self {
        ErgodicReference { lambda: e.lambda.mean, xs: e.x_grid.clone(), v: e.v.clone() }
    }

    fn v_at(&self, x: &[f64]) -> Result<f64> {
        self.xs
            .iter()
            .position(|p| p.len() == x.len() && p.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12))
            .map(|i| self.v[i])
            .ok_or_else(|| LabError::Parameter(format!("no v sample at {x:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub t: f64,
    pub u_over_t: Estimate,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct LambdaSweep {
    pub rows: Vec<LambdaRow>,
    /// Log-log fit of `|u/T - λ|` against `T` over the usable rows.
    pub fit: Option<LineFit>,
    /// Horizons entering the fit.
    pub window: (f64, f64),
    pub truncated: bool,
}

/// `u(T, x)/T - λ` along `t_grid`, with the log-log slope.
pub fn lambda_sweep(problem: &NeumannProblem, t_grid: &[f64], x: &[f64], lambda: f64, eval: &Evaluator) -> Result<LambdaSweep> {
    check_grid(t_grid)?;
    if t_grid[t_grid.len() - 1] / t_grid[0] < 8.0 - 1e-12 {
        return Err(LabError::Precondition("lambda sweep needs max(T)/min(T) >= 8".into()));
    }
    let u = eval.evaluate(problem, t_grid, &[x.to_vec()])?;
    let rows: Vec<LambdaRow> = t_grid
        .iter()
        .zip(&u)
        .map(|(&t, us)| {
            let e = Estimate { mean: us[0].mean / t, se: us[0].se / t };
            LambdaRow { t, u_over_t: e, error: e.mean - lambda }
        })
        .collect();
    let usable: Vec<&LambdaRow> =
        rows.iter().filter(|r| r.error.abs() > (3.0 * r.u_over_t.se).max(1e-14)).collect();
    let truncated = usable.len() < rows.len();
    if truncated {
        log::warn!("lambda sweep: {} of {} horizons below the noise level", rows.len() - usable.len(), rows.len());
    }
    let xs: Vec<f64> = usable.iter().map(|r| r.t.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|r| r.error.abs().ln()).collect();
    let window = match (usable.first(), usable.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (f64::NAN, f64::NAN),
    };
    Ok(LambdaSweep { rows, fit: fit_line(&xs, &ys), window, truncated })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub t: f64,
    pub x: [f64; 3],
    pub u: Estimate,
    pub w: f64,
}

/// `w_T(x)` on a `(T, x)` grid for one source.
#[derive(Clone, Debug)]
pub struct Profile {
    pub source: Source,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<Vec<f64>>,
    /// `u[T][x]`.
    pub u: Vec<Vec<Estimate>>,
    /// `w[T][x]`.
    pub w: Vec<Vec<f64>>,
    pub lambda: f64,
    pub v: Vec<f64>,
}

impl Profile {
    /// `sup_x w - inf_x w` per horizon.
    pub fn spread(&self) -> Vec<f64> {
        self.w
            .iter()
            .map(|row| {
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .collect()
    }

    /// Largest standard error of `u` at each horizon.
    fn noise(&self) -> Vec<f64> {
        self.u.iter().map(|row| row.iter().map(|e| e.se).fold(0.0, f64::max)).collect()
    }
}

pub fn renormalized_profile(
    problem: &NeumannProblem,
    t_grid: &[f64],
    x_grid: &[Vec<f64>],
    reference: &ErgodicReference,
    eval: &Evaluator,
) -> Result<Profile> {
    let v: Vec<f64> = x_grid.iter().map(|x| reference.v_at(x)).collect::<Result<_>>()?;
    let u = eval.evaluate(problem, t_grid, x_grid)?;
    let w = t_grid
        .iter()
        .zip(&u)
        .map(|(&t, row)| row.iter().zip(&v).map(|(e, vx)| e.mean - reference.lambda * t - vx).collect())
        .collect();
    Ok(Profile { source: eval.source(), t_grid: t_grid.to_vec(), x_grid: x_grid.to_vec(), u, w, lambda: reference.lambda, v })
}

/// Fitted rate, or the reason it is not a point estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Rate {
    Estimate(f64),
    /// Noise-dominated tail: the decay is at least this fast.
    LowerBound(f64),
    /// `w` does not move: no decay to fit.
    Infinite,
}

impl Rate {
    pub fn value(self) -> f64 {
        match self {
            Rate::Estimate(v) | Rate::LowerBound(v) => v,
            Rate::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RateFit {
    pub l_hat: f64,
    /// Per-point limits.
    pub l_x: Vec<f64>,
    pub eta: Rate,
    pub r2: f64,
    pub window: (f64, f64),
    /// Joint fit `w = L_x + C_x e^{-ηT}` by variable projection over `η`.
    pub joint_eta: Option<f64>,
    pub joint_l: Option<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FitOptions {
    pub burn_in: f64,
    /// Absolute floor below which `|w_T - L|` is treated as zero.
    pub floor: f64,
    /// Multiple of the standard error used as an extra floor for MC sources.
    pub noise_k: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { burn_in: 0.5, floor: 1e-9, noise_k: 3.0 }
    }
}

/// Per-point `(L_x, C_x)` and the residual sum of squares for a given `η`.
fn project(t: &[f64], ys: &[f64], eta: f64) -> (f64, f64, f64) {
    let es: Vec<f64> = t.iter().map(|t| (-eta * t).exp()).collect();
    let n = t.len() as f64;
    let (se, see) = (es.iter().sum::<f64>(), es.iter().map(|e| e * e).sum::<f64>());
    let (sy, sey) = (ys.iter().sum::<f64>(), es.iter().zip(ys).map(|(e, y)| e * y).sum::<f64>());
    let det = n * see - se * se;
    if det.abs() < 1e-300 {
        let l = sy / n;
        return (l, 0.0, ys.iter().map(|y| (y - l) * (y - l)).sum());
    }
    let c = (n * sey - se * sy) / det;
    let l = (sy - c * se) / n;
    let rss = es.iter().zip(ys).map(|(e, y)| (y - l - c * e).powi(2)).sum();
    (l, c, rss)
}

fn joint_fit(t: &[f64], w: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
    if t.len() < 3 {
        return None;
    }
    let n_x = w[0].len();
    let cols: Vec<Vec<f64>> = (0..n_x).map(|j| w.iter().map(|row| row[j]).collect()).collect();
    let cost = |eta: f64| cols.iter().map(|ys| project(t, ys, eta).2).sum::<f64>();
    // Golden section on log(η).
    let (mut a, mut b) = ((1e-3f64).ln(), (200.0f64).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (cost(c.exp()), cost(d.exp()));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d.exp());
        }
        if (b - a).abs() < 1e-10 {
            break;
        }
    }
    let eta = (0.5 * (a + b)).exp();
    Some((eta, cols.iter().map(|ys| project(t, ys, eta).0).collect()))
}

/// `L̂` and `η̂` from a profile.
///
/// `L̂_x` is `w` at the largest horizon corrected by the geometric tail of
/// the last two increments; `η̂` is minus the slope of `log sup_x |w_T - L̂_x|`
/// over the horizons past the burn-in that stay above the noise floor.
pub fn fit_limit_and_rate(profile: &Profile, opts: &FitOptions) -> Result<RateFit> {
    let n_t = profile.t_grid.len();
    if n_t < 5 {
        return Err(LabError::Precondition(format!("rate fit needs at least 5 horizons, got {n_t}")));
    }
    let t = &profile.t_grid;
    let w = &profile.w;
    let noise = profile.noise();
    let floor_at = |k: usize| opts.floor.max(opts.noise_k * noise[k]);
    let n_x = profile.x_grid.len();

    let moves = (0..n_t).any(|k| (0..n_x).any(|j| (w[k][j] - w[n_t - 1][j]).abs() > floor_at(k)));
    if !moves {
        let l_x: Vec<f64> = w[n_t - 1].clone();
        let l_hat = l_x.iter().sum::<f64>() / n_x as f64;
        return Ok(RateFit {
            l_hat,
            l_x,
            eta: Rate::Infinite,
            r2: 1.0,
            window: (t[0], t[n_t - 1]),
            joint_eta: None,
            joint_l: None,
            residuals: vec![0.0; n_t],
        });
    }

    let l_x: Vec<f64> = (0..n_x)
        .map(|j| {
            let (a, b, c) = (w[n_t - 3][j], w[n_t - 2][j], w[n_t - 1][j]);
            let (d1, d2) = (b - a, c - b);
            let h1 = t[n_t - 2] - t[n_t - 3];
            let h2 = t[n_t - 1] - t[n_t - 2];
            if d2.abs() <= floor_at(n_t - 1) || d1.abs() <= floor_at(n_t - 2) || d1 * d2 <= 0.0 {
                return c;
            }
            // Local rate from the two increments, then the remaining geometric tail.
            let eta = -((d2 / d1).abs().ln() - (h2 / h1).ln()) / (0.5 * (h1 + h2));
            if !(eta > 0.0) {
                return c;
            }
            let q = (-eta * h2).exp();
            c + d2 * q / (1.0 - q)
        })
        .collect();
    let l_hat = l_x.iter().sum::<f64>() / n_x as f64;

    let gaps: Vec<f64> =
        (0..n_t).map(|k| (0..n_x).map(|j| (w[k][j] - l_x[j]).abs()).fold(0.0, f64::max)).collect();
    let window_idx: Vec<usize> = (0..n_t).filter(|&k| t[k] >= opts.burn_in && gaps[k] > floor_at(k)).collect();
    let monotone = window_idx.windows(2).all(|p| gaps[p[1]] < gaps[p[0]]);
    let xs: Vec<f64> = window_idx.iter().map(|&k| t[k]).collect();
    let ys: Vec<f64> = window_idx.iter().map(|&k| gaps[k].ln()).collect();
    let fit = fit_line(&xs, &ys);
    let (eta, r2) = match fit {
        Some(f) if monotone => (Rate::Estimate(-f.slope), f.r2),
        Some(f) => (Rate::LowerBound(-f.slope), f.r2),
        None => {
            // Everything past the burn-in is already below the floor.
            let k0 = (0..n_t).find(|&k| t[k] >= opts.burn_in).unwrap_or(0);
            let bound = if gaps[k0] > 0.0 && t[k0] > 0.0 { -(floor_at(k0) / gaps[0].max(floor_at(k0))).ln() / t[k0] } else { 0.0 };
            (Rate::LowerBound(bound.max(0.0)), f64::NAN)
        }
    };
    let residuals = match fit {
        Some(f) => (0..n_t).map(|k| if gaps[k] > 0.0 { gaps[k].ln() - (f.intercept + f.slope * t[k]) } else { f64::NAN }).collect(),
        None => vec![f64::NAN; n_t],
    };
    let burn: Vec<usize> = (0..n_t).filter(|&k| t[k] >= opts.burn_in).collect();
    let joint = joint_fit(&burn.iter().map(|&k| t[k]).collect::<Vec<_>>(), &burn.iter().map(|&k| w[k].clone()).collect::<Vec<_>>());
    let window = match (window_idx.first(), window_idx.last()) {
        (Some(&a), Some(&b)) => (t[a], t[b]),
        _ => (f64::NAN, f64::NAN),
    };
    Ok(RateFit {
        l_hat,
        l_x,
        eta,
        r2,
        window,
        joint_eta: joint.as_ref().map(|j| j.0),
        joint_l: joint.map(|j| j.1.iter().sum::<f64>() / n_x as f64),
        residuals,
    })
}

/// Profiles, fits and flags for one study.
#[derive(Clone, Debug)]
pub struct AsymptoticsReport {
    pub source: Source,
    pub profiles: Vec<Profile>,
    pub fits: Vec<RateFit>,
    pub flags: Vec<String>,
}

impl AsymptoticsReport {
    /// Rows `T,x,u,se_u,w` for profile `i`.
    pub fn write_csv<W: std::io::Write>(&self, i: usize, mut out: W) -> std::io::Result<()> {
        let p = &self.profiles[i];
        writeln!(out, "T,x,u,se_u,w")?;
        for (k, t) in p.t_grid.iter().enumerate() {
            for (j, x) in p.x_grid.iter().enumerate() {
                let xs: Vec<String> = x.iter().map(|c| c.to_string()).collect();
                let xs = if xs.len() == 1 { xs[0].clone() } else { format!("\"{}\"", xs.join(" ")) };
                writeln!(out, "{t},{xs},{},{},{}", p.u[k][j].mean, p.u[k][j].se, p.w[k][j])?;
            }
        }
        Ok(())
    }

    /// `key = value` summary for profile `i`.
    pub fn summary(&self, i: usize) -> String {
        let (p, f) = (&self.profiles[i], &self.fits[i]);
        let mut s = String::new();
        let _ = writeln!(s, "source = \"{}\"", p.source.name());
        let _ = writeln!(s, "lambda_hat = {}", p.lambda);
        let _ = writeln!(s, "L_hat = {}", f.l_hat);
        let (kind, val) = match f.eta {
            Rate::Estimate(v) => ("estimate", v.to_string()),
            Rate::LowerBound(v) => ("lower_bound", v.to_string()),
            Rate::Infinite => ("infinite", "inf".to_string()),
        };
        let _ = writeln!(s, "eta_hat = {val}");
        let _ = writeln!(s, "eta_kind = \"{kind}\"");
        let _ = writeln!(s, "r2 = {}", f.r2);
        let _ = writeln!(s, "window = [{}, {}]", f.window.0, f.window.1);
        if let (Some(e), Some(l)) = (f.joint_eta, f.joint_l) {
            let _ = writeln!(s, "joint_eta = {e}");
            let _ = writeln!(s, "joint_L = {l}");
        }
        let v: Vec<String> = p.v.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "v_hat = [{}]", v.join(", "));
        let flags: Vec<String> = self.flags.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(s, "flags = [{}]", flags.join(", "));
        s
    }
}

/// Run the study for each evaluator and fit every profile. `w_bound` flags
/// profiles whose `|w|` exceeds it.
pub fn study(
    problem: &NeumannProblem,
    t_grid: &[f64],
    x_grid: &[Vec<f64>],
    reference: &ErgodicReference,
    evaluators: &[Evaluator],
    opts: &FitOptions,
    w_bound: f64,
) -> Result<AsymptoticsReport> {
    let mut profiles = Vec::new();
    let mut fits = Vec::new();
    let mut flags = Vec::new();
    for eval in evaluators {
        let p = renormalized_profile(problem, t_grid, x_grid, reference, eval)?;
        let sup = p.w.iter().flatten().fold(0.0f64, |m, w| m.max(w.abs()));
        if sup > w_bound {
            flags.push(format!("{}: sup |w| = {sup} exceeds {w_bound}", p.source.name()));
        }
        fits.push(fit_limit_and_rate(&p, opts)?);
        profiles.push(p);
    }
    let source = match evaluators.len() {
        1 => evaluators[0].source(),
        _ => Source::Both,
    };
    Ok(AsymptoticsReport { source, profiles, fits, flags })
}

/// Convenience: snapshot values of an FD field on `x_grid` at `t`.
pub fn fd_values(field: &GridField, t: f64, x_grid: &[f64]) -> Vec<f64> {
    x_grid.iter().map(|&x| field.value_at(t, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Driver, ScalarField};
    use crate::pde_oracle::solve_ergodic_fd;

    fn xs() -> Vec<Vec<f64>> {
        [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(|&x| vec![x]).collect()
    }

    fn t_grid() -> Vec<f64> {
        (1..=12).map(|k| 0.25 * k as f64).collect()
    }

    #[test]
    fn projection_recovers_exact_exponential() {
        let t: Vec<f64> = (1..=10).map(|k| k as f64 * 0.3).collect();
        let w: Vec<Vec<f64>> = t.iter().map(|t| vec![-0.2 + 0.7 * (-1.7 * t).exp(), -0.2 - 0.1 * (-1.7 * t).exp()]).collect();
        let (eta, l) = joint_fit(&t, &w).unwrap();
        assert!((eta - 1.7).abs() < 1e-6, "{eta}");
        assert!(l.iter().all(|l| (l + 0.2).abs() < 1e-8));
    }

    #[test]
    fn constant_driver_has_no_transient() {
        let p = NeumannProblem::benchmark().with_boundary(ScalarField::zero()).with_driver(Driver::constant(0.4));
        let reference = ErgodicReference { lambda: 0.4, xs: xs(), v: vec![0.0; 5] };
        let prof = renormalized_profile(&p, &t_grid(), &xs(), &reference, &Evaluator::Fd(FdConfig::default())).unwrap();
        assert!(prof.w.iter().flatten().all(|w| w.abs() < 1e-10));
        let fit = fit_limit_and_rate(&prof, &FitOptions::default()).unwrap();
        assert_eq!(fit.eta, Rate::Infinite);
        assert!(fit.l_hat.abs() < 1e-10);
        let sweep = lambda_sweep(&p, &[1.0, 2.0, 4.0, 8.0], &[0.0], 0.4, &Evaluator::Fd(FdConfig::default())).unwrap();
        assert!(sweep.rows.iter().all(|r| r.error.abs() < 1e-12));
        assert!(sweep.fit.is_none() && sweep.truncated);
    }

    #[test]
    fn benchmark_limit_and_rate() {
        let p = NeumannProblem::benchmark();
        let e = solve_ergodic_fd(&p, 0.0, 64.0, 1e-10, &FdConfig::default()).unwrap();
        let reference = ErgodicReference::from_fd(&e, &xs());
        let prof = renormalized_profile(&p, &t_grid(), &xs(), &reference, &Evaluator::Fd(FdConfig::default())).unwrap();
        let fit = fit_limit_and_rate(&prof, &FitOptions::default()).unwrap();
        assert!((fit.l_hat + 1.0 / 6.0).abs() < 1e-3, "{}", fit.l_hat);
        let eta = std::f64::consts::PI.powi(2) / 2.0;
        assert!((fit.eta.value() - eta).abs() < 0.15 * eta, "{:?}", fit.eta);
        assert!((fit.joint_eta.unwrap() - eta).abs() < 0.05 * eta);
        let spread = prof.spread();
        assert!(spread.windows(2).all(|s| s[1] <= s[0] + 1e-6));
    }

    #[test]
    fn odd_terminal_mode_sets_the_rate() {
        let p = NeumannProblem::benchmark().with_terminal(ScalarField::new("x", |x| x[0]));
        let e = solve_ergodic_fd(&p, 0.0, 64.0, 1e-10, &FdConfig::default()).unwrap();
        let reference = ErgodicReference::from_fd(&e, &xs());
        let t: Vec<f64> = (1..=16).map(|k| 0.5 * k as f64).collect();
        let prof = renormalized_profile(&p, &t, &xs(), &reference, &Evaluator::Fd(FdConfig::default())).unwrap();
        let fit = fit_limit_and_rate(&prof, &FitOptions::default()).unwrap();
        let eta = std::f64::consts::PI.powi(2) / 8.0;
        assert!((fit.eta.value() - eta).abs() < 0.15 * eta, "{:?}", fit.eta);
        let sweep = lambda_sweep(&NeumannProblem::benchmark(), &[2.0, 4.0, 8.0, 16.0], &[0.0], 0.5, &Evaluator::Fd(FdConfig::default())).unwrap();
        assert!((sweep.rows[0].error + 1.0 / 12.0).abs() < 2e-3);
        let slope = sweep.fit.unwrap().slope;
        assert!((-1.3..=-0.7).contains(&slope), "{slope}");
    }

    #[test]
    fn grids_are_validated() {
        let p = NeumannProblem::benchmark();
        let fd = Evaluator::Fd(FdConfig::default());
        assert!(lambda_sweep(&p, &[1.0, 2.0, 4.0], &[0.0], 0.5, &fd).is_err());
        assert!(lambda_sweep(&p, &[2.0, 1.0, 16.0], &[0.0], 0.5, &fd).is_err());
        let reference = ErgodicReference { lambda: 0.5, xs: xs(), v: vec![0.0; 5] };
        let prof = renormalized_profile(&p, &[1.0, 2.0], &xs(), &reference, &fd).unwrap();
        assert!(fit_limit_and_rate(&prof, &FitOptions::default()).is_err());
        assert!(renormalized_profile(&p, &[1.0], &[vec![0.3]], &reference, &fd).is_err());
    }
}

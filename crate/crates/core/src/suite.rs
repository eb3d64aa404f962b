//! The shipped benchmark suite: one check per acceptance criterion, each
//! writing its CSVs under `<out>/cNN_<name>/`, plus `acceptance.csv` and a
//! suite manifest at the top level.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asymptotics::{fit_limit_and_rate, lambda_sweep, renormalized_profile, ErgodicReference, Evaluator, FitOptions, Rate};
use crate::bsde::{solve_finite_horizon, BsdeConfig, NeumannProblem};
use crate::control::{verify_expansion, ControlConfig, ControlProblem, ExpansionConfig, Policy};
use crate::ebsde::{solve_ergodic, ErgodicConfig, ErgodicMethod};
use crate::error::Result;
use crate::exec::Exec;
use crate::experiment::{sha256_hex, Manifest, Sink, Status};
use crate::field::{Driver, ScalarField, VectorField};
use crate::geometry::{extend_drift, ConvexDomain};
use crate::pde_oracle::{flow_composition_check, solve_ergodic_fd, solve_parabolic_fd, FdConfig};
use crate::rng::derive_seed;
use crate::sde::{
    coupling_gap, moment_estimate, simulate, simulate_penalized, sup_sq_distance, PenaltyStep, ReflectionScheme, SdeCoefficients,
    Sigma, SimConfig, TestFunction, TimeGrid,
};
use crate::stats::{fit_line, Estimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub exec: Exec,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 20_240_601, exec: Exec::Parallel }
    }
}

struct Ctx {
    seed: u64,
    exec: Exec,
}

impl Ctx {
    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn x_grid() -> Vec<Vec<f64>> {
    [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(|&x| vec![x]).collect()
}

/// Ergodic benchmark: FD pair and both ergodic BSDE methods.
fn c1(ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let p = NeumannProblem::benchmark();
    let fd = solve_ergodic_fd(&p, 0.0, 64.0, 1e-10, &FdConfig::default())?;
    let fd_v_err = fd.xs.iter().zip(&fd.v).fold(0.0f64, |m, (x, v)| m.max((v - 0.5 * x * x).abs()));
    let fd_ok = (fd.lambda - 0.5).abs() <= 1e-4 && fd_v_err <= 1e-4;
    let mut ok = fd_ok;
    let mut detail = format!("fd: lambda={:.6} v_err={:.2e} {}", fd.lambda, fd_v_err, fmt_bool(fd_ok));
    let mut rows = Vec::new();
    for (method, paths, ds) in [(ErgodicMethod::Differencing, 10_000, 0.02), (ErgodicMethod::Discounted, 4000, 0.05)] {
        let cfg = ErgodicConfig {
            method,
            date_step: ds,
            bsde: BsdeConfig {
                n_paths: paths,
                substeps: 1,
                seed: ctx.seed(&format!("c1/{}", method.name())),
                exec: ctx.exec,
                ..Default::default()
            },
            ..Default::default()
        };
        let s = solve_ergodic(&p, &cfg)?;
        let v_err = s.x_grid.iter().zip(&s.v).fold(0.0f64, |m, (x, v)| m.max((v - 0.5 * x[0] * x[0]).abs()));
        let lam_ok = s.lambda.within(0.5, 3.0, 1e-2);
        let m_ok = lam_ok && v_err <= 2e-2;
        ok &= m_ok;
        detail += &format!(
            "; {}: lambda={:.4}±{:.4} v_err={:.4} {}",
            method.name(),
            s.lambda.mean,
            s.lambda.se,
            v_err,
            fmt_bool(m_ok)
        );
        for (x, (v, se)) in s.x_grid.iter().zip(s.v.iter().zip(&s.v_se)) {
            rows.push(format!("{},{},{v},{se},{},{}", method.name(), x[0], s.lambda.mean, s.lambda.se));
        }
    }
    sink.write("c01_ergodic/ebsde.csv", |w| {
        writeln!(w, "method,x,v,se_v,lambda,se_lambda")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    sink.write("c01_ergodic/fd_v.csv", |w| {
        writeln!(w, "x,v,exact")?;
        for (x, v) in fd.xs.iter().zip(&fd.v) {
            writeln!(w, "{x},{v},{}", 0.5 * x * x)?;
        }
        Ok(())
    })?;
    Ok(CriterionResult { id: 1, name: "ergodic benchmark".into(), pass: ok, detail })
}

/// Limit and exponential rate of the renormalized profile.
fn c2(_ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let pi2 = std::f64::consts::PI.powi(2);
    let base = NeumannProblem::benchmark();
    let e = solve_ergodic_fd(&base, 0.0, 64.0, 1e-10, &FdConfig::default())?;
    let xs = x_grid();
    let reference = ErgodicReference::from_fd(&e, &xs);
    let cases = [
        ("h=0", base.clone(), (1..=16).map(|k| 0.25 * k as f64).collect::<Vec<_>>(), pi2 / 2.0, Some(-1.0 / 6.0)),
        (
            "h=x",
            base.clone().with_terminal(ScalarField::new("x", |x| x[0])),
            (1..=16).map(|k| 0.5 * k as f64).collect::<Vec<_>>(),
            pi2 / 8.0,
            None,
        ),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    let mut rows = Vec::new();
    for (label, p, t_grid, eta_ref, l_ref) in cases {
        let prof = renormalized_profile(&p, &t_grid, &xs, &reference, &Evaluator::Fd(FdConfig::default()))?;
        let fit = fit_limit_and_rate(&prof, &FitOptions::default())?;
        let eta = fit.eta.value();
        let eta_ok = matches!(fit.eta, Rate::Estimate(_)) && (eta - eta_ref).abs() <= 0.15 * eta_ref;
        let l_ok = l_ref.is_none_or(|l| (fit.l_hat - l).abs() <= 1e-2);
        ok &= eta_ok && l_ok;
        detail.push(format!(
            "{label}: L={:.5} eta={:.4} (ref {:.4}) {}",
            fit.l_hat,
            eta,
            eta_ref,
            fmt_bool(eta_ok && l_ok)
        ));
        for (k, t) in prof.t_grid.iter().enumerate() {
            for (j, x) in prof.x_grid.iter().enumerate() {
                rows.push(format!("{label},{t},{},{},{}", x[0], prof.u[k][j].mean, prof.w[k][j]));
            }
        }
    }
    sink.write("c02_expansion/profile.csv", |w| {
        writeln!(w, "case,T,x,u,w")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(CriterionResult { id: 2, name: "large-time expansion".into(), pass: ok, detail: detail.join("; ") })
}

/// `C/T` rate of `u/T - λ`.
fn c3(_ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let p = NeumannProblem::benchmark();
    let e = solve_ergodic_fd(&p, 0.0, 64.0, 1e-10, &FdConfig::default())?;
    let sweep = lambda_sweep(&p, &[2.0, 4.0, 8.0, 16.0], &[0.0], e.lambda, &Evaluator::Fd(FdConfig::default()))?;
    let slope = sweep.fit.map_or(f64::NAN, |f| f.slope);
    let err2 = sweep.rows[0].error;
    let ok = (-1.3..=-0.7).contains(&slope) && (err2 + 1.0 / 12.0).abs() <= 2e-3;
    sink.write("c03_lambda_rate/sweep.csv", |w| {
        writeln!(w, "T,u_over_T,error")?;
        for r in &sweep.rows {
            writeln!(w, "{},{},{}", r.t, r.u_over_t.mean, r.error)?;
        }
        Ok(())
    })?;
    Ok(CriterionResult {
        id: 3,
        name: "lambda rate".into(),
        pass: ok,
        detail: format!("slope={slope:.4} error(T=2)={err2:.5} (ref {:.5})", -1.0 / 12.0),
    })
}

/// Regression Monte Carlo against the FD oracle.
fn c4(ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let drivers = [("benchmark", Driver::zero()), ("abs_z", Driver::abs_z(-1.0))];
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (label, driver) in drivers {
        let p = NeumannProblem::benchmark().with_driver(driver);
        let fd = solve_parabolic_fd(&p, 2.0, &FdConfig { save_at: vec![0.5, 1.0, 2.0], ..FdConfig::default() })?;
        for t in [0.5, 1.0, 2.0] {
            let k = fd.snapshot(t, 1e-9).expect("saved horizon");
            for x in [-0.5, 0.0, 0.5] {
                let mut cfg = BsdeConfig {
                    n_paths: 10_000,
                    n_steps: 100,
                    substeps: 2,
                    seed: ctx.seed(&format!("c4/{label}/T={t}/x={x}")),
                    exec: ctx.exec,
                    ..Default::default()
                };
                cfg.basis.degree = 6;
                let s = solve_finite_horizon(&p, t, &[x], &cfg)?;
                let u = fd.value(k, x);
                let tol = (3.0 * s.y0.se).max(2e-2);
                let pass = (s.y0.mean - u).abs() <= tol && !s.is_flagged();
                ok &= pass;
                worst = worst.max((s.y0.mean - u).abs() / tol);
                rows.push(format!("{label},{t},{x},{},{},{u},{pass}", s.y0.mean, s.y0.se));
            }
        }
    }
    sink.write("c04_representation/y0.csv", |w| {
        writeln!(w, "driver,T,x,y0,se,u_fd,pass")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(CriterionResult {
        id: 4,
        name: "representation".into(),
        pass: ok,
        detail: format!("18 cases, worst |y0-u|/tol = {worst:.3}"),
    })
}

/// Flow composition residual and its refinement. The restart is an
/// independent solve, with its own damped start.
fn c5(_ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let base = NeumannProblem::benchmark();
    let odd = base.clone().with_terminal(ScalarField::new("x", |x| x[0]));
    let fine_cfg = FdConfig { n_cells: 800, dt: 5e-4, ..FdConfig::default() };
    let mut ok = true;
    let mut rows = Vec::new();
    let mut detail = Vec::new();
    for (label, p) in [("h=0", base), ("h=x", odd)] {
        let coarse = flow_composition_check(&p, 1.0, 1.0, &FdConfig::default())?;
        let fine = flow_composition_check(&p, 1.0, 1.0, &fine_cfg)?;
        let ratio = coarse / fine;
        let pass = coarse <= 5e-4 && fine > 0.0 && ratio >= 3.0;
        ok &= pass;
        rows.push(format!("{label},400,0.001,{coarse}"));
        rows.push(format!("{label},800,0.0005,{fine}"));
        detail.push(format!("{label}: residual={coarse:.3e} refined={fine:.3e} ratio={ratio:.2}"));
    }
    sink.write("c05_flow/residual.csv", |w| {
        writeln!(w, "case,n_cells,dt,residual")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(CriterionResult { id: 5, name: "flow identity".into(), pass: ok, detail: detail.join("; ") })
}

/// Penalized paths converge to the reflected ones.
fn c6(ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let g = ConvexDomain::unit_interval();
    let coeffs = SdeCoefficients::reflected(VectorField::zero(1), Sigma::scalar(1, 1.0)?, g.clone())?;
    let grid = TimeGrid::uniform(0.0, 1.0, 1000)?;
    let sim = SimConfig {
        n_paths: 4000,
        seed: ctx.seed("c6"),
        scheme: ReflectionScheme::Projection,
        exec: ctx.exec,
        ..Default::default()
    };
    let x0 = [0.5];
    let reference = simulate(&coeffs, &x0, &grid, &sim)?;
    let ext = extend_drift(VectorField::zero(1), &g);
    let ns = [8u32, 16, 32, 64, 128];
    let mut est: Vec<Estimate> = Vec::new();
    for &n in &ns {
        let b = simulate_penalized(&ext, &coeffs.sigma, n, &x0, &grid, &sim, PenaltyStep::Auto)?;
        est.push(sup_sq_distance(&b, &reference)?);
    }
    let mut inversions = 0;
    let mut ok = true;
    for w in est.windows(2) {
        if w[1].mean >= w[0].mean {
            inversions += 1;
            let pooled = (w[0].se * w[0].se + w[1].se * w[1].se).sqrt();
            if w[1].mean - w[0].mean > 2.0 * pooled {
                ok = false;
            }
        }
    }
    ok &= inversions <= 1;
    sink.write("c06_penalization/sup_sq.csv", |w| {
        writeln!(w, "n,sup_sq,se")?;
        for (n, e) in ns.iter().zip(&est) {
            writeln!(w, "{n},{},{}", e.mean, e.se)?;
        }
        Ok(())
    })?;
    let vals: Vec<String> = est.iter().map(|e| format!("{:.3e}", e.mean)).collect();
    Ok(CriterionResult {
        id: 6,
        name: "penalization".into(),
        pass: ok,
        detail: format!("E sup|X^n-X|^2 = [{}], inversions={inversions}", vals.join(", ")),
    })
}

fn ou() -> Result<SdeCoefficients> {
    SdeCoefficients::free(VectorField::linear_restoring(1, 1.0), Sigma::scalar(1, 1.0)?)
}

/// `2Φ(e^{-t}/s_t) - 1` with `s_t^2 = (1 - e^{-2t})/2`.
pub fn ou_indicator_gap(t: f64) -> f64 {
    let s = ((1.0 - (-2.0 * t).exp()) / 2.0).sqrt();
    let n = Normal::standard();
    2.0 * n.cdf((-t).exp() / s) - 1.0
}

/// OU coupling gap.
fn c7(ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let grid = TimeGrid::uniform(0.0, 3.0, 300)?;
    let sim = SimConfig { n_paths: 20_000, seed: ctx.seed("c7"), exec: ctx.exec, ..Default::default() };
    let gaps = coupling_gap(&ou()?, &TestFunction::positive_half_space(), &[1.0], &[-1.0], &grid, &sim)?;
    let at1 = gaps.iter().find(|(t, _)| (t - 1.0).abs() < 1e-9).expect("t = 1 on grid").1;
    let exact = ou_indicator_gap(1.0);
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        gaps.iter().filter(|(t, e)| *t >= 0.5 && e.mean > 3.0 * e.se).map(|(t, e)| (*t, e.mean.ln())).unzip();
    let slope = fit_line(&xs, &ys).map_or(f64::NAN, |f| f.slope);
    let ok = at1.within(exact, 3.0, 0.0) && slope < 0.0 && (-slope - 1.0).abs() <= 0.15;
    sink.write("c07_coupling/gap.csv", |w| {
        writeln!(w, "t,gap,se,exact")?;
        for (t, e) in &gaps {
            writeln!(w, "{t},{},{},{}", e.mean, e.se, if *t > 0.0 { ou_indicator_gap(*t) } else { 1.0 })?;
        }
        Ok(())
    })?;
    Ok(CriterionResult {
        id: 7,
        name: "coupling".into(),
        pass: ok,
        detail: format!("gap(1)={:.4}±{:.4} exact={exact:.4} rate={:.4}", at1.mean, at1.se, -slope),
    })
}

/// OU second moment and the reflected bound.
fn c8(ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let grid = TimeGrid::uniform(0.0, 1.0, 1000)?;
    let sim = SimConfig { n_paths: 20_000, seed: ctx.seed("c8/ou"), exec: ctx.exec, ..Default::default() };
    let b = simulate(&ou()?, &[0.0], &grid, &sim)?;
    let m = moment_estimate(&b, 2)?;
    let exact = (1.0 - (-2.0f64).exp()) / 2.0;
    let mut ok = m.within(exact, 3.0, 0.0);
    let p = NeumannProblem::benchmark();
    let diam = p.domain().diameter();
    let mut rows = vec![format!("ou,0,2,{},{},{exact}", m.mean, m.se)];
    for x0 in [-0.9, 0.0, 0.7] {
        let sim = SimConfig { n_paths: 5000, seed: ctx.seed(&format!("c8/reflected/{x0}")), exec: ctx.exec, ..Default::default() };
        let b = simulate(&p.coeffs, &[x0], &TimeGrid::uniform(0.0, 2.0, 1000)?, &sim)?;
        for q in [2u32, 4] {
            let r = moment_estimate(&b, q)?;
            let bound = diam.powi(q as i32);
            ok &= r.mean <= bound;
            rows.push(format!("reflected,{x0},{q},{},{},{bound}", r.mean, r.se));
        }
    }
    sink.write("c08_moments/moments.csv", |w| {
        writeln!(w, "case,x0,p,moment,se,reference")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(CriterionResult {
        id: 8,
        name: "moment bound".into(),
        pass: ok,
        detail: format!("ou E|X_1|^2={:.4}±{:.4} exact={exact:.4}; reflected moments within diameter^p", m.mean, m.se),
    })
}

/// Optimal and suboptimal control costs and the expansion of `J^T`.
fn c9(ctx: &Ctx, sink: &mut Sink) -> Result<CriterionResult> {
    let cp = ControlProblem::abs_z_benchmark();
    let subs = vec![
        Policy::constant(&cp, 0)?,
        Policy::constant(&cp, 1)?,
        Policy::new("outward", |_, x: &[f64]| usize::from(x[0] > 0.0)),
    ];
    let cfg = ExpansionConfig {
        control: ControlConfig { seed: ctx.seed("c9"), exec: ctx.exec, ..Default::default() },
        ..Default::default()
    };
    let x0 = [0.0];
    let r = verify_expansion(&cp, &x0, &subs, &cfg)?;
    let optimal_ok = r.rows.iter().all(|row| row.cost.within(row.u_fd, 3.0, 2e-2));
    let sub_ok = r.suboptimal.iter().all(|s| s.cost.mean >= s.u_fd - 3.0 * s.cost.se);
    let stab_ok = r.stabilized(3.0, 2e-2);
    sink.write("c09_control/expansion.csv", |w| r.write_csv(w))?;
    let ws: Vec<String> = r.rows.iter().map(|row| format!("{:.4}", row.w.mean)).collect();
    Ok(CriterionResult {
        id: 9,
        name: "control".into(),
        pass: optimal_ok && sub_ok && stab_ok,
        detail: format!(
            "J^T=u {}; suboptimal J^T>=u {}; J^T-λT-v=[{}] vs L={:.4} {} (sign {:+})",
            fmt_bool(optimal_ok),
            fmt_bool(sub_ok),
            ws.join(", "),
            r.l_hat,
            fmt_bool(stab_ok),
            r.limit_sign()
        ),
    })
}

type Check = fn(&Ctx, &mut Sink) -> Result<CriterionResult>;

const CHECKS: [(u32, &str, Check); 9] = [
    (1, "ergodic benchmark", c1),
    (2, "large-time expansion", c2),
    (3, "lambda rate", c3),
    (4, "representation", c4),
    (5, "flow identity", c5),
    (6, "penalization", c6),
    (7, "coupling", c7),
    (8, "moment bound", c8),
    (9, "control", c9),
];

fn write_acceptance(w: &mut Vec<u8>, results: &[CriterionResult]) -> std::io::Result<()> {
    writeln!(w, "criterion,name,pass,detail")?;
    for r in results {
        writeln!(w, "{},{},{},\"{}\"", r.id, r.name, r.pass, r.detail.replace('"', "'"))?;
    }
    Ok(())
}

/// Run criteria 1 to 9 into `out`. A check that errors counts as failed.
pub fn run_suite(out: &Path, opts: &SuiteOptions) -> Result<Vec<CriterionResult>> {
    let ctx = Ctx { seed: opts.seed, exec: opts.exec };
    let mut sink = Sink::new(out)?;
    let mut manifest = Manifest {
        name: "bench".into(),
        kind: "suite".into(),
        status: Status::Incomplete,
        seed: opts.seed,
        error: None,
        flags: Vec::new(),
        metrics: Default::default(),
        artifacts: Vec::new(),
        config: None,
    };
    manifest.save(out)?;
    let mut results = Vec::new();
    for (id, name, check) in CHECKS {
        let started = Instant::now();
        let r = check(&ctx, &mut sink).unwrap_or_else(|e| CriterionResult {
            id,
            name: name.to_string(),
            pass: false,
            detail: format!("error: {e}"),
        });
        log::info!("criterion {id} ({name}): {} in {:.1?}", fmt_bool(r.pass), started.elapsed());
        sink.metric(format!("criterion_{id}"), f64::from(u8::from(r.pass)));
        results.push(r);
    }
    sink.write("acceptance.csv", |w| write_acceptance(w, &results))?;
    manifest.artifacts = std::mem::take(&mut sink.artifacts);
    manifest.metrics = std::mem::take(&mut sink.metrics);
    manifest.flags = results.iter().filter(|r| !r.pass).map(|r| format!("criterion {} failed", r.id)).collect();
    manifest.status = if manifest.flags.is_empty() { Status::Complete } else { Status::Flagged };
    manifest.save(out)?;
    Ok(results)
}

/// CSV files under `dir`, relative paths, sorted.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for e in std::fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Compare every CSV of two suite runs. Returns the differing or missing files.
pub fn compare_runs(a: &Path, b: &Path) -> Result<Vec<String>> {
    let fa = csv_files(a)?;
    let fb = csv_files(b)?;
    let mut diffs = Vec::new();
    for f in fa.iter().filter(|f| !fb.contains(f)) {
        diffs.push(format!("{}: only in first run", f.display()));
    }
    for f in fb.iter().filter(|f| !fa.contains(f)) {
        diffs.push(format!("{}: only in second run", f.display()));
    }
    for f in fa.iter().filter(|f| fb.contains(f)) {
        let (x, y) = (std::fs::read(a.join(f))?, std::fs::read(b.join(f))?);
        if x != y {
            diffs.push(format!("{}: {} vs {}", f.display(), &sha256_hex(&x)[..12], &sha256_hex(&y)[..12]));
        }
    }
    Ok(diffs)
}

/// Criterion 10 from two completed runs.
pub fn determinism(a: &Path, b: &Path) -> Result<CriterionResult> {
    let diffs = compare_runs(a, b)?;
    let n = csv_files(a)?.len();
    let pass = diffs.is_empty() && n > 0;
    let detail = if pass { format!("{n} CSV files byte-identical") } else { format!("{n} files, differences: {}", diffs.join("; ")) };
    Ok(CriterionResult { id: 10, name: "determinism".into(), pass, detail })
}

/// Add (or replace) a criterion row in the suite run at `dir`, keeping the
/// manifest hashes, metrics and status in step.
pub fn record(dir: &Path, result: &CriterionResult) -> Result<()> {
    let mut manifest = Manifest::load(dir)?;
    let body = std::fs::read_to_string(dir.join("acceptance.csv"))?;
    let mut rows: Vec<String> = body.lines().skip(1).filter(|l| !l.starts_with(&format!("{},", result.id))).map(String::from).collect();
    let mut one = Vec::new();
    write_acceptance(&mut one, std::slice::from_ref(result))?;
    rows.push(String::from_utf8_lossy(&one).lines().nth(1).unwrap_or_default().to_string());
    rows.sort_by_key(|l| l.split(',').next().and_then(|k| k.parse::<u32>().ok()).unwrap_or(u32::MAX));
    let text = format!("criterion,name,pass,detail\n{}\n", rows.join("\n"));
    std::fs::write(dir.join("acceptance.csv"), &text)?;
    for a in manifest.artifacts.iter_mut().filter(|a| a.path == "acceptance.csv") {
        a.sha256 = sha256_hex(text.as_bytes());
    }
    manifest.metrics.insert(format!("criterion_{}", result.id), f64::from(u8::from(result.pass)));
    let flag = format!("criterion {} failed", result.id);
    manifest.flags.retain(|f| *f != flag);
    if !result.pass {
        manifest.flags.push(flag);
    }
    manifest.status = if manifest.flags.is_empty() { Status::Complete } else { Status::Flagged };
    manifest.save(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_gap_reference_value() {
        assert!((ou_indicator_gap(1.0) - 0.424).abs() < 1e-3, "{}", ou_indicator_gap(1.0));
        assert!(ou_indicator_gap(3.0) < ou_indicator_gap(1.0));
    }

    #[test]
    fn comparison_finds_differences() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(a.path().join("s")).unwrap();
        std::fs::create_dir_all(b.path().join("s")).unwrap();
        std::fs::write(a.path().join("s/x.csv"), "1\n").unwrap();
        std::fs::write(b.path().join("s/x.csv"), "1\n").unwrap();
        assert!(determinism(a.path(), b.path()).unwrap().pass);
        std::fs::write(b.path().join("s/x.csv"), "2\n").unwrap();
        std::fs::write(b.path().join("y.csv"), "2\n").unwrap();
        let d = compare_runs(a.path(), b.path()).unwrap();
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(!determinism(a.path(), b.path()).unwrap().pass);
    }

    #[test]
    fn recording_keeps_the_manifest_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = Sink::new(dir.path()).unwrap();
        let first = CriterionResult { id: 1, name: "a".into(), pass: true, detail: "ok".into() };
        sink.write("acceptance.csv", |w| write_acceptance(w, std::slice::from_ref(&first))).unwrap();
        let m = Manifest {
            name: "bench".into(),
            kind: "suite".into(),
            status: Status::Complete,
            seed: 1,
            error: None,
            flags: Vec::new(),
            metrics: Default::default(),
            artifacts: sink.artifacts.clone(),
            config: None,
        };
        m.save(dir.path()).unwrap();
        let bad = CriterionResult { id: 10, name: "determinism".into(), pass: false, detail: "x, \"y\"".into() };
        record(dir.path(), &bad).unwrap();
        let m = Manifest::load(dir.path()).unwrap();
        assert_eq!(m.status, Status::Flagged);
        let body = std::fs::read(dir.path().join("acceptance.csv")).unwrap();
        assert_eq!(m.artifacts[0].sha256, sha256_hex(&body));
        record(dir.path(), &CriterionResult { pass: true, ..bad }).unwrap();
        let m = Manifest::load(dir.path()).unwrap();
        assert_eq!(m.status, Status::Complete);
        let body = std::fs::read_to_string(dir.path().join("acceptance.csv")).unwrap();
        assert_eq!(body.lines().count(), 3, "{body}");
        assert!(body.lines().last().unwrap().starts_with("10,determinism,true"));
    }
}

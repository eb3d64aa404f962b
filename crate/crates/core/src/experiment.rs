//! Config-driven runs: dispatch, CSV artifacts, manifests and reports.
//!
//! A run directory holds its CSVs, a `summary.txt` and a `manifest.toml`
//! embedding the resolved config and the SHA-256 of every artifact. The
//! manifest is written first with `status = "incomplete"` and rewritten at
//! the end, so interrupted runs are recognisable. Nothing time-dependent is
//! recorded, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{self, ErgodicReference, Evaluator, Source};
use crate::bsde::{direct_estimator, solve_finite_horizon, BsdeConfig};
use crate::config::{ExperimentKind, RunConfig};
use crate::control::{ergodic_cost, verify_expansion, ControlConfig, Policy};
use crate::ebsde::{solve_ergodic, ErgodicConfig};
use crate::error::{LabError, Result};
use crate::geometry::extend_drift;
use crate::pde_oracle::{flow_composition_check, solve_ergodic_fd, solve_parabolic_fd};
use crate::rng::derive_seed;
use crate::sde::{
    coupling_gap, local_time_violations, moment_estimate, simulate, simulate_penalized, sup_sq_distance, ReflectionScheme,
    SimConfig, TimeGrid,
};
use crate::stats::fit_line;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "LAB_OUTPUT_ROOT";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Incomplete,
    Complete,
    /// Finished, but a solver raised a diagnostic flag.
    Flagged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: String,
    pub status: Status,
    pub seed: u64,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
    #[serde(default)]
    pub config: Option<RunConfig>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| LabError::Precondition(format!("no manifest at {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Complete => 0,
            Status::Flagged => 3,
            Status::Incomplete | Status::Failed => 2,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects artifacts written into one directory.
pub struct Sink {
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub metrics: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Sink { dir: dir.to_path_buf(), artifacts: Vec::new(), metrics: BTreeMap::new(), flags: Vec::new() })
    }

    /// Write `name` from a closure and record its hash.
    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, &buf)?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact { path: name.to_string(), sha256: sha256_hex(&buf) });
        Ok(())
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub fn flag(&mut self, msg: impl Into<String>) {
        self.flags.push(msg.into());
    }

    pub fn flags_from(&mut self, prefix: &str, flags: &[String]) {
        for f in flags {
            self.flags.push(format!("{prefix}: {f}"));
        }
    }

    /// `summary.txt` with the metrics and flags, `key = value`.
    pub fn write_summary(&mut self, header: &str) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{header}");
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k} = {v}");
        }
        let flags: Vec<String> = self.flags.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(s, "flags = [{}]", flags.join(", "));
        self.write("summary.txt", |w| w.write_all(s.as_bytes()))
    }
}

/// Directory for `cfg` under `root`.
pub fn output_dir(cfg: &RunConfig, root: &Path) -> PathBuf {
    match &cfg.output {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => root.join(p),
        None => root.join(&cfg.name),
    }
}

/// The output root: `$LAB_OUTPUT_ROOT` or `lab-output`.
pub fn default_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("lab-output"))
}

/// Run `cfg`, writing into `dir`. Returns the final manifest; solver
/// errors are recorded in the manifest and returned.
pub fn run_experiment(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let mut manifest = Manifest {
        name: cfg.name.clone(),
        kind: cfg.kind.name().to_string(),
        status: Status::Incomplete,
        seed: cfg.seed,
        error: None,
        flags: Vec::new(),
        metrics: BTreeMap::new(),
        artifacts: Vec::new(),
        config: Some(cfg.clone()),
    };
    let mut sink = Sink::new(dir)?;
    manifest.save(dir)?;
    let result = dispatch(cfg, &mut sink).and_then(|_| sink.write_summary(&format!("# {} ({})", cfg.name, cfg.kind.name())));
    manifest.artifacts = std::mem::take(&mut sink.artifacts);
    manifest.metrics = std::mem::take(&mut sink.metrics);
    manifest.flags = std::mem::take(&mut sink.flags);
    match result {
        Ok(()) => {
            manifest.status = if manifest.flags.is_empty() { Status::Complete } else { Status::Flagged };
            manifest.save(dir)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.error = Some(e.to_string());
            manifest.save(dir)?;
            Err(e)
        }
    }
}

fn seeded_sim(cfg: &RunConfig, sim: &SimConfig, label: &str) -> SimConfig {
    SimConfig { seed: derive_seed(cfg.seed, label), exec: cfg.exec, ..sim.clone() }
}

fn seeded_bsde(cfg: &RunConfig, b: &BsdeConfig, label: &str) -> BsdeConfig {
    BsdeConfig { seed: derive_seed(cfg.seed, label), exec: cfg.exec, ..b.clone() }
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn x_header(d: usize) -> String {
    (1..=d).map(|i| format!("x_{i}")).collect::<Vec<_>>().join(",")
}

fn dispatch(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    match cfg.kind {
        ExperimentKind::Simulate => run_simulate(cfg, sink),
        ExperimentKind::Bsde => run_bsde(cfg, sink),
        ExperimentKind::Ergodic => run_ergodic(cfg, sink),
        ExperimentKind::Asymptotics => run_asymptotics(cfg, sink),
        ExperimentKind::Control => run_control(cfg, sink),
        ExperimentKind::Oracle => run_oracle(cfg, sink),
        ExperimentKind::Coupling => run_coupling(cfg, sink),
        ExperimentKind::Penalization => run_penalization(cfg, sink),
    }
}

fn run_simulate(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.simulate;
    let coeffs = cfg.build_coeffs()?;
    let grid = TimeGrid::uniform(0.0, p.horizon, p.n_steps)?;
    let sim = seeded_sim(cfg, &p.sim, "simulate");
    let bundle = simulate(&coeffs, &p.x0, &grid, &sim)?;
    let d = bundle.dim;
    let shown = p.dump_paths.min(bundle.n_paths);
    sink.write("paths.csv", |w| {
        writeln!(w, "path_id,t,{},K", x_header(d))?;
        for path in 0..shown {
            for (k, t) in grid.times().iter().enumerate() {
                writeln!(w, "{path},{t},{},{}", fmt_point(bundle.state(path, k)), bundle.local_time(path, k))?;
            }
        }
        Ok(())
    })?;
    let mut rows = Vec::new();
    for &m in &p.moments {
        let e = moment_estimate(&bundle, m)?;
        sink.metric(format!("moment_{m}"), e.mean);
        sink.metric(format!("moment_{m}_se"), e.se);
        if let Some(g) = coeffs.domain() {
            if e.mean > g.diameter().powi(m as i32) * (1.0 + 1e-12) {
                sink.flag(format!("moment {m} exceeds diameter^{m}"));
            }
        }
        rows.push((m, e));
    }
    sink.write("moments.csv", |w| {
        writeln!(w, "p,moment,se")?;
        for (m, e) in &rows {
            writeln!(w, "{m},{},{}", e.mean, e.se)?;
        }
        Ok(())
    })?;
    let last = bundle.n_times() - 1;
    let k_t: Vec<f64> = (0..bundle.n_paths).map(|i| bundle.local_time(i, last)).collect();
    let k = crate::stats::Estimate::from_samples(&k_t);
    sink.metric("mean_local_time", k.mean);
    sink.metric("mean_local_time_se", k.se);
    if let Some(g) = coeffs.domain() {
        if sim.scheme == ReflectionScheme::Projection {
            let bad = local_time_violations(&bundle, g);
            sink.metric("local_time_violations", bad as f64);
            if bad > 0 {
                sink.flag(format!("{bad} local-time increments off the boundary"));
            }
        }
    }
    Ok(())
}

fn run_bsde(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.bsde;
    let problem = cfg.build_problem()?;
    let d = problem.dim();
    let mut rows = Vec::new();
    for &t in &p.horizons {
        for x in &p.points {
            let label = format!("bsde/T={t}/x={}", fmt_point(x));
            let c = seeded_bsde(cfg, &p.solver, &label);
            let s = solve_finite_horizon(&problem, t, x, &c)?;
            sink.flags_from(&label, &s.flags);
            let direct = if p.direct { Some(direct_estimator(&problem, t, x, &c)?) } else { None };
            rows.push((t, x.clone(), s.y0, s.z0.clone(), direct));
        }
    }
    sink.write("bsde.csv", |w| {
        let zh: Vec<String> = (1..=d).map(|i| format!("z_{i}")).collect();
        writeln!(w, "T,{},y0,se_y0,{},direct,se_direct", x_header(d), zh.join(","))?;
        for (t, x, y, z, direct) in &rows {
            let (dm, ds) = direct.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.se));
            writeln!(w, "{t},{},{},{},{},{dm},{ds}", fmt_point(x), y.mean, y.se, fmt_point(z))?;
        }
        Ok(())
    })?;
    if let Some((_, _, y, _, _)) = rows.last() {
        sink.metric("y0_last", y.mean);
    }
    Ok(())
}

fn run_ergodic(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let problem = cfg.build_problem()?;
    for &method in &cfg.ergodic.methods {
        let name = method.name();
        let solver = ErgodicConfig {
            method,
            bsde: seeded_bsde(cfg, &cfg.ergodic.solver.bsde, &format!("ergodic/{name}")),
            ..cfg.ergodic.solver.clone()
        };
        let sol = solve_ergodic(&problem, &solver)?;
        sink.flags_from(&format!("ergodic/{name}"), &sol.flags);
        sink.metric(format!("lambda_{name}"), sol.lambda.mean);
        sink.metric(format!("lambda_{name}_se"), sol.lambda.se);
        if let Some(r) = sol.pde_residual(&problem) {
            sink.metric(format!("pde_residual_{name}"), r);
        }
        sink.write(&format!("ergodic_{name}.csv"), |w| sol.write_csv(w))?;
        sink.write(&format!("ergodic_{name}_summary.txt"), |w| w.write_all(sol.summary().as_bytes()))?;
    }
    Ok(())
}

fn run_asymptotics(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.asymptotics;
    let problem = cfg.build_problem()?;
    let d = problem.dim();
    let x_grid: Vec<Vec<f64>> = if d == 1 {
        p.x_grid.iter().map(|&x| vec![x]).collect()
    } else {
        let mut g = vec![vec![0.0; d]];
        for &x in &p.x_grid {
            if x != 0.0 {
                let mut v = vec![0.0; d];
                v[0] = x;
                g.push(v);
            }
        }
        g
    };
    let reference = if d == 1 {
        let e = solve_ergodic_fd(&problem, 0.0, p.ergodic_t_max, p.ergodic_tol, &p.fd)?;
        ErgodicReference::from_fd(&e, &x_grid)
    } else {
        let ecfg = ErgodicConfig {
            x_grid: x_grid.iter().filter(|x| x.iter().any(|c| *c != 0.0)).cloned().collect(),
            bsde: seeded_bsde(cfg, &cfg.ergodic.solver.bsde, "asymptotics/ergodic"),
            ..cfg.ergodic.solver.clone()
        };
        let sol = solve_ergodic(&problem, &ecfg)?;
        sink.flags_from("asymptotics/ergodic", &sol.flags);
        ErgodicReference::from_solution(&sol)
    };
    let mc = Evaluator::Bsde { cfg: seeded_bsde(cfg, &p.bsde, "asymptotics/bsde"), date_step: p.date_step };
    let fd = Evaluator::Fd(p.fd.clone());
    let evaluators = match (p.source, d) {
        (Source::FdOracle, 1) => vec![fd],
        (Source::Bsde, _) => vec![mc],
        (Source::Both, 1) => vec![fd, mc],
        _ => return Err(LabError::Precondition("the FD source is one-dimensional".into())),
    };
    let report = asymptotics::study(&problem, &p.t_grid, &x_grid, &reference, &evaluators, &p.fit, p.w_bound)?;
    sink.flags_from("asymptotics", &report.flags);
    sink.metric("lambda_hat", reference.lambda);
    for (i, prof) in report.profiles.iter().enumerate() {
        let tag = match prof.source {
            Source::FdOracle => "fd",
            _ => "bsde",
        };
        let fit = &report.fits[i];
        sink.write(&format!("report_{tag}.csv"), |w| report.write_csv(i, w))?;
        sink.write(&format!("summary_{tag}.txt"), |w| w.write_all(report.summary(i).as_bytes()))?;
        sink.metric(format!("L_hat_{tag}"), fit.l_hat);
        sink.metric(format!("eta_hat_{tag}"), fit.eta.value());
        sink.metric(format!("r2_{tag}"), fit.r2);
        let spread = prof.spread();
        sink.write(&format!("spread_{tag}.csv"), |w| {
            writeln!(w, "T,spread")?;
            for (t, s) in prof.t_grid.iter().zip(&spread) {
                writeln!(w, "{t},{s}")?;
            }
            Ok(())
        })?;
    }
    if report.profiles.len() == 2 {
        let (a, b) = (&report.profiles[0], &report.profiles[1]);
        let mut worst = 0.0f64;
        for k in 0..a.t_grid.len() {
            for j in 0..a.x_grid.len() {
                let gap = (a.w[k][j] - b.w[k][j]).abs();
                let tol = (3.0 * b.u[k][j].se).max(2e-2);
                worst = worst.max(gap / tol);
            }
        }
        sink.metric("source_gap_ratio", worst);
        if worst > 1.0 {
            sink.flag(format!("bsde and fd profiles differ by {worst:.2}x the tolerance"));
        }
    }
    if !p.sweep_grid.is_empty() {
        let eval = if d == 1 { Evaluator::Fd(p.fd.clone()) } else { Evaluator::Bsde { cfg: seeded_bsde(cfg, &p.bsde, "asymptotics/sweep"), date_step: p.date_step } };
        let mut x = vec![0.0; d];
        x[0] = p.sweep_x;
        let sweep = asymptotics::lambda_sweep(&problem, &p.sweep_grid, &x, reference.lambda, &eval)?;
        if let Some(f) = sweep.fit {
            sink.metric("lambda_rate_slope", f.slope);
        }
        if sweep.truncated {
            sink.metric("lambda_sweep_truncated", 1.0);
        }
        sink.write("lambda_sweep.csv", |w| {
            writeln!(w, "T,u_over_T,se,error")?;
            for r in &sweep.rows {
                writeln!(w, "{},{},{},{}", r.t, r.u_over_t.mean, r.u_over_t.se, r.error)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn run_control(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.control;
    let cp = cfg.build_control_problem()?;
    let subs = cfg.build_policies(&cp)?;
    let control = ControlConfig { seed: derive_seed(cfg.seed, "control"), exec: cfg.exec, ..p.expansion.control.clone() };
    let ecfg = crate::control::ExpansionConfig { control: control.clone(), ..p.expansion.clone() };
    let report = verify_expansion(&cp, &p.x0, &subs, &ecfg)?;
    sink.write("expansion.csv", |w| report.write_csv(w))?;
    sink.metric("lambda", report.lambda);
    sink.metric("v_x0", report.v_x0);
    sink.metric("L_hat", report.l_hat);
    sink.metric("eta_hat", report.eta.value());
    sink.metric("limit_sign", report.limit_sign());
    sink.metric("stabilized", f64::from(u8::from(report.stabilized(3.0, 2e-2))));
    sink.metric("suboptimal_dominate", f64::from(u8::from(report.suboptimal_rates_dominate(3.0))));
    for r in &report.rows {
        if !r.cost.within(r.u_fd, 3.0, 2e-2) {
            sink.flag(format!("optimal cost {} at T = {} differs from u = {}", r.cost.mean, r.t, r.u_fd));
        }
    }
    if p.ergodic_horizon > 0.0 {
        let problem = cp.neumann_problem();
        let e = solve_ergodic_fd(&problem, 0.0, ecfg.ergodic_t_max, ecfg.ergodic_tol, &ecfg.fd)?;
        let mut policies = vec![Policy::stationary_fd(&cp, &e)?];
        policies.extend(subs.iter().cloned());
        let mut rows = Vec::new();
        for pol in &policies {
            let c = ergodic_cost(&cp, pol, p.ergodic_horizon, &p.x0, &control)?;
            rows.push((pol.label.clone(), c));
        }
        sink.write("ergodic_cost.csv", |w| {
            writeln!(w, "policy,tail,se_tail,overall,se_overall")?;
            for (l, c) in &rows {
                writeln!(w, "{l},{},{},{},{}", c.tail.mean, c.tail.se, c.overall.mean, c.overall.se)?;
            }
            Ok(())
        })?;
        sink.metric("ergodic_cost_optimal", rows[0].1.tail.mean);
    }
    Ok(())
}

fn run_oracle(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.oracle;
    let problem = cfg.build_problem()?;
    let field = solve_parabolic_fd(&problem, p.horizon, &p.fd)?;
    sink.write("u_field.csv", |w| field.write_csv(w))?;
    let e = solve_ergodic_fd(&problem, p.x_ref, p.ergodic_t_max, p.ergodic_tol, &p.fd)?;
    sink.metric("lambda", e.lambda);
    sink.metric("ergodic_residual", e.residual);
    sink.metric("u_T_at_x_ref", field.value(field.times.len() - 1, p.x_ref));
    sink.write("ergodic_v.csv", |w| {
        writeln!(w, "x,v")?;
        for (x, v) in e.xs.iter().zip(&e.v) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    })?;
    if p.flow.len() == 2 {
        let r = flow_composition_check(&problem, p.flow[0], p.flow[1], &p.fd)?;
        sink.metric("flow_residual", r);
    } else if !p.flow.is_empty() {
        return Err(LabError::Config("oracle.flow must be [T, S] or empty".into()));
    }
    Ok(())
}

fn run_coupling(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.coupling;
    let coeffs = cfg.build_coeffs()?;
    let test = cfg.build_test_function()?;
    let grid = TimeGrid::uniform(0.0, p.horizon, p.n_steps)?;
    let sim = seeded_sim(cfg, &p.sim, "coupling");
    let gaps = coupling_gap(&coeffs, &test, &p.x, &p.y, &grid, &sim)?;
    sink.write("coupling.csv", |w| {
        writeln!(w, "t,gap,se")?;
        for (t, e) in &gaps {
            writeln!(w, "{t},{},{}", e.mean, e.se)?;
        }
        Ok(())
    })?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = gaps
        .iter()
        .filter(|(t, e)| *t >= p.burn_in && e.mean > 3.0 * e.se)
        .map(|(t, e)| (*t, e.mean.ln()))
        .unzip();
    if let Some(f) = fit_line(&xs, &ys) {
        sink.metric("log_gap_slope", f.slope);
        sink.metric("log_gap_r2", f.r2);
    }
    Ok(())
}

fn run_penalization(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let p = &cfg.penalization;
    let coeffs = cfg.build_coeffs()?;
    let Some(domain) = coeffs.domain().cloned() else {
        return Err(LabError::Config("penalization needs a [domain] section".into()));
    };
    let grid = TimeGrid::uniform(0.0, p.horizon, p.n_steps)?;
    let sim = SimConfig { scheme: ReflectionScheme::Projection, ..seeded_sim(cfg, &p.sim, "penalization") };
    let reference = simulate(&coeffs, &p.x0, &grid, &sim)?;
    let ext = extend_drift(coeffs.drift.clone(), &domain);
    let mut rows = Vec::new();
    for &n in &p.ns {
        let b = simulate_penalized(&ext, &coeffs.sigma, n, &p.x0, &grid, &sim, p.step)?;
        for w in &b.warnings {
            log::warn!("penalization n={n}: {w}");
        }
        rows.push((n, sup_sq_distance(&b, &reference)?));
    }
    sink.write("penalization.csv", |w| {
        writeln!(w, "n,sup_sq,se")?;
        for (n, e) in &rows {
            writeln!(w, "{n},{},{}", e.mean, e.se)?;
        }
        Ok(())
    })?;
    let inversions = rows.windows(2).filter(|w| w[1].1.mean >= w[0].1.mean).count();
    sink.metric("inversions", inversions as f64);
    Ok(())
}

/// State of one run directory as seen by [`emit_report`].
#[derive(Clone, Debug)]
pub struct RunStatus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Artifacts missing on disk or with a different hash.
    pub problems: Vec<String>,
}

impl RunStatus {
    pub fn complete(&self) -> bool {
        self.problems.is_empty() && matches!(self.manifest.status, Status::Complete | Status::Flagged)
    }
}

fn inspect(dir: &Path) -> Result<RunStatus> {
    let manifest = Manifest::load(dir)?;
    let mut problems = Vec::new();
    for a in &manifest.artifacts {
        match std::fs::read(dir.join(&a.path)) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
            Ok(_) => problems.push(format!("{}: hash mismatch", a.path)),
            Err(_) => problems.push(format!("{}: missing", a.path)),
        }
    }
    Ok(RunStatus { dir: dir.to_path_buf(), manifest, problems })
}

/// Collect every run under `dir` (the directory itself or its immediate
/// subdirectories).
pub fn collect_runs(dir: &Path) -> Result<Vec<RunStatus>> {
    if !dir.is_dir() {
        return Err(LabError::Precondition(format!("{} is not a directory", dir.display())));
    }
    let mut runs = Vec::new();
    if dir.join(MANIFEST).is_file() {
        runs.push(inspect(dir)?);
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    subs.sort();
    for s in subs {
        runs.push(inspect(&s)?);
    }
    if runs.is_empty() {
        return Err(LabError::Precondition(format!("no {MANIFEST} under {}", dir.display())));
    }
    Ok(runs)
}

/// Collate runs under `dir` into `report.txt` and the long-format
/// `report_long.csv` (`run,key,value`). Acceptance rows written by the
/// benchmark suite (`acceptance.csv`) are included when present.
pub fn emit_report(dir: &Path) -> Result<String> {
    let runs = collect_runs(dir)?;
    let mut text = String::new();
    let mut long = String::from("run,key,value\n");
    for r in &runs {
        let name = &r.manifest.name;
        let state = if r.complete() { format!("{:?}", r.manifest.status).to_lowercase() } else { "incomplete".to_string() };
        let _ = writeln!(text, "[{name}] kind = {} status = {state}", r.manifest.kind);
        for p in &r.problems {
            let _ = writeln!(text, "  incomplete: {p}");
        }
        if let Some(e) = &r.manifest.error {
            let _ = writeln!(text, "  error: {e}");
        }
        for f in &r.manifest.flags {
            let _ = writeln!(text, "  flag: {f}");
        }
        for (k, v) in &r.manifest.metrics {
            let _ = writeln!(text, "  {k} = {v}");
            let _ = writeln!(long, "{name},{k},{v}");
        }
        let _ = writeln!(long, "{name},status,{state}");
        let acc = r.dir.join("acceptance.csv");
        if let Ok(body) = std::fs::read_to_string(&acc) {
            let _ = writeln!(text, "  acceptance:");
            for line in body.lines().skip(1) {
                let mut parts = line.splitn(4, ',');
                let (id, title, pass) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                let _ = writeln!(text, "    {id:>3} {:<4} {title}", if pass == "true" { "PASS" } else { "FAIL" });
                let _ = writeln!(long, "{name},criterion_{id},{}", if pass == "true" { 1 } else { 0 });
            }
        }
    }
    std::fs::write(dir.join("report.txt"), &text)?;
    std::fs::write(dir.join("report_long.csv"), &long)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_cfg() -> RunConfig {
        let mut c = RunConfig::from_toml(
            "name = \"oracle\"\nkind = \"oracle\"\n[domain]\nkind = \"interval\"\nlo = -1.0\nhi = 1.0\n[problem]\nboundary_g = \"1\"\n[oracle]\nhorizon = 0.5\nflow = []\n",
        )
        .unwrap();
        c.oracle.fd.n_cells = 100;
        c.oracle.fd.dt = 4e-3;
        c.oracle.ergodic_tol = 1e-6;
        c
    }

    #[test]
    fn oracle_run_writes_manifest_and_report() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("oracle");
        let m = run_experiment(&oracle_cfg(), &dir).unwrap();
        assert_eq!(m.status, Status::Complete);
        assert_eq!(m.exit_code(), 0);
        assert!((m.metrics["lambda"] - 0.5).abs() < 1e-3);
        let names: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(names, ["u_field.csv", "ergodic_v.csv", "summary.txt"]);
        let back = Manifest::load(&dir).unwrap();
        assert_eq!(back, m);
        let text = emit_report(tmp.path()).unwrap();
        assert!(text.contains("status = complete"), "{text}");
        std::fs::write(dir.join("u_field.csv"), "tampered").unwrap();
        let text = emit_report(tmp.path()).unwrap();
        assert!(text.contains("incomplete: u_field.csv"), "{text}");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(emit_report(tmp.path()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn failures_are_recorded() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = oracle_cfg();
        c.oracle.horizon = -1.0;
        assert!(run_experiment(&c, tmp.path()).is_err());
        let m = Manifest::load(tmp.path()).unwrap();
        assert_eq!(m.status, Status::Failed);
        assert!(m.error.unwrap().contains("horizon"));
    }

    #[test]
    fn output_dir_resolution() {
        let mut c = oracle_cfg();
        assert_eq!(output_dir(&c, Path::new("/r")), PathBuf::from("/r/oracle"));
        c.output = Some(PathBuf::from("sub"));
        assert_eq!(output_dir(&c, Path::new("/r")), PathBuf::from("/r/sub"));
        c.output = Some(PathBuf::from("/abs"));
        assert_eq!(output_dir(&c, Path::new("/r")), PathBuf::from("/abs"));
    }
}

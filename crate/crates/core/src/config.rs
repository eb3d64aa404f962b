//! TOML run configuration and its resolution into solver inputs.
//!
//! Coefficients are given as built-in names or polynomial expressions
//! (see [`crate::expr`]). Every section has defaults, so a config only lists
//! what differs. Seeds inside solver sections are ignored: each job derives
//! its own seed from the master `seed` and a job label.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{FitOptions, Source};
use crate::bsde::{BsdeConfig, NeumannProblem};
use crate::control::{Control, ControlProblem, ExpansionConfig, Policy};
use crate::ebsde::{ErgodicConfig, ErgodicMethod};
use crate::error::{LabError, Result};
use crate::exec::Exec;
use crate::expr::Expr;
use crate::field::{Driver, ScalarField, VectorField};
use crate::geometry::{ConvexDomain, DomainSpec};
use crate::pde_oracle::FdConfig;
use crate::sde::{PenaltyStep, SdeCoefficients, Sigma, SimConfig, TestFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Bsde,
    Ergodic,
    Asymptotics,
    Control,
    Oracle,
    Coupling,
    Penalization,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Bsde => "bsde",
            ExperimentKind::Ergodic => "ergodic",
            ExperimentKind::Asymptotics => "asymptotics",
            ExperimentKind::Control => "control",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Penalization => "penalization",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

/// Coefficients as strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    /// One expression per coordinate; empty means zero drift.
    pub drift: Vec<String>,
    pub sigma: SigmaSpec,
    /// `zero`, `constant:c`, `abs_z:s`, `hamiltonian` (control runs) or a
    /// polynomial in `x`.
    pub driver: String,
    pub boundary_g: String,
    pub terminal_h: String,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            drift: Vec::new(),
            sigma: SigmaSpec::Scalar(1.0),
            driver: "zero".into(),
            boundary_g: "0".into(),
            terminal_h: "0".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    pub moments: Vec<u32>,
    /// Paths written to `paths.csv`.
    pub dump_paths: usize,
    pub sim: SimConfig,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams { x0: vec![0.0], horizon: 1.0, n_steps: 1000, moments: vec![2, 4], dump_paths: 16, sim: SimConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsdeParams {
    pub points: Vec<Vec<f64>>,
    pub horizons: Vec<f64>,
    /// Also run the plain Monte Carlo estimator (z-independent drivers only).
    pub direct: bool,
    pub solver: BsdeConfig,
}

impl Default for BsdeParams {
    fn default() -> Self {
        BsdeParams { points: vec![vec![0.0]], horizons: vec![1.0], direct: false, solver: BsdeConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicParams {
    pub methods: Vec<ErgodicMethod>,
    pub solver: ErgodicConfig,
}

impl Default for ErgodicParams {
    fn default() -> Self {
        ErgodicParams { methods: vec![ErgodicMethod::Differencing], solver: ErgodicConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticsParams {
    pub source: Source,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    /// Horizons of the `λ` sweep (max/min at least 8); empty skips it.
    pub sweep_grid: Vec<f64>,
    pub sweep_x: f64,
    pub fd: FdConfig,
    pub bsde: BsdeConfig,
    /// Regression date spacing for the MC source.
    pub date_step: f64,
    pub ergodic_t_max: f64,
    pub ergodic_tol: f64,
    pub w_bound: f64,
    pub fit: FitOptions,
}

impl Default for AsymptoticsParams {
    fn default() -> Self {
        AsymptoticsParams {
            source: Source::FdOracle,
            t_grid: (1..=16).map(|k| 0.25 * k as f64).collect(),
            x_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            sweep_grid: vec![2.0, 4.0, 8.0, 16.0],
            sweep_x: 0.0,
            fd: FdConfig::default(),
            bsde: BsdeConfig::default(),
            date_step: 0.02,
            ergodic_t_max: 64.0,
            ergodic_tol: 1e-9,
            w_bound: 10.0,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub name: String,
    pub r: Vec<f64>,
    /// Running cost `L(x, a)`: polynomial in `x` and `a`.
    #[serde(default = "zero_expr")]
    pub cost: String,
    /// Value substituted for `a` in `cost`.
    #[serde(default)]
    pub value: f64,
}

fn zero_expr() -> String {
    "0".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    pub controls: Vec<ControlSpec>,
    pub r_bound: f64,
    pub l_bound: f64,
    pub x0: Vec<f64>,
    /// `constant:<control name>` entries.
    pub suboptimal: Vec<String>,
    /// Horizon of the ergodic-cost runs; zero skips them.
    pub ergodic_horizon: f64,
    pub expansion: ExpansionConfig,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            controls: vec![
                ControlSpec { name: "-1".into(), r: vec![-1.0], cost: "0".into(), value: -1.0 },
                ControlSpec { name: "+1".into(), r: vec![1.0], cost: "0".into(), value: 1.0 },
            ],
            r_bound: 1.0,
            l_bound: 0.0,
            x0: vec![0.0],
            suboptimal: vec!["constant:-1".into(), "constant:+1".into()],
            ergodic_horizon: 0.0,
            expansion: ExpansionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub horizon: f64,
    pub fd: FdConfig,
    pub x_ref: f64,
    pub ergodic_t_max: f64,
    pub ergodic_tol: f64,
    /// `(T, S)` for the flow-composition residual; empty skips it.
    pub flow: Vec<f64>,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            horizon: 2.0,
            fd: FdConfig { save_every: Some(0.1), ..FdConfig::default() },
            x_ref: 0.0,
            ergodic_t_max: 64.0,
            ergodic_tol: 1e-9,
            flow: vec![1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingParams {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    /// `positive_half_space` or a polynomial in `x` (needs `test_bound`).
    pub test: String,
    pub test_bound: Option<f64>,
    pub burn_in: f64,
    pub sim: SimConfig,
}

impl Default for CouplingParams {
    fn default() -> Self {
        CouplingParams {
            x: vec![1.0],
            y: vec![-1.0],
            horizon: 3.0,
            n_steps: 300,
            test: "positive_half_space".into(),
            test_bound: None,
            burn_in: 0.5,
            sim: SimConfig { n_paths: 20_000, ..SimConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenalizationParams {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    pub ns: Vec<u32>,
    pub step: PenaltyStep,
    pub sim: SimConfig,
}

impl Default for PenalizationParams {
    fn default() -> Self {
        PenalizationParams {
            x0: vec![0.5],
            horizon: 1.0,
            n_steps: 1000,
            ns: vec![8, 16, 32, 64, 128],
            step: PenaltyStep::default(),
            sim: SimConfig { n_paths: 2000, ..SimConfig::default() },
        }
    }
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; relative paths resolve against the output root.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub exec: Exec,
    /// Omitted for free diffusions on `R^d` (simulate and coupling only).
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub bsde: BsdeParams,
    #[serde(default)]
    pub ergodic: ErgodicParams,
    #[serde(default)]
    pub asymptotics: AsymptoticsParams,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub oracle: OracleParams,
    #[serde(default)]
    pub coupling: CouplingParams,
    #[serde(default)]
    pub penalization: PenalizationParams,
}

impl RunConfig {
    pub fn new(name: impl Into<String>, kind: ExperimentKind) -> Self {
        RunConfig {
            name: name.into(),
            kind,
            seed: 0,
            output: None,
            exec: Exec::default(),
            domain: Some(DomainSpec::Interval { lo: -1.0, hi: 1.0 }),
            problem: ProblemSpec::default(),
            simulate: SimulateParams::default(),
            bsde: BsdeParams::default(),
            ergodic: ErgodicParams::default(),
            asymptotics: AsymptoticsParams::default(),
            control: ControlParams::default(),
            oracle: OracleParams::default(),
            coupling: CouplingParams::default(),
            penalization: PenalizationParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Precondition(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        match &self.domain {
            Some(DomainSpec::Interval { .. }) => 1,
            Some(DomainSpec::Ball { dim, .. }) => *dim,
            Some(DomainSpec::Ellipsoid { semi_axes }) => semi_axes.len(),
            None => match &self.problem.sigma {
                SigmaSpec::Matrix(rows) => rows.len(),
                SigmaSpec::Scalar(_) => self.problem.drift.len().max(1),
            },
        }
    }

    pub fn build_domain(&self) -> Result<Option<ConvexDomain>> {
        self.domain.as_ref().map(|d| d.build()).transpose()
    }

    pub fn build_coeffs(&self) -> Result<SdeCoefficients> {
        let d = self.dim();
        let sigma = match &self.problem.sigma {
            SigmaSpec::Scalar(s) => Sigma::scalar(d, *s)?,
            SigmaSpec::Matrix(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(LabError::Config(format!("problem.sigma must be {d}x{d}")));
                }
                Sigma::new(d, rows.concat())?
            }
        };
        let drift = drift_field(&self.problem.drift, d)?;
        match self.build_domain()? {
            Some(g) => SdeCoefficients::reflected(drift, sigma, g),
            None => SdeCoefficients::free(drift, sigma),
        }
    }

    /// The Neumann problem; `hamiltonian` drivers need the control section.
    pub fn build_problem(&self) -> Result<NeumannProblem> {
        let coeffs = self.build_coeffs()?;
        if coeffs.domain.is_none() {
            return Err(LabError::Config(format!("kind {} needs a [domain] section", self.kind.name())));
        }
        let d = self.dim();
        let driver = if self.problem.driver.trim() == "hamiltonian" {
            self.build_control_problem()?.hamiltonian_driver()
        } else {
            parse_driver(&self.problem.driver, d)?
        };
        let g = scalar_field("problem.boundary_g", &self.problem.boundary_g, d)?;
        let h = scalar_field("problem.terminal_h", &self.problem.terminal_h, d)?;
        NeumannProblem::new(coeffs, driver, g, h)
    }

    pub fn build_control_problem(&self) -> Result<ControlProblem> {
        let coeffs = self.build_coeffs()?;
        let d = self.dim();
        let controls = self
            .control
            .controls
            .iter()
            .map(|c| {
                let e = Expr::parse(&c.cost)
                    .map_err(|e| LabError::Config(format!("control.controls[{}].cost: {e}", c.name)))?;
                check_dim(&e, d, &format!("control.controls[{}].cost", c.name))?;
                let a = c.value;
                Ok(Control::new(c.name.clone(), c.r.clone(), ScalarField::new(c.cost.clone(), move |x| e.eval(x, a))))
            })
            .collect::<Result<Vec<_>>>()?;
        let g = scalar_field("problem.boundary_g", &self.problem.boundary_g, d)?;
        let h = scalar_field("problem.terminal_h", &self.problem.terminal_h, d)?;
        ControlProblem::new(coeffs, controls, g, h, self.control.r_bound, self.control.l_bound)
    }

    /// Suboptimal policies named in the control section.
    pub fn build_policies(&self, cp: &ControlProblem) -> Result<Vec<Policy>> {
        self.control
            .suboptimal
            .iter()
            .map(|s| {
                let name = s
                    .strip_prefix("constant:")
                    .ok_or_else(|| LabError::Config(format!("control.suboptimal: unknown policy {s:?}")))?;
                let idx = cp
                    .controls
                    .iter()
                    .position(|c| c.name == name)
                    .ok_or_else(|| LabError::Config(format!("control.suboptimal: no control named {name:?}")))?;
                Policy::constant(cp, idx)
            })
            .collect()
    }

    pub fn build_test_function(&self) -> Result<TestFunction> {
        let c = &self.coupling;
        if c.test.trim() == "positive_half_space" {
            return Ok(TestFunction::positive_half_space());
        }
        let f = scalar_field("coupling.test", &c.test, self.dim())?;
        match c.test_bound {
            Some(b) => TestFunction::new(f.with_sup_norm(b)),
            None => Err(LabError::Config("coupling.test needs coupling.test_bound".into())),
        }
    }
}

fn check_dim(e: &Expr, d: usize, key: &str) -> Result<()> {
    if e.min_dim() > d {
        return Err(LabError::Config(format!("{key}: {e} references x{} in dimension {d}", e.min_dim())));
    }
    Ok(())
}

fn scalar_field(key: &str, src: &str, d: usize) -> Result<ScalarField> {
    let e = Expr::parse(src).map_err(|e| LabError::Config(format!("{key}: {e}")))?;
    check_dim(&e, d, key)?;
    if e.uses_control() {
        return Err(LabError::Config(format!("{key}: `a` is only allowed in control costs")));
    }
    Ok(ScalarField::new(src.trim(), move |x| e.eval(x, 0.0)))
}

fn drift_field(srcs: &[String], d: usize) -> Result<VectorField> {
    if srcs.is_empty() {
        return Ok(VectorField::zero(d));
    }
    if srcs.len() != d {
        return Err(LabError::Config(format!("problem.drift needs {d} components, got {}", srcs.len())));
    }
    let exprs = srcs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let key = format!("problem.drift[{i}]");
            let e = Expr::parse(s).map_err(|e| LabError::Config(format!("{key}: {e}")))?;
            check_dim(&e, d, &key)?;
            if e.uses_control() {
                return Err(LabError::Config(format!("{key}: `a` is only allowed in control costs")));
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let probe = exprs.clone();
    let f = move |x: &[f64], out: &mut [f64]| {
        for (o, e) in out.iter_mut().zip(&exprs) {
            *o = e.eval(x, 0.0);
        }
    };
    let lip = sampled_lipschitz(&probe, d);
    Ok(VectorField::new(srcs.join(", "), d, lip, f))
}

/// Largest difference quotient on a lattice of `[-3, 3]^d` (metadata only).
fn sampled_lipschitz(exprs: &[Expr], d: usize) -> f64 {
    let n = match d {
        1 => 601,
        2 => 41,
        _ => 13,
    };
    let h = 1e-6;
    let mut best = 0.0f64;
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut xp = vec![0.0; d];
    loop {
        for (i, k) in idx.iter().enumerate() {
            x[i] = -3.0 + 6.0 * *k as f64 / (n - 1) as f64;
        }
        for j in 0..d {
            xp.copy_from_slice(&x);
            xp[j] += h;
            let g: f64 = exprs.iter().map(|e| ((e.eval(&xp, 0.0) - e.eval(&x, 0.0)) / h).powi(2)).sum();
            best = best.max(g.sqrt());
        }
        let mut c = 0;
        while c < d {
            idx[c] += 1;
            if idx[c] < n {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == d {
            return best;
        }
    }
}

/// Resolve a driver name or polynomial in `x`.
pub fn parse_driver(src: &str, d: usize) -> Result<Driver> {
    let s = src.trim();
    let num = |v: &str| {
        v.trim().parse::<f64>().map_err(|_| LabError::Config(format!("problem.driver: bad number in {s:?}")))
    };
    if s == "zero" {
        return Ok(Driver::zero());
    }
    if let Some(c) = s.strip_prefix("constant:") {
        return Ok(Driver::constant(num(c)?));
    }
    if let Some(c) = s.strip_prefix("abs_z:") {
        return Ok(Driver::abs_z(num(c)?));
    }
    if s == "abs_z" {
        return Ok(Driver::abs_z(1.0));
    }
    let e = Expr::parse(s).map_err(|_| LabError::Config(format!("problem.driver: unknown driver {s:?}")))?;
    check_dim(&e, d, "problem.driver")?;
    if e.uses_control() {
        return Err(LabError::Config("problem.driver: `a` is only allowed in control costs".into()));
    }
    Ok(Driver::of_x(s, move |x| e.eval(x, 0.0)))
}

//! Least-squares projection on finite bases, used for the conditional
//! expectations of the backward schemes.
//!
//! Coordinates are mapped affinely onto `[-1, 1]` using the bounding box of
//! the regression cloud, so early clouds concentrated near the starting
//! point stay well conditioned. Polynomial bases are tensor products of
//! Legendre polynomials; the local basis is a tensor product of hat
//! functions on a uniform partition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exec::Exec;

/// Per-coordinate cap on the basis size.
pub const MAX_PER_COORD: usize = 16;
const MAX_DIM: usize = 3;

/// Three-term recurrence `P_{k+1} = a_k s P_k - b_k P_{k-1}`.
const LEGENDRE: [(f64, f64); MAX_PER_COORD] = {
    let mut t = [(0.0, 0.0); MAX_PER_COORD];
    let mut k = 1;
    while k < MAX_PER_COORD {
        let kf = k as f64;
        t[k] = ((2.0 * kf + 1.0) / (kf + 1.0), kf / (kf + 1.0));
        k += 1;
    }
    t
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    #[default]
    Polynomial,
    PiecewiseLinear,
}

/// Basis family and size: polynomial degree per coordinate, or number of
/// cells per coordinate for the piecewise-linear family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub degree: usize,
}

impl BasisSpec {
    /// Degree 4 in 1D, tensor degree 2 above.
    pub fn default_for(dim: usize) -> Self {
        BasisSpec { family: BasisFamily::Polynomial, degree: if dim <= 1 { 4 } else { 2 } }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 || dim > MAX_DIM {
            return Err(LabError::Parameter(format!("regression supports 1 <= d <= {MAX_DIM}, got {dim}")));
        }
        if self.degree + 1 > MAX_PER_COORD {
            return Err(LabError::Parameter(format!("basis degree {} too large", self.degree)));
        }
        if self.family == BasisFamily::PiecewiseLinear && self.degree == 0 {
            return Err(LabError::Parameter("piecewise-linear basis needs at least one cell".into()));
        }
        Ok(())
    }
}

/// A basis bound to an affine rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    pub family: BasisFamily,
    /// Per-coordinate degree (or cell count); 0 means constant in that coordinate.
    pub degrees: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Basis {
    pub fn new(spec: BasisSpec, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let degrees = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h - l > 1e-9 { spec.degree } else { 0 })
            .collect();
        Basis { family: spec.family, degrees, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.degrees.iter().map(|d| d + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_constant(&self) -> bool {
        self.degrees.iter().all(|d| *d == 0)
    }

    fn degraded(&self) -> Option<Basis> {
        if self.is_constant() {
            return None;
        }
        let degrees = self
            .degrees
            .iter()
            .map(|d| match self.family {
                BasisFamily::Polynomial => d.saturating_sub(1),
                BasisFamily::PiecewiseLinear => {
                    if *d <= 1 {
                        0
                    } else {
                        d / 2
                    }
                }
            })
            .collect();
        Some(Basis { degrees, ..self.clone() })
    }

    #[inline]
    fn coord_values(&self, i: usize, x: f64, out: &mut [f64]) {
        let deg = self.degrees[i];
        if deg == 0 {
            out[0] = 1.0;
            return;
        }
        let s = 2.0 * (x - self.lo[i]) / (self.hi[i] - self.lo[i]) - 1.0;
        match self.family {
            BasisFamily::Polynomial => {
                out[0] = 1.0;
                out[1] = s;
                for k in 1..deg {
                    let (a, b) = LEGENDRE[k];
                    out[k + 1] = a * s * out[k] - b * out[k - 1];
                }
            }
            BasisFamily::PiecewiseLinear => {
                let s = s.clamp(-1.0, 1.0);
                let half_width = 2.0 / deg as f64;
                for (j, o) in out.iter_mut().enumerate().take(deg + 1) {
                    let node = -1.0 + j as f64 * half_width;
                    *o = (1.0 - (s - node).abs() / half_width).max(0.0);
                }
            }
        }
    }

    /// Basis values at `x` (length `self.len()`).
    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        if d == 1 {
            self.coord_values(0, x[0], out);
            return;
        }
        let mut vals = [[0.0; MAX_PER_COORD]; MAX_DIM];
        for i in 0..d {
            self.coord_values(i, x[i], &mut vals[i]);
        }
        let mut idx = 0;
        match d {
            2 => {
                for a in 0..=self.degrees[0] {
                    for b in 0..=self.degrees[1] {
                        out[idx] = vals[0][a] * vals[1][b];
                        idx += 1;
                    }
                }
            }
            _ => {
                for a in 0..=self.degrees[0] {
                    for b in 0..=self.degrees[1] {
                        for c in 0..=self.degrees[2] {
                            out[idx] = vals[0][a] * vals[1][b] * vals[2][c];
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

/// One chunk of regression data: `points` is `n * dim` row-major, each
/// target slice has `n` entries.
pub struct Design<'a> {
    pub points: &'a [f64],
    pub targets: Vec<&'a [f64]>,
}

/// Fitted coefficients for each target.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub basis: Basis,
    pub coefs: Vec<Vec<f64>>,
    pub degraded: bool,
}

impl Fit {
    /// A constant fit.
    pub fn constant(dim: usize, values: Vec<f64>) -> Self {
        Fit {
            basis: Basis { family: BasisFamily::Polynomial, degrees: vec![0; dim], lo: vec![0.0; dim], hi: vec![0.0; dim] },
            coefs: values.into_iter().map(|v| vec![v]).collect(),
            degraded: false,
        }
    }

    /// Value of target `j` at `x`; `buf` must hold `basis.len()` entries.
    #[inline]
    pub fn predict_with(&self, j: usize, x: &[f64], buf: &mut [f64]) -> f64 {
        self.basis.eval(x, buf);
        self.coefs[j].iter().zip(buf.iter()).map(|(c, b)| c * b).sum()
    }

    /// Every target at `x`; `buf` must hold `basis.len()` entries.
    #[inline]
    pub fn predict_all(&self, x: &[f64], buf: &mut [f64], out: &mut [f64]) {
        self.basis.eval(x, buf);
        for (o, c) in out.iter_mut().zip(&self.coefs) {
            *o = c.iter().zip(buf.iter()).map(|(c, b)| c * b).sum();
        }
    }

    pub fn predict(&self, j: usize, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.basis.len()];
        self.predict_with(j, x, &mut buf)
    }

    pub fn scaled(&self, j: usize, factor: f64) -> Vec<f64> {
        self.coefs[j].iter().map(|c| c * factor).collect()
    }
}

/// Condition number above which the basis is reduced.
const MAX_CONDITION: f64 = 1e11;

/// Least-squares fit of every target on `spec`, sharing one Gram matrix.
///
/// Partial sums are computed per chunk and added in chunk order, so the
/// result does not depend on the execution mode.
pub fn least_squares(spec: BasisSpec, dim: usize, chunks: &[Design<'_>], exec: Exec) -> Result<Fit> {
    spec.validate(dim)?;
    let n_targets = chunks.first().map(|c| c.targets.len()).unwrap_or(0);
    let n: usize = chunks.iter().map(|c| c.points.len() / dim).sum();
    if n == 0 {
        return Err(LabError::Numerical("regression on an empty cloud".into()));
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for c in chunks {
        for p in c.points.chunks_exact(dim) {
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
    }
    let mut basis = Basis::new(spec, lo, hi);
    let mut degraded = false;
    loop {
        match solve_normal_equations(&basis, dim, n, n_targets, chunks, exec) {
            Some(coefs) => return Ok(Fit { basis, coefs, degraded }),
            None => match basis.degraded() {
                Some(b) => {
                    log::warn!("rank-deficient regression design, reducing basis {:?} -> {:?}", basis.degrees, b.degrees);
                    basis = b;
                    degraded = true;
                }
                None => return Err(LabError::Numerical("constant regression is singular".into())),
            },
        }
    }
}

fn solve_normal_equations(
    basis: &Basis,
    dim: usize,
    n: usize,
    n_targets: usize,
    chunks: &[Design<'_>],
    exec: Exec,
) -> Option<Vec<Vec<f64>>> {
    let p = basis.len();
    let partials = exec.map_slice(chunks, |c| {
        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p * n_targets];
        let mut phi = vec![0.0; p];
        for (k, x) in c.points.chunks_exact(dim).enumerate() {
            basis.eval(x, &mut phi);
            for a in 0..p {
                let pa = phi[a];
                if pa == 0.0 {
                    continue;
                }
                for b in a..p {
                    gram[a * p + b] += pa * phi[b];
                }
                for (t, target) in c.targets.iter().enumerate() {
                    rhs[t * p + a] += pa * target[k];
                }
            }
        }
        (gram, rhs)
    });
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = vec![DVector::<f64>::zeros(p); n_targets];
    let inv_n = 1.0 / n as f64;
    for (g, r) in &partials {
        for a in 0..p {
            for b in a..p {
                gram[(a, b)] += g[a * p + b];
            }
            for t in 0..n_targets {
                rhs[t][a] += r[t * p + a];
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = gram[(a, b)] * inv_n;
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    for r in rhs.iter_mut() {
        *r *= inv_n;
    }
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= max / MAX_CONDITION {
        return None;
    }
    let chol = gram.cholesky()?;
    Some(rhs.iter().map(|r| chol.solve(r).iter().cloned().collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PathRng;

    fn fit_1d(spec: BasisSpec, xs: &[f64], ys: &[f64]) -> Fit {
        let chunks = vec![Design { points: xs, targets: vec![ys] }];
        least_squares(spec, 1, &chunks, Exec::Sequential).unwrap()
    }

    #[test]
    fn polynomial_fit_reproduces_quartic() {
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + x - 3.0 * x * x + 0.5 * x.powi(4)).collect();
        let fit = fit_1d(BasisSpec::default_for(1), &xs, &ys);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((fit.predict(0, &[*x]) - y).abs() < 1e-9);
        }
        assert!(!fit.degraded);
    }

    #[test]
    fn degenerate_cloud_gives_constant_fit() {
        let xs = vec![0.25; 50];
        let ys: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = fit_1d(BasisSpec::default_for(1), &xs, &ys);
        assert!(fit.basis.is_constant());
        assert!((fit.predict(0, &[0.25]) - 24.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_points_degrade_the_basis() {
        let xs = vec![0.0, 0.0, 1.0, 1.0, 0.5];
        let ys = vec![0.0, 0.0, 1.0, 1.0, 0.25];
        let fit = fit_1d(BasisSpec::default_for(1), &xs, &ys);
        assert!(fit.degraded);
        assert!(fit.basis.degrees[0] <= 2);
        assert!((fit.predict(0, &[0.5]) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn hat_basis_interpolates_piecewise_linear_data() {
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x - 0.5_f64).abs()).collect();
        let fit = fit_1d(BasisSpec { family: BasisFamily::PiecewiseLinear, degree: 4 }, &xs, &ys);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((fit.predict(0, &[*x]) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn two_dimensional_tensor_fit() {
        let mut rng = PathRng::new(3, 0);
        let pts: Vec<f64> = (0..400).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let ys: Vec<f64> = pts.chunks(2).map(|p| 1.0 + p[0] * p[1] - p[1] * p[1]).collect();
        let chunks = vec![Design { points: &pts[..200], targets: vec![&ys[..100]] }, Design {
            points: &pts[200..],
            targets: vec![&ys[100..]],
        }];
        let fit = least_squares(BasisSpec::default_for(2), 2, &chunks, Exec::Parallel).unwrap();
        assert_eq!(fit.basis.len(), 9);
        assert!((fit.predict(0, &[0.3, -0.2]) - (1.0 - 0.06 - 0.04)).abs() < 1e-9);
    }

    #[test]
    fn chunked_fit_is_mode_independent() {
        let mut rng = PathRng::new(1, 0);
        let xs: Vec<f64> = (0..4000).map(|_| rng.uniform()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.1 * rng.normal()).collect();
        let chunks: Vec<Design> = xs
            .chunks(512)
            .zip(ys.chunks(512))
            .map(|(p, t)| Design { points: p, targets: vec![t] })
            .collect();
        let a = least_squares(BasisSpec::default_for(1), 1, &chunks, Exec::Parallel).unwrap();
        let b = least_squares(BasisSpec::default_for(1), 1, &chunks, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(BasisSpec { family: BasisFamily::Polynomial, degree: 40 }.validate(1).is_err());
        assert!(BasisSpec { family: BasisFamily::PiecewiseLinear, degree: 0 }.validate(1).is_err());
        assert!(BasisSpec::default_for(4).validate(4).is_err());
    }
}

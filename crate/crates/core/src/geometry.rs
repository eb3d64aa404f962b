//! Bounded convex domains `G = {phi > 0}` with their defining function,
//! Euclidean projection, penalization force and the dissipative drift
//! extension used for the penalized dynamics.
//!
//! `grad phi` has unit length on the boundary and points into `G`, so it is
//! the inward normal. Neumann derivatives throughout the crate are taken
//! along it.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, LabError, Result};
use crate::field::VectorField;
use crate::rng::PathRng;

/// Boundary points must satisfy `|phi| <= BOUNDARY_TOL`.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Serializable description of a shipped domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    /// `[lo, hi]` with `phi(x) = (x - lo)(hi - x) / (hi - lo)`.
    Interval { lo: f64, hi: f64 },
    /// Centered ball with `phi(x) = (r^2 - |x|^2) / (2r)`.
    Ball { dim: usize, radius: f64 },
    /// Axis-aligned centered ellipsoid.
    Ellipsoid { semi_axes: Vec<f64> },
}

impl DomainSpec {
    pub fn build(&self) -> Result<ConvexDomain> {
        match self {
            DomainSpec::Interval { lo, hi } => ConvexDomain::interval(*lo, *hi),
            DomainSpec::Ball { dim, radius } => ConvexDomain::ball(*dim, *radius),
            DomainSpec::Ellipsoid { semi_axes } => ConvexDomain::ellipsoid(semi_axes.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Interval { lo: f64, hi: f64 },
    Ball { dim: usize, radius: f64 },
    Ellipsoid { axes: Vec<f64> },
}

/// A bounded convex set containing the origin. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexDomain {
    shape: Shape,
}

impl ConvexDomain {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(LabError::Parameter(format!("interval needs lo < hi, got [{lo}, {hi}]")));
        }
        if lo > 0.0 || hi < 0.0 {
            return Err(LabError::Parameter(format!("interval [{lo}, {hi}] must contain 0")));
        }
        Ok(ConvexDomain { shape: Shape::Interval { lo, hi } })
    }

    /// The reference domain `[-1, 1]`.
    pub fn unit_interval() -> Self {
        ConvexDomain { shape: Shape::Interval { lo: -1.0, hi: 1.0 } }
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius.is_finite() && radius > 0.0) {
            return Err(LabError::Parameter(format!("ball needs dim >= 1 and radius > 0, got {dim}, {radius}")));
        }
        Ok(ConvexDomain { shape: Shape::Ball { dim, radius } })
    }

    pub fn ellipsoid(axes: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(LabError::Parameter(format!("ellipsoid needs positive semi-axes, got {axes:?}")));
        }
        Ok(ConvexDomain { shape: Shape::Ellipsoid { axes } })
    }

    pub fn spec(&self) -> DomainSpec {
        match &self.shape {
            Shape::Interval { lo, hi } => DomainSpec::Interval { lo: *lo, hi: *hi },
            Shape::Ball { dim, radius } => DomainSpec::Ball { dim: *dim, radius: *radius },
            Shape::Ellipsoid { axes } => DomainSpec::Ellipsoid { semi_axes: axes.clone() },
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Interval { .. } => 1,
            Shape::Ball { dim, .. } => *dim,
            Shape::Ellipsoid { axes } => axes.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => hi - lo,
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Ellipsoid { axes } => 2.0 * axes.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Largest `|x|` over the closed domain.
    pub fn max_norm(&self) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => lo.abs().max(hi.abs()),
            Shape::Ball { radius, .. } => *radius,
            Shape::Ellipsoid { axes } => axes.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Every constructor enforces `0 ∈ closure(G)`.
    pub fn contains_origin(&self) -> bool {
        let origin = vec![0.0; self.dim()];
        self.phi(&origin) >= -BOUNDARY_TOL
    }

    /// Bounding box `(lo, hi)` per coordinate.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Shape::Ball { dim, radius } => (vec![-radius; *dim], vec![*radius; *dim]),
            Shape::Ellipsoid { axes } => (axes.iter().map(|a| -a).collect(), axes.clone()),
        }
    }

    /// Defining function; positive inside, zero on the boundary, negative outside.
    #[inline]
    pub fn phi(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => (x[0] - lo) * (hi - x[0]) / (hi - lo),
            Shape::Ball { radius, .. } => (radius * radius - norm_sq(x)) / (2.0 * radius),
            Shape::Ellipsoid { axes } => {
                let (n, dq2) = ellipsoid_parts(axes, x);
                n / (dq2 + n * n).sqrt()
            }
        }
    }

    pub fn phi_eval(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.phi(x))
    }

    pub fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Interval { lo, hi } => out[0] = (lo + hi - 2.0 * x[0]) / (hi - lo),
            Shape::Ball { radius, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi / radius;
                }
            }
            Shape::Ellipsoid { axes } => {
                // phi = N / D with N = 1 - q, D = sqrt(|grad q|^2 + N^2).
                let (n, dq2) = ellipsoid_parts(axes, x);
                let d = (dq2 + n * n).sqrt();
                for i in 0..axes.len() {
                    let a2 = axes[i] * axes[i];
                    let grad_q = 2.0 * x[i] / a2;
                    let grad_d = (4.0 * x[i] / (a2 * a2) - n * grad_q) / d;
                    out[i] = (-grad_q * d - n * grad_d) / (d * d);
                }
            }
        }
    }

    /// `x ∈ closure(G)` up to the boundary tolerance.
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Interval { lo, hi } => x[0] >= lo - BOUNDARY_TOL && x[0] <= hi + BOUNDARY_TOL,
            Shape::Ball { radius, .. } => norm_sq(x).sqrt() <= radius + BOUNDARY_TOL,
            Shape::Ellipsoid { axes } => ellipsoid_q(axes, x) <= 1.0 + BOUNDARY_TOL,
        }
    }

    /// Euclidean projection onto `closure(G)`; identity on `closure(G)`.
    #[inline]
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Interval { lo, hi } => out[0] = x[0].clamp(*lo, *hi),
            Shape::Ball { radius, .. } => {
                let r = norm_sq(x).sqrt();
                let s = if r > *radius { radius / r } else { 1.0 };
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi * s;
                }
            }
            Shape::Ellipsoid { axes } => {
                if ellipsoid_q(axes, x) <= 1.0 {
                    out.copy_from_slice(x);
                } else {
                    let mu = ellipsoid_multiplier(axes, x);
                    for i in 0..axes.len() {
                        let a2 = axes[i] * axes[i];
                        out[i] = x[i] * a2 / (a2 + mu);
                    }
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; x.len()];
        self.project_into(x, &mut out);
        Ok(out)
    }

    /// Euclidean distance to `closure(G)`.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut p = vec![0.0; x.len()];
        self.project_into(x, &mut p);
        dist(x, &p)
    }

    /// `F_n(x) = -2n (x - Π(x))`.
    pub fn penalization_force(&self, x: &[f64], n: u32) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(LabError::Parameter("penalization index n must be >= 1".into()));
        }
        let p = self.project(x)?;
        Ok(x.iter().zip(&p).map(|(xi, pi)| -2.0 * n as f64 * (xi - pi)).collect())
    }

    /// A nearest boundary point `q` of `x` and the inward unit normal there.
    ///
    /// For exterior points `q = Π(x)`. For interior points any nearest point
    /// is returned when it is not unique.
    pub fn nearest_boundary(&self, x: &[f64], q: &mut [f64], normal: &mut [f64]) {
        match &self.shape {
            Shape::Interval { lo, hi } => {
                if x[0] - lo < hi - x[0] {
                    q[0] = *lo;
                    normal[0] = 1.0;
                } else {
                    q[0] = *hi;
                    normal[0] = -1.0;
                }
            }
            Shape::Ball { radius, .. } => {
                let r = norm_sq(x).sqrt();
                if r == 0.0 {
                    q.fill(0.0);
                    normal.fill(0.0);
                    q[0] = *radius;
                    normal[0] = -1.0;
                } else {
                    for i in 0..x.len() {
                        q[i] = radius * x[i] / r;
                        normal[i] = -x[i] / r;
                    }
                }
            }
            Shape::Ellipsoid { axes } => {
                let qv = ellipsoid_q(axes, x);
                if qv >= 1.0 {
                    self.project_into(x, q);
                } else if let Some(mu) = ellipsoid_interior_multiplier(axes, x) {
                    for i in 0..axes.len() {
                        let a2 = axes[i] * axes[i];
                        q[i] = x[i] * a2 / (a2 + mu);
                    }
                } else if qv > 0.0 {
                    let s = qv.sqrt();
                    for i in 0..axes.len() {
                        q[i] = x[i] / s;
                    }
                } else {
                    q.fill(0.0);
                    let (imin, amin) = axes
                        .iter()
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (i, a)| if *a < acc.1 { (i, *a) } else { acc });
                    q[imin] = amin;
                }
                self.grad_phi(q, normal);
                let n = norm_sq(normal).sqrt();
                for v in normal.iter_mut() {
                    *v /= n;
                }
            }
        }
    }

    /// Uniform draw over `closure(G)` (rejection from the bounding box).
    pub fn sample_uniform(&self, rng: &mut PathRng, out: &mut [f64]) {
        let (lo, hi) = self.bounding_box();
        loop {
            for i in 0..out.len() {
                out[i] = lo[i] + (hi[i] - lo[i]) * rng.uniform();
            }
            if self.phi(out) >= 0.0 {
                return;
            }
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LabError::Parameter(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim()
            )));
        }
        check_finite(x, "point")
    }
}

/// `b̃(x) = -x + b(Π(x)) + Π(x)`: equals `b` on `closure(G)`, and is the sum
/// of the strictly dissipative `-x` and a bounded Lipschitz remainder.
#[derive(Clone, Debug)]
pub struct DriftExtension {
    pub base_drift: VectorField,
    pub domain: ConvexDomain,
    /// Dissipativity constant of the `-x` part.
    pub dissipativity_constant: f64,
}

pub fn extend_drift(b: VectorField, domain: &ConvexDomain) -> DriftExtension {
    DriftExtension { base_drift: b, domain: domain.clone(), dissipativity_constant: 1.0 }
}

impl DriftExtension {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let mut p = [0.0; 8];
        let mut bp = [0.0; 8];
        if d <= 8 {
            self.eval_with(x, out, &mut p[..d], &mut bp[..d]);
        } else {
            let (mut p, mut bp) = (vec![0.0; d], vec![0.0; d]);
            self.eval_with(x, out, &mut p, &mut bp);
        }
    }

    fn eval_with(&self, x: &[f64], out: &mut [f64], p: &mut [f64], bp: &mut [f64]) {
        self.domain.project_into(x, p);
        self.base_drift.eval(p, bp);
        for i in 0..x.len() {
            out[i] = -x[i] + bp[i] + p[i];
        }
    }

    /// Vector field view of `b̃`.
    pub fn as_field(&self) -> VectorField {
        let ext = self.clone();
        VectorField::new(
            format!("extended({})", self.base_drift.label),
            self.domain.dim(),
            self.base_drift.lipschitz + 2.0,
            move |x, out| ext.eval(x, out),
        )
    }

    /// Bound on `|b(Π(x)) + Π(x)|` over all of R^d.
    pub fn remainder_bound(&self) -> Option<f64> {
        self.base_drift.sup_norm.map(|s| s + self.domain.max_norm())
    }
}

#[inline]
pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[inline]
pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn ellipsoid_q(axes: &[f64], x: &[f64]) -> f64 {
    axes.iter().zip(x).map(|(a, xi)| xi * xi / (a * a)).sum()
}

/// `(1 - q(x), |grad q(x)|^2)`.
fn ellipsoid_parts(axes: &[f64], x: &[f64]) -> (f64, f64) {
    let mut q = 0.0;
    let mut dq2 = 0.0;
    for (a, xi) in axes.iter().zip(x) {
        let a2 = a * a;
        q += xi * xi / a2;
        dq2 += 4.0 * xi * xi / (a2 * a2);
    }
    (1.0 - q, dq2)
}

/// `F(mu) = sum x_i^2 a_i^2 / (a_i^2 + mu)^2 - 1` and its derivative.
fn multiplier_eq(axes: &[f64], x: &[f64], mu: f64) -> (f64, f64) {
    let mut f = -1.0;
    let mut df = 0.0;
    for (a, xi) in axes.iter().zip(x) {
        let a2 = a * a;
        let den = a2 + mu;
        let t = xi * xi * a2 / (den * den);
        f += t;
        df -= 2.0 * t / den;
    }
    (f, df)
}

/// Safeguarded Newton on a decreasing function with a sign change in `[lo, hi]`.
fn decreasing_root(axes: &[f64], x: &[f64], mut lo: f64, mut hi: f64, start: f64) -> f64 {
    let mut mu = start;
    for _ in 0..200 {
        let (f, df) = multiplier_eq(axes, x, mu);
        if f.abs() <= 1e-14 {
            break;
        }
        if f > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let mut next = if df < 0.0 { mu - f / df } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - mu).abs() <= 1e-12 * (1.0 + mu.abs()) {
            mu = next;
            break;
        }
        mu = next;
    }
    mu
}

/// Lagrange multiplier `mu >= 0` of the projection of an exterior point.
fn ellipsoid_multiplier(axes: &[f64], x: &[f64]) -> f64 {
    let amax = axes.iter().cloned().fold(0.0, f64::max);
    let hi = amax * norm_sq(x).sqrt() + 1.0;
    decreasing_root(axes, x, 0.0, hi, 0.0)
}

/// Multiplier `mu in (-a_min^2, 0]` of a nearest boundary point of an
/// interior point, when the bracket contains a root.
fn ellipsoid_interior_multiplier(axes: &[f64], x: &[f64]) -> Option<f64> {
    let amin2 = axes.iter().map(|a| a * a).fold(f64::INFINITY, f64::min);
    let lo = -amin2 * (1.0 - 1e-12);
    let (flo, _) = multiplier_eq(axes, x, lo);
    if !(flo > 0.0) {
        return None;
    }
    Some(decreasing_root(axes, x, lo, 0.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shipped() -> Vec<ConvexDomain> {
        vec![
            ConvexDomain::unit_interval(),
            ConvexDomain::interval(-0.5, 2.0).unwrap(),
            ConvexDomain::ball(2, 1.0).unwrap(),
            ConvexDomain::ball(3, 0.7).unwrap(),
            ConvexDomain::ellipsoid(vec![2.0, 0.5]).unwrap(),
            ConvexDomain::ellipsoid(vec![1.0, 1.5, 0.8]).unwrap(),
        ]
    }

    #[test]
    fn phi_on_reference_interval() {
        let g = ConvexDomain::unit_interval();
        assert_eq!(g.phi_eval(&[0.0]).unwrap(), 0.5);
        assert_eq!(g.phi_eval(&[1.0]).unwrap(), 0.0);
        assert!(g.phi_eval(&[f64::NAN]).is_err());
        let ball = ConvexDomain::ball(2, 1.0).unwrap();
        assert!(ball.phi_eval(&[2.0, 0.0]).unwrap() < 0.0);
    }

    #[test]
    fn projection_examples() {
        let g = ConvexDomain::unit_interval();
        assert_eq!(g.project(&[1.5]).unwrap(), vec![1.0]);
        assert_eq!(g.project(&[0.3]).unwrap(), vec![0.3]);
        let ball = ConvexDomain::ball(2, 1.0).unwrap();
        assert_eq!(ball.project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(g.project(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn penalization_examples() {
        let g = ConvexDomain::unit_interval();
        assert_eq!(g.penalization_force(&[1.5], 4).unwrap(), vec![-4.0]);
        assert_eq!(g.penalization_force(&[0.2], 9).unwrap(), vec![0.0]);
        assert!(g.penalization_force(&[1.5], 0).is_err());
        let ball = ConvexDomain::ball(2, 1.0).unwrap();
        assert_eq!(ball.penalization_force(&[2.0, 0.0], 1).unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn extension_examples() {
        let g = ConvexDomain::unit_interval();
        let ext = extend_drift(VectorField::zero(1), &g);
        let mut out = [0.0];
        ext.eval(&[2.0], &mut out);
        assert_eq!(out[0], -1.0);
        ext.eval(&[0.5], &mut out);
        assert_eq!(out[0], 0.0);
        let ext = extend_drift(VectorField::linear_restoring(1, 1.0), &g);
        ext.eval(&[3.0], &mut out);
        assert_eq!(out[0], -3.0);
    }

    #[test]
    fn unit_normal_on_boundary_points() {
        for g in shipped() {
            let d = g.dim();
            let mut rng = PathRng::new(11, 0);
            let mut x = vec![0.0; d];
            let mut q = vec![0.0; d];
            let mut n = vec![0.0; d];
            let mut grad = vec![0.0; d];
            for _ in 0..200 {
                for v in x.iter_mut() {
                    *v = 5.0 * (rng.uniform() - 0.5);
                }
                if g.contains(&x) {
                    continue;
                }
                g.project_into(&x, &mut q);
                assert!(g.phi(&q).abs() <= BOUNDARY_TOL * 10.0, "{:?} phi={}", g, g.phi(&q));
                g.grad_phi(&q, &mut grad);
                assert!((norm_sq(&grad).sqrt() - 1.0).abs() < 1e-9);
                // grad phi points back toward the domain.
                let outward: f64 = grad.iter().zip(x.iter().zip(&q)).map(|(gi, (xi, qi))| gi * (xi - qi)).sum();
                assert!(outward < 0.0);
                g.nearest_boundary(&x, &mut q, &mut n);
                assert!((norm_sq(&n).sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grad_phi_matches_finite_differences() {
        for g in shipped() {
            let d = g.dim();
            let mut rng = PathRng::new(5, 1);
            let mut x = vec![0.0; d];
            let mut grad = vec![0.0; d];
            for _ in 0..50 {
                for v in x.iter_mut() {
                    *v = 3.0 * (rng.uniform() - 0.5);
                }
                g.grad_phi(&x, &mut grad);
                for i in 0..d {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (g.phi(&xp) - g.phi(&xm)) / (2.0 * h);
                    assert!((fd - grad[i]).abs() < 1e-6, "{g:?} {x:?} {i}: {fd} vs {}", grad[i]);
                }
            }
        }
    }

    #[test]
    fn interior_nearest_point_on_ellipsoid_is_closest() {
        let g = ConvexDomain::ellipsoid(vec![2.0, 0.5]).unwrap();
        let x = [0.3, 0.2];
        let mut q = [0.0; 2];
        let mut n = [0.0; 2];
        g.nearest_boundary(&x, &mut q, &mut n);
        assert!(g.phi(&q).abs() < 1e-10);
        let best = dist(&x, &q);
        for k in 0..2000 {
            let t = k as f64 / 2000.0 * std::f64::consts::TAU;
            let p = [2.0 * t.cos(), 0.5 * t.sin()];
            assert!(dist(&x, &p) >= best - 1e-9);
        }
    }

    #[test]
    fn shipped_domains_contain_origin() {
        for g in shipped() {
            assert!(g.contains_origin());
            assert!(g.phi(&vec![0.0; g.dim()]) > 0.0);
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            which in 0usize..6,
            a in prop::collection::vec(-4.0f64..4.0, 3),
            b in prop::collection::vec(-4.0f64..4.0, 3),
        ) {
            let g = &shipped()[which];
            let d = g.dim();
            let (x, y) = (&a[..d], &b[..d]);
            let px = g.project(x).unwrap();
            let py = g.project(y).unwrap();
            let ppx = g.project(&px).unwrap();
            for i in 0..d {
                prop_assert!((ppx[i] - px[i]).abs() < 1e-10);
            }
            prop_assert!(g.contains(&px));
            prop_assert!(dist(&px, &py) <= dist(x, y) + 1e-10);
            // Sign pattern of phi.
            if g.contains(x) {
                prop_assert!(g.phi(x) >= -1e-12);
            } else {
                prop_assert!(g.phi(x) < 0.0);
            }
        }

        #[test]
        fn penalization_force_restores(which in 0usize..6, a in prop::collection::vec(-4.0f64..4.0, 3), n in 1u32..200) {
            let g = &shipped()[which];
            let x = &a[..g.dim()];
            let f = g.penalization_force(x, n).unwrap();
            let p = g.project(x).unwrap();
            let pairing: f64 = f.iter().zip(x.iter().zip(&p)).map(|(fi, (xi, pi))| fi * (xi - pi)).sum();
            prop_assert!(pairing <= 0.0);
            let fnorm = norm_sq(&f).sqrt();
            prop_assert!((fnorm - 2.0 * n as f64 * g.distance(x)).abs() < 1e-9 * (1.0 + fnorm));
        }

        #[test]
        fn segments_stay_in_closure(which in 0usize..6, a in prop::collection::vec(-4.0f64..4.0, 3), b in prop::collection::vec(-4.0f64..4.0, 3), t in 0.0f64..1.0) {
            let g = &shipped()[which];
            let d = g.dim();
            let x = g.project(&a[..d]).unwrap();
            let y = g.project(&b[..d]).unwrap();
            let z: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| t * xi + (1.0 - t) * yi).collect();
            prop_assert!(g.phi(&z) >= -1e-12);
        }

        #[test]
        fn extension_agrees_inside_and_has_bounded_remainder(which in 0usize..6, a in prop::collection::vec(-6.0f64..6.0, 3)) {
            let g = &shipped()[which];
            let d = g.dim();
            let base = VectorField::new("affine", d, 1.0, |x, out| {
                for i in 0..out.len() { out[i] = 0.3 - 0.5 * x[i]; }
            }).with_sup_norm(0.3 * (d as f64).sqrt() + 0.5 * 2.0);
            let ext = extend_drift(base.clone(), g);
            let x = &a[..d];
            let mut bt = vec![0.0; d];
            ext.eval(x, &mut bt);
            let rem: Vec<f64> = bt.iter().zip(x).map(|(b, xi)| b + xi).collect();
            prop_assert!(norm_sq(&rem).sqrt() <= ext.remainder_bound().unwrap() + 1e-12);
            let p = g.project(x).unwrap();
            let mut bb = vec![0.0; d];
            let mut be = vec![0.0; d];
            base.eval(&p, &mut bb);
            ext.eval(&p, &mut be);
            for i in 0..d {
                prop_assert!((bb[i] - be[i]).abs() <= 1e-12);
            }
        }
    }
}

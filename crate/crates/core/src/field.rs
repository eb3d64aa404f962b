//! Shared function handles for drifts, scalar data and BSDE drivers.

use std::fmt;
use std::sync::Arc;

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type DriverFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Scalar field `x -> s(x)` with a sup-norm bound when one is known.
#[derive(Clone)]
pub struct ScalarField {
    f: Arc<ScalarFn>,
    pub label: String,
    /// `sup |s|` over the closed domain, if bounded and known.
    pub sup_norm: Option<f64>,
}

impl ScalarField {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField { f: Arc::new(f), label: label.into(), sup_norm: None }
    }

    pub fn with_sup_norm(mut self, bound: f64) -> Self {
        self.sup_norm = Some(bound);
        self
    }

    pub fn constant(c: f64) -> Self {
        ScalarField::new(format!("constant:{c}"), move |_| c).with_sup_norm(c.abs())
    }

    pub fn zero() -> Self {
        ScalarField::constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.label)
    }
}

/// Vector field `x -> b(x)` written into an output slice.
#[derive(Clone)]
pub struct VectorField {
    f: Arc<VectorFn>,
    pub dim: usize,
    pub label: String,
    pub lipschitz: f64,
    /// `sup |b|` over the closed domain, if known.
    pub sup_norm: Option<f64>,
}

impl VectorField {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        lipschitz: f64,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        VectorField { f: Arc::new(f), dim, label: label.into(), lipschitz, sup_norm: None }
    }

    pub fn with_sup_norm(mut self, bound: f64) -> Self {
        self.sup_norm = Some(bound);
        self
    }

    pub fn zero(dim: usize) -> Self {
        VectorField::new("zero", dim, 0.0, |_, out| out.fill(0.0)).with_sup_norm(0.0)
    }

    /// `b(x) = -rate * x`.
    pub fn linear_restoring(dim: usize, rate: f64) -> Self {
        VectorField::new(format!("linear:-{rate}x"), dim, rate.abs(), move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -rate * xi;
            }
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField({}, d={})", self.label, self.dim)
    }
}

/// BSDE driver `f(x, z)` with `z` the row vector `grad u * sigma`.
#[derive(Clone)]
pub struct Driver {
    f: Arc<DriverFn>,
    pub label: String,
    /// Lipschitz constant in `z`.
    pub z_lipschitz: f64,
    /// True when `f` does not read `z`.
    pub z_independent: bool,
}

impl Driver {
    pub fn new(
        label: impl Into<String>,
        z_lipschitz: f64,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Driver { f: Arc::new(f), label: label.into(), z_lipschitz, z_independent: false }
    }

    /// A driver depending on `x` only.
    pub fn of_x(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Driver { f: Arc::new(move |x, _| f(x)), label: label.into(), z_lipschitz: 0.0, z_independent: true }
    }

    pub fn zero() -> Self {
        Driver::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Driver::of_x(format!("constant:{c}"), move |_| c)
    }

    /// `f(x, z) = scale * |z|`.
    pub fn abs_z(scale: f64) -> Self {
        Driver::new(format!("abs_z:{scale}"), scale.abs(), move |_, z| {
            scale * z.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        (self.f)(x, z)
    }

    /// `f + c`.
    pub fn shifted(&self, c: f64) -> Driver {
        let inner = self.f.clone();
        Driver {
            f: Arc::new(move |x, z| inner(x, z) + c),
            label: format!("{}+{c}", self.label),
            z_lipschitz: self.z_lipschitz,
            z_independent: self.z_independent,
        }
    }
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Driver({}, Cz={})", self.label, self.z_lipschitz)
    }
}

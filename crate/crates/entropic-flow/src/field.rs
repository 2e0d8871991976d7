//! Smooth vector fields on `[0,1]` or S¹ and their flows.

use crate::error::{Error, Result};
use crate::maps::{ScalarFn, SmoothMap};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// A smooth field `φ` with closed-form `φ′`, `φ″` and a cancellation-free
/// increment.
pub trait VectorField: ScalarFn<f64> + fmt::Debug {
    /// `φ(0) = φ(1) = 0`, checked to `1e-14`.
    fn vanishes_at_endpoints(&self) -> bool {
        self.value(0.0).abs() < 1e-14 && self.value(1.0).abs() < 1e-14
    }

    /// `φ(x + 1) = φ(x)`.
    fn periodic(&self) -> bool {
        false
    }
}

pub type FieldRef = Arc<dyn VectorField>;

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn vanishes_at_endpoints(&self) -> bool {
        (**self).vanishes_at_endpoints()
    }
    fn periodic(&self) -> bool {
        (**self).periodic()
    }
}

/// `sup |φ′|` on a uniform grid of 2001 points.
pub fn deriv_sup<F: VectorField + ?Sized>(phi: &F) -> f64 {
    (0..=2000).map(|i| phi.deriv(i as f64 / 2000.0).abs()).fold(0.0, f64::max)
}

/// `Σ c_n xⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// `x(1−x)`; its drift functional has no jump part.
    pub fn quadratic_bump() -> Self {
        Self::new(vec![0.0, 1.0, -1.0])
    }

    /// `x²(1−x)`.
    pub fn cubic_bump() -> Self {
        Self::new(vec![0.0, 0.0, 1.0, -1.0])
    }

    /// `x(1−x)²`.
    pub fn cubic_bump_left() -> Self {
        Self::new(vec![0.0, 1.0, -2.0, 1.0])
    }

    /// `x²(1−x)²`.
    pub fn quartic_bump() -> Self {
        Self::new(vec![0.0, 0.0, 1.0, -2.0, 1.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn derived(&self) -> Vec<f64> {
        self.coeffs.iter().enumerate().skip(1).map(|(n, c)| c * n as f64).collect()
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

impl ScalarFn<f64> for Polynomial {
    fn value(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }
    fn deriv(&self, x: f64) -> f64 {
        horner(&self.derived(), x)
    }
    fn deriv2(&self, x: f64) -> f64 {
        horner(&Polynomial::new(self.derived()).derived(), x)
    }
    fn increment(&self, x: f64, dx: f64) -> f64 {
        // (x+d)ⁿ − xⁿ = d·Σ_{k<n} (x+d)^k x^{n−1−k}
        let y = x + dx;
        let mut total = 0.0;
        for (n, &c) in self.coeffs.iter().enumerate().skip(1) {
            let mut s = 0.0;
            let mut yk = 1.0;
            for k in 0..n {
                s += yk * x.powi((n - 1 - k) as i32);
                yk *= y;
            }
            total += c * s;
        }
        total * dx
    }
}

impl VectorField for Polynomial {}

/// `amp · sin(ωx + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trig {
    pub amp: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Trig {
    pub fn sin(amp: f64, omega: f64) -> Self {
        Self { amp, omega, phase: 0.0 }
    }
    pub fn cos(amp: f64, omega: f64) -> Self {
        Self { amp, omega, phase: 0.5 * PI }
    }
}

impl ScalarFn<f64> for Trig {
    fn value(&self, x: f64) -> f64 {
        self.amp * (self.omega * x + self.phase).sin()
    }
    fn deriv(&self, x: f64) -> f64 {
        self.amp * self.omega * (self.omega * x + self.phase).cos()
    }
    fn deriv2(&self, x: f64) -> f64 {
        -self.amp * self.omega * self.omega * (self.omega * x + self.phase).sin()
    }
    fn increment(&self, x: f64, dx: f64) -> f64 {
        2.0 * self.amp * (self.omega * (x + 0.5 * dx) + self.phase).cos() * (0.5 * self.omega * dx).sin()
    }
}

impl VectorField for Trig {
    fn periodic(&self) -> bool {
        let k = self.omega / (2.0 * PI);
        (k - k.round()).abs() < 1e-12
    }
}

/// Pointwise product of two fields.
#[derive(Debug, Clone)]
pub struct Product(pub FieldRef, pub FieldRef);

impl ScalarFn<f64> for Product {
    fn value(&self, x: f64) -> f64 {
        self.0.value(x) * self.1.value(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.0.deriv(x) * self.1.value(x) + self.0.value(x) * self.1.deriv(x)
    }
    fn deriv2(&self, x: f64) -> f64 {
        let (a, b) = (&self.0, &self.1);
        a.deriv2(x) * b.value(x) + 2.0 * a.deriv(x) * b.deriv(x) + a.value(x) * b.deriv2(x)
    }
    fn increment(&self, x: f64, dx: f64) -> f64 {
        self.0.increment(x, dx) * self.1.value(x + dx) + self.0.value(x) * self.1.increment(x, dx)
    }
}

impl VectorField for Product {
    fn periodic(&self) -> bool {
        self.0.periodic() && self.1.periodic()
    }
}

/// `sin(jπx)·x(1−x)`, scaled so that `sup |φ| = 1` on a fine grid.
pub fn sine_bump(j: u32) -> Product {
    let raw = Product(Arc::new(Trig::sin(1.0, j as f64 * PI)), Arc::new(Polynomial::quadratic_bump()));
    let sup = (0..=4000).map(|i| raw.value(i as f64 / 4000.0).abs()).fold(0.0, f64::max);
    Product(Arc::new(Trig::sin(1.0 / sup, j as f64 * PI)), Arc::new(Polynomial::quadratic_bump()))
}

/// `Σ w_i φ_i`.
#[derive(Debug, Clone)]
pub struct Combination(pub Vec<(f64, FieldRef)>);

impl ScalarFn<f64> for Combination {
    fn value(&self, x: f64) -> f64 {
        self.0.iter().map(|(w, f)| w * f.value(x)).sum()
    }
    fn deriv(&self, x: f64) -> f64 {
        self.0.iter().map(|(w, f)| w * f.deriv(x)).sum()
    }
    fn deriv2(&self, x: f64) -> f64 {
        self.0.iter().map(|(w, f)| w * f.deriv2(x)).sum()
    }
    fn increment(&self, x: f64, dx: f64) -> f64 {
        self.0.iter().map(|(w, f)| w * f.increment(x, dx)).sum()
    }
}

impl VectorField for Combination {
    fn periodic(&self) -> bool {
        self.0.iter().all(|(_, f)| f.periodic())
    }
}

/// `φ ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ScalarFn<f64> for Zero {
    fn value(&self, _: f64) -> f64 {
        0.0
    }
    fn deriv(&self, _: f64) -> f64 {
        0.0
    }
    fn deriv2(&self, _: f64) -> f64 {
        0.0
    }
    fn increment(&self, _: f64, _: f64) -> f64 {
        0.0
    }
}

impl VectorField for Zero {
    fn periodic(&self) -> bool {
        true
    }
}

/// Fixed RK4 step for `φ`: `1e-3·min(1, 1/‖φ′‖∞)`.
pub fn rk4_step_size<F: VectorField + ?Sized>(phi: &F) -> f64 {
    let d = deriv_sup(phi);
    1e-3 * if d > 1.0 { 1.0 / d } else { 1.0 }
}

fn steps_for(t: f64, h_max: f64) -> (usize, f64) {
    let n = ((t.abs() / h_max).ceil() as usize).max(1);
    (n, t / n as f64)
}

/// `e_{tφ}(x)`.
pub fn flow(phi: &dyn VectorField, t: f64, x: f64) -> f64 {
    FlowMap::with_step(Arc::new(ForwardRef(phi)), t, rk4_step_size(phi)).value(x)
}

// Lets `flow` borrow a field without requiring an `Arc`.
struct ForwardRef<'a>(&'a dyn VectorField);

impl fmt::Debug for ForwardRef<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl ScalarFn<f64> for ForwardRef<'_> {
    fn value(&self, x: f64) -> f64 {
        self.0.value(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.0.deriv(x)
    }
    fn deriv2(&self, x: f64) -> f64 {
        self.0.deriv2(x)
    }
    fn increment(&self, x: f64, dx: f64) -> f64 {
        self.0.increment(x, dx)
    }
}

impl VectorField for ForwardRef<'_> {
    fn vanishes_at_endpoints(&self) -> bool {
        self.0.vanishes_at_endpoints()
    }
    fn periodic(&self) -> bool {
        self.0.periodic()
    }
}

/// The time-`t` flow map `e_{tφ}` as a smooth map. Derivatives come from the
/// variational equations integrated alongside the trajectory.
#[derive(Clone)]
pub struct FlowMap<F: ?Sized> {
    phi: Arc<F>,
    t: f64,
    n: usize,
    dt: f64,
}

impl<F: VectorField + ?Sized> FlowMap<F> {
    pub fn new(phi: Arc<F>, t: f64) -> Self {
        let h = rk4_step_size(&*phi);
        Self::with_step(phi, t, h)
    }

    pub fn with_step(phi: Arc<F>, t: f64, h_max: f64) -> Self {
        let (n, dt) = steps_for(t, h_max);
        Self { phi, t, n, dt }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Integrate `y′ = rhs(y)` on a small fixed-size state.
    fn rk4<const N: usize>(&self, mut y: [f64; N], rhs: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
        let h = self.dt;
        let add = |a: &[f64; N], b: &[f64; N], s: f64| {
            let mut out = *a;
            for i in 0..N {
                out[i] += s * b[i];
            }
            out
        };
        for _ in 0..self.n {
            let k1 = rhs(&y);
            let k2 = rhs(&add(&y, &k1, 0.5 * h));
            let k3 = rhs(&add(&y, &k2, 0.5 * h));
            let k4 = rhs(&add(&y, &k3, h));
            for i in 0..N {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }
}

impl<F: VectorField + ?Sized> fmt::Debug for FlowMap<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({} · {:?})", self.t, self.phi)
    }
}

impl<F: VectorField + ?Sized> ScalarFn<f64> for FlowMap<F> {
    fn value(&self, x: f64) -> f64 {
        self.rk4([x], |y| [self.phi.value(y[0])])[0]
    }
    fn deriv(&self, x: f64) -> f64 {
        self.rk4([x, 1.0], |y| [self.phi.value(y[0]), self.phi.deriv(y[0]) * y[1]])[1]
    }
    fn deriv2(&self, x: f64) -> f64 {
        self.rk4([x, 1.0, 0.0], |y| {
            let (p1, p2) = (self.phi.deriv(y[0]), self.phi.deriv2(y[0]));
            [self.phi.value(y[0]), p1 * y[1], p2 * y[1] * y[1] + p1 * y[2]]
        })[2]
    }
    fn increment(&self, x: f64, dx: f64) -> f64 {
        // evolve the separation δ between the trajectories of x and x + dx
        self.rk4([x, dx], |y| [self.phi.value(y[0]), self.phi.increment(y[0], y[1])])[1]
    }
}

impl<F: VectorField + ?Sized> SmoothMap<f64> for FlowMap<F> {
    fn fixes_endpoints(&self) -> bool {
        self.phi.vanishes_at_endpoints()
    }
    fn circle_periodic(&self) -> bool {
        self.phi.periodic()
    }
    fn inverse(&self, y: f64) -> f64 {
        Self { phi: self.phi.clone(), t: -self.t, n: self.n, dt: -self.dt }.value(y)
    }
}

/// Reject fields whose endpoint behaviour does not fit the domain.
pub fn check_field_for_interval(phi: &dyn VectorField) -> Result<()> {
    if phi.vanishes_at_endpoints() {
        Ok(())
    } else {
        Err(Error::InvalidMap(format!("field {phi:?} does not vanish at 0 and 1")))
    }
}

pub fn check_field_for_circle(phi: &dyn VectorField) -> Result<()> {
    if phi.periodic() {
        Ok(())
    } else {
        Err(Error::InvalidMap(format!("field {phi:?} is not 1-periodic")))
    }
}

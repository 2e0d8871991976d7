//! Smooth scalar functions and increasing reparametrizations of `[0,1]` / S¹.
//!
//! Every function carries an `increment(x, dx)` that evaluates
//! `f(x + dx) - f(x)` without cancellation; jump heights of sampled paths
//! routinely fall below `1e-12`, and secant slopes built from plain
//! differences would lose most of their digits.

use crate::error::{Error, Result};
use crate::scalar::Real;
use std::fmt;
use std::sync::Arc;

/// A smooth function of one real variable with closed-form derivatives.
pub trait ScalarFn<T: Real>: Send + Sync {
    fn value(&self, x: T) -> T;
    fn deriv(&self, x: T) -> T;
    fn deriv2(&self, x: T) -> T;

    /// `f(x + dx) - f(x)`, accurate for small `dx`.
    fn increment(&self, x: T, dx: T) -> T {
        self.value(x + dx) - self.value(x)
    }
}

impl<T: Real, F: ScalarFn<T> + ?Sized> ScalarFn<T> for Arc<F> {
    fn value(&self, x: T) -> T {
        (**self).value(x)
    }
    fn deriv(&self, x: T) -> T {
        (**self).deriv(x)
    }
    fn deriv2(&self, x: T) -> T {
        (**self).deriv2(x)
    }
    fn increment(&self, x: T, dx: T) -> T {
        (**self).increment(x, dx)
    }
}

/// An increasing C² map `h` of `[0,1]`, or a degree-one lift of a circle
/// diffeomorphism (`h(x + 1) = h(x) + 1`).
pub trait SmoothMap<T: Real>: ScalarFn<T> + fmt::Debug {
    /// `h(0) = 0` and `h(1) = 1`.
    fn fixes_endpoints(&self) -> bool {
        true
    }

    /// `h` is the lift of a circle map.
    fn circle_periodic(&self) -> bool {
        false
    }

    /// `h⁻¹(y)` by safeguarded Newton iteration.
    fn inverse(&self, y: T) -> T {
        let (lo, hi) = if self.circle_periodic() {
            (y - T::one(), y + T::one())
        } else {
            (T::zero(), T::one())
        };
        newton_inverse(|x| self.value(x), |x| self.deriv(x), y, lo, hi)
    }
}

impl<T: Real, M: SmoothMap<T> + ?Sized> SmoothMap<T> for Arc<M> {
    fn fixes_endpoints(&self) -> bool {
        (**self).fixes_endpoints()
    }
    fn circle_periodic(&self) -> bool {
        (**self).circle_periodic()
    }
    fn inverse(&self, y: T) -> T {
        (**self).inverse(y)
    }
}

pub type MapRef<T> = Arc<dyn SmoothMap<T>>;

/// Solve `f(x) = y` on a bracket `[lo, hi]` with `f` increasing.
pub(crate) fn newton_inverse<T: Real>(
    f: impl Fn(T) -> T,
    df: impl Fn(T) -> T,
    y: T,
    mut lo: T,
    mut hi: T,
) -> T {
    let two = T::c(2.0);
    let mut x = y.max(lo).min(hi);
    for _ in 0..100 {
        let r = f(x) - y;
        if r == T::zero() {
            return x;
        }
        if r > T::zero() {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let d = df(x);
        let mut next = x - r / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo + hi) / two;
        }
        let step = (next - x).abs();
        x = next;
        if step <= T::epsilon() * two * x.abs().max(T::one()) {
            break;
        }
    }
    x
}

/// `h(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl<T: Real> ScalarFn<T> for Identity {
    fn value(&self, x: T) -> T {
        x
    }
    fn deriv(&self, _: T) -> T {
        T::one()
    }
    fn deriv2(&self, _: T) -> T {
        T::zero()
    }
    fn increment(&self, _: T, dx: T) -> T {
        dx
    }
}

impl<T: Real> SmoothMap<T> for Identity {
    fn circle_periodic(&self) -> bool {
        true
    }
    fn inverse(&self, y: T) -> T {
        y
    }
}

/// `h(x) = x + a·sin(jπx)/(jπ)`, so `h′(x) = 1 + a·cos(jπx)`.
///
/// An amplitude-`b` perturbation `x + b·sin(πx)` is `a = bπ, j = 1`.
#[derive(Debug, Clone, Copy)]
pub struct SinePerturbation<T> {
    a: T,
    j: u32,
}

impl<T: Real> SinePerturbation<T> {
    pub fn new(a: T, j: u32) -> Result<Self> {
        if !(a.abs() < T::one()) || j == 0 {
            return Err(Error::InvalidMap(format!("sine perturbation needs |a| < 1, j >= 1 (a = {a}, j = {j})")));
        }
        Ok(Self { a, j })
    }

    fn omega(&self) -> T {
        T::PI() * T::c(self.j as f64)
    }
}

impl<T: Real> ScalarFn<T> for SinePerturbation<T> {
    fn value(&self, x: T) -> T {
        let w = self.omega();
        x + self.a * (w * x).sin() / w
    }
    fn deriv(&self, x: T) -> T {
        T::one() + self.a * (self.omega() * x).cos()
    }
    fn deriv2(&self, x: T) -> T {
        let w = self.omega();
        -self.a * w * (w * x).sin()
    }
    fn increment(&self, x: T, dx: T) -> T {
        let w = self.omega();
        let half = T::c(0.5);
        dx + self.a * T::c(2.0) * (w * (x + half * dx)).cos() * (w * half * dx).sin() / w
    }
}

impl<T: Real> SmoothMap<T> for SinePerturbation<T> {}

/// Circle analogue `h(x) = x + a·sin(2πjx)/(2πj)`; a degree-one lift.
#[derive(Debug, Clone, Copy)]
pub struct CirclePerturbation<T> {
    a: T,
    j: u32,
}

impl<T: Real> CirclePerturbation<T> {
    pub fn new(a: T, j: u32) -> Result<Self> {
        if !(a.abs() < T::one()) || j == 0 {
            return Err(Error::InvalidMap(format!("circle perturbation needs |a| < 1, j >= 1 (a = {a}, j = {j})")));
        }
        Ok(Self { a, j })
    }

    fn omega(&self) -> T {
        T::TAU() * T::c(self.j as f64)
    }
}

impl<T: Real> ScalarFn<T> for CirclePerturbation<T> {
    fn value(&self, x: T) -> T {
        let w = self.omega();
        x + self.a * (w * x).sin() / w
    }
    fn deriv(&self, x: T) -> T {
        T::one() + self.a * (self.omega() * x).cos()
    }
    fn deriv2(&self, x: T) -> T {
        let w = self.omega();
        -self.a * w * (w * x).sin()
    }
    fn increment(&self, x: T, dx: T) -> T {
        let w = self.omega();
        let half = T::c(0.5);
        dx + self.a * T::c(2.0) * (w * (x + half * dx)).cos() * (w * half * dx).sin() / w
    }
}

impl<T: Real> SmoothMap<T> for CirclePerturbation<T> {
    fn circle_periodic(&self) -> bool {
        true
    }
}

/// Logistic reparametrization, rescaled to fix both endpoints:
/// `h(x) = (σ(c(x-½)) - σ(-c/2)) / (σ(c/2) - σ(-c/2))`.
#[derive(Debug, Clone, Copy)]
pub struct Logistic<T> {
    c: T,
    lo: T,
    span: T,
}

impl<T: Real> Logistic<T> {
    pub fn new(c: T) -> Result<Self> {
        if !(c > T::zero()) || !c.is_finite() {
            return Err(Error::InvalidMap(format!("logistic steepness must be positive (c = {c})")));
        }
        let half = T::c(0.5);
        let lo = sigmoid(-c * half);
        let span = sigmoid(c * half) - lo;
        Ok(Self { c, lo, span })
    }
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Real> ScalarFn<T> for Logistic<T> {
    fn value(&self, x: T) -> T {
        (sigmoid(self.c * (x - T::c(0.5))) - self.lo) / self.span
    }
    fn deriv(&self, x: T) -> T {
        let s = sigmoid(self.c * (x - T::c(0.5)));
        self.c * s * (T::one() - s) / self.span
    }
    fn deriv2(&self, x: T) -> T {
        let s = sigmoid(self.c * (x - T::c(0.5)));
        self.c * self.c * s * (T::one() - s) * (T::one() - T::c(2.0) * s) / self.span
    }
    fn increment(&self, x: T, dx: T) -> T {
        // σ(b) − σ(a) = sinh((b−a)/2) / (2 cosh(a/2) cosh(b/2))
        let half = T::c(0.5);
        let a = self.c * (x - half);
        let b = self.c * (x + dx - half);
        (self.c * dx * half).sinh() / (T::c(2.0) * (a * half).cosh() * (b * half).cosh()) / self.span
    }
}

impl<T: Real> SmoothMap<T> for Logistic<T> {}

/// `outer ∘ inner`.
#[derive(Clone)]
pub struct Composed<T> {
    outer: MapRef<T>,
    inner: MapRef<T>,
}

impl<T: Real> Composed<T> {
    pub fn new(outer: MapRef<T>, inner: MapRef<T>) -> Self {
        Self { outer, inner }
    }
}

impl<T: Real> fmt::Debug for Composed<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}) ∘ ({:?})", self.outer, self.inner)
    }
}

impl<T: Real> ScalarFn<T> for Composed<T> {
    fn value(&self, x: T) -> T {
        self.outer.value(self.inner.value(x))
    }
    fn deriv(&self, x: T) -> T {
        self.outer.deriv(self.inner.value(x)) * self.inner.deriv(x)
    }
    fn deriv2(&self, x: T) -> T {
        let y = self.inner.value(x);
        let d = self.inner.deriv(x);
        self.outer.deriv2(y) * d * d + self.outer.deriv(y) * self.inner.deriv2(x)
    }
    fn increment(&self, x: T, dx: T) -> T {
        let y = self.inner.value(x);
        self.outer.increment(y, self.inner.increment(x, dx))
    }
}

impl<T: Real> SmoothMap<T> for Composed<T> {
    fn fixes_endpoints(&self) -> bool {
        self.outer.fixes_endpoints() && self.inner.fixes_endpoints()
    }
    fn circle_periodic(&self) -> bool {
        self.outer.circle_periodic() && self.inner.circle_periodic()
    }
    fn inverse(&self, y: T) -> T {
        self.inner.inverse(self.outer.inverse(y))
    }
}

/// `h⁻¹`, evaluated numerically.
#[derive(Clone)]
pub struct InverseMap<T> {
    h: MapRef<T>,
}

impl<T: Real> InverseMap<T> {
    pub fn new(h: MapRef<T>) -> Self {
        Self { h }
    }
}

impl<T: Real> fmt::Debug for InverseMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?})⁻¹", self.h)
    }
}

impl<T: Real> ScalarFn<T> for InverseMap<T> {
    fn value(&self, y: T) -> T {
        self.h.inverse(y)
    }
    fn deriv(&self, y: T) -> T {
        T::one() / self.h.deriv(self.h.inverse(y))
    }
    fn deriv2(&self, y: T) -> T {
        let x = self.h.inverse(y);
        let d = self.h.deriv(x);
        -self.h.deriv2(x) / (d * d * d)
    }
    fn increment(&self, y: T, dy: T) -> T {
        // Solve h(x0 + d) - h(x0) = dy for d directly, never forming h⁻¹(y + dy).
        let x0 = self.h.inverse(y);
        if dy == T::zero() {
            return T::zero();
        }
        let s = dy.signum();
        let mut lo = T::zero();
        let mut hi = s * dy / self.h.deriv(x0);
        let two = T::c(2.0);
        for _ in 0..200 {
            if s * self.h.increment(x0, s * hi) >= s * dy {
                break;
            }
            lo = hi;
            hi = hi * two;
        }
        let mut d = hi;
        for _ in 0..100 {
            let r = s * (self.h.increment(x0, s * d) - dy);
            if r == T::zero() {
                break;
            }
            if r > T::zero() {
                hi = d;
            } else {
                lo = d;
            }
            let mut next = d - r / self.h.deriv(x0 + s * d);
            if !(next > lo && next < hi) || !next.is_finite() {
                next = (lo + hi) / two;
            }
            let step = (next - d).abs();
            d = next;
            if step <= T::epsilon() * d.abs() {
                break;
            }
        }
        s * d
    }
}

impl<T: Real> SmoothMap<T> for InverseMap<T> {
    fn fixes_endpoints(&self) -> bool {
        self.h.fixes_endpoints()
    }
    fn circle_periodic(&self) -> bool {
        self.h.circle_periodic()
    }
    fn inverse(&self, x: T) -> T {
        self.h.value(x)
    }
}

/// Reject maps that fail to be increasing on a uniform evaluation grid, or
/// whose endpoint flag is not honoured.
pub fn validate_map<T: Real, M: SmoothMap<T> + ?Sized>(h: &M) -> Result<()> {
    let n = 1000;
    for i in 0..=n {
        let x = T::c(i as f64 / n as f64);
        let d = h.deriv(x);
        if !(d > T::zero()) {
            return Err(Error::InvalidMap(format!("h'({x}) = {d} is not positive")));
        }
    }
    if h.fixes_endpoints() {
        let tol = T::structural_tol();
        let (h0, h1) = (h.value(T::zero()), h.value(T::one()));
        if h0.abs() > tol || (h1 - T::one()).abs() > tol {
            return Err(Error::InvalidMap(format!("endpoint flag set but h(0) = {h0}, h(1) = {h1}")));
        }
    }
    Ok(())
}

/// `(sup |log h′|, sup |(log h′)′|)` on a 10⁴-point grid of `[0,1]`.
pub fn log_derivative_sups<T: Real, M: SmoothMap<T> + ?Sized>(h: &M) -> (T, T) {
    let n = 10_000;
    let mut a = T::zero();
    let mut b = T::zero();
    for i in 0..=n {
        let x = T::c(i as f64 / n as f64);
        let d = h.deriv(x);
        a = a.max(d.ln().abs());
        b = b.max((h.deriv2(x) / d).abs());
    }
    (a, b)
}

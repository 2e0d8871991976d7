//! Floating-point abstraction shared by the deterministic layer.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Scalar type for paths, maps, densities and drift functionals.
///
/// Samplers and stochastic simulators work in `f64` and cast on output.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn to_f(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Relative tolerance used for structural checks (sums of weights, ranges).
    fn structural_tol() -> Self;
}

impl Real for f64 {
    fn structural_tol() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn structural_tol() -> Self {
        1e-5
    }
}

/// Kahan–Babuška compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> KahanSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), comp: T::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

impl<T: Real> FromIterator<T> for KahanSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut k = Self::new();
        for x in iter {
            k.add(x);
        }
        k
    }
}

/// Compensated sum of an iterator.
pub fn ksum<T: Real, I: IntoIterator<Item = T>>(iter: I) -> T {
    iter.into_iter().collect::<KahanSum<T>>().value()
}

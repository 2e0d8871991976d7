//! Cylinder functions `u(g) = U(c₁(g), …, c_m(g))` in three flavours:
//!
//! * point evaluations `c_i = g(x_i)`;
//! * weighted integrals `c_i = ∫ f_i(t) g(t) dt`;
//! * composed integrals `c_i = ∫ α_i(g(s)) ds = ⟨α_i, g_*Leb⟩`.
//!
//! Every coordinate integral is evaluated exactly on the skeleton.

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::path::{MonotonePath, Skeleton};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One-dimensional test functions with closed-form derivatives and primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "lowercase")]
pub enum TestFn {
    /// `xⁿ`
    Monomial(u32),
    /// `cos(kπx)`
    CosPi(f64),
    /// `sin(kπx)`
    SinPi(f64),
}

impl TestFn {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            TestFn::Monomial(n) => x.powi(n as i32),
            TestFn::CosPi(k) => (k * PI * x).cos(),
            TestFn::SinPi(k) => (k * PI * x).sin(),
        }
    }
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            TestFn::Monomial(0) => 0.0,
            TestFn::Monomial(n) => n as f64 * x.powi(n as i32 - 1),
            TestFn::CosPi(k) => -k * PI * (k * PI * x).sin(),
            TestFn::SinPi(k) => k * PI * (k * PI * x).cos(),
        }
    }
    pub fn deriv2(&self, x: f64) -> f64 {
        match *self {
            TestFn::Monomial(n) if n < 2 => 0.0,
            TestFn::Monomial(n) => (n * (n - 1)) as f64 * x.powi(n as i32 - 2),
            TestFn::CosPi(k) => -(k * PI).powi(2) * (k * PI * x).cos(),
            TestFn::SinPi(k) => -(k * PI).powi(2) * (k * PI * x).sin(),
        }
    }
    /// `(α′(r) − α′(l))/(r − l)` without cancellation; `α″(l)` when `r = l`.
    pub fn deriv_secant(&self, l: f64, r: f64) -> f64 {
        let h = r - l;
        // sin(kπh/2)/h, stable as h → 0
        let half_sinc = |k: f64| {
            let u = 0.5 * k * PI * h;
            if u.abs() < 1e-4 {
                0.5 * k * PI * (1.0 - u * u / 6.0)
            } else {
                u.sin() / h
            }
        };
        let m = 0.5 * (l + r);
        match *self {
            TestFn::Monomial(n) if n < 2 => 0.0,
            TestFn::Monomial(n) => n as f64 * (0..=n - 2).map(|i| r.powi(i as i32) * l.powi((n - 2 - i) as i32)).sum::<f64>(),
            TestFn::CosPi(k) => -2.0 * k * PI * (k * PI * m).cos() * half_sinc(k),
            TestFn::SinPi(k) => -2.0 * k * PI * (k * PI * m).sin() * half_sinc(k),
        }
    }
    /// An antiderivative.
    pub fn primitive(&self, x: f64) -> f64 {
        match *self {
            TestFn::Monomial(n) => x.powi(n as i32 + 1) / (n + 1) as f64,
            TestFn::CosPi(k) => (k * PI * x).sin() / (k * PI),
            TestFn::SinPi(k) => -(k * PI * x).cos() / (k * PI),
        }
    }
}

/// The outer function `U : ℝ^m → ℝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OuterFn {
    /// `Σ w_i y_i`
    Linear { w: Vec<f64> },
    /// `Π y_i`
    Product,
    /// `exp(c·y₁)`
    Exp { c: f64 },
    /// `cos(ω y₁)`
    Cos { omega: f64 },
    /// `sin(ω y₁)`
    Sin { omega: f64 },
}

impl OuterFn {
    pub fn identity() -> Self {
        OuterFn::Linear { w: vec![1.0] }
    }

    fn arity_ok(&self, m: usize) -> bool {
        match self {
            OuterFn::Linear { w } => w.len() == m,
            OuterFn::Product => m >= 1,
            _ => m == 1,
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            OuterFn::Linear { w } => w.iter().zip(y).map(|(a, b)| a * b).sum(),
            OuterFn::Product => y.iter().product(),
            OuterFn::Exp { c } => (c * y[0]).exp(),
            OuterFn::Cos { omega } => (omega * y[0]).cos(),
            OuterFn::Sin { omega } => (omega * y[0]).sin(),
        }
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        match self {
            OuterFn::Linear { w } => w.clone(),
            OuterFn::Product => (0..y.len()).map(|i| y.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).product()).collect(),
            OuterFn::Exp { c } => vec![c * (c * y[0]).exp()],
            OuterFn::Cos { omega } => vec![-omega * (omega * y[0]).sin()],
            OuterFn::Sin { omega } => vec![omega * (omega * y[0]).cos()],
        }
    }

    /// Row-major `m × m` Hessian.
    pub fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let m = y.len();
        match self {
            OuterFn::Linear { .. } => vec![0.0; m * m],
            OuterFn::Product => {
                let mut h = vec![0.0; m * m];
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            h[i * m + j] = y.iter().enumerate().filter(|&(k, _)| k != i && k != j).map(|(_, v)| v).product();
                        }
                    }
                }
                h
            }
            OuterFn::Exp { c } => vec![c * c * (c * y[0]).exp()],
            OuterFn::Cos { omega } => vec![-omega * omega * (omega * y[0]).cos()],
            OuterFn::Sin { omega } => vec![-omega * omega * (omega * y[0]).sin()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", content = "of", rename_all = "lowercase")]
pub enum Coordinates {
    /// `g(x_i)`
    Points(Vec<f64>),
    /// `∫ f_i(t) g(t) dt`
    Weighted(Vec<TestFn>),
    /// `∫ α_i(g(s)) ds`
    Composed(Vec<TestFn>),
}

impl Coordinates {
    fn len(&self) -> usize {
        match self {
            Coordinates::Points(v) => v.len(),
            Coordinates::Weighted(v) | Coordinates::Composed(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFunction {
    pub coords: Coordinates,
    pub outer: OuterFn,
}

/// `Σ_pieces F(piece)·w(value)` where `F` is the `f`-mass of the piece.
fn weighted_sum(sk: &Skeleton<f64>, f: &TestFn, w: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for ((&s, &l), &v) in sk.starts.iter().zip(&sk.lens).zip(&sk.vals) {
        acc += (f.primitive(s + l) - f.primitive(s)) * w(v);
    }
    acc
}

impl CylinderFunction {
    pub fn new(coords: Coordinates, outer: OuterFn) -> Result<Self> {
        let m = coords.len();
        if m == 0 {
            return Err(Error::Domain("cylinder function needs at least one coordinate".into()));
        }
        if !outer.arity_ok(m) {
            return Err(Error::SizeMismatch(m, match &outer {
                OuterFn::Linear { w } => w.len(),
                _ => 1,
            }));
        }
        if let Coordinates::Points(xs) = &coords {
            if xs.iter().any(|&x| !(0.0..1.0).contains(&x)) {
                return Err(Error::Domain("evaluation points must lie in [0,1)".into()));
            }
        }
        Ok(Self { coords, outer })
    }

    /// `g(x)`.
    pub fn point(x: f64) -> Self {
        Self::new(Coordinates::Points(vec![x]), OuterFn::identity()).expect("single point")
    }

    /// `∫ α(g(s)) ds`.
    pub fn moment(alpha: TestFn) -> Self {
        Self::new(Coordinates::Composed(vec![alpha]), OuterFn::identity()).expect("single moment")
    }

    /// `1`, as an empty product over one constant coordinate.
    pub fn constant_one() -> Self {
        Self::new(Coordinates::Composed(vec![TestFn::Monomial(0)]), OuterFn::identity()).expect("constant")
    }

    pub fn coordinates(&self, sk: &Skeleton<f64>) -> Vec<f64> {
        match &self.coords {
            Coordinates::Points(xs) => xs.iter().map(|&x| sk.eval(x)).collect(),
            Coordinates::Weighted(fs) => fs.iter().map(|f| weighted_sum(sk, f, |v| v)).collect(),
            Coordinates::Composed(al) => al.iter().map(|a| sk.integrate(|v| a.value(v))).collect(),
        }
    }

    pub fn eval<P: MonotonePath<f64> + ?Sized>(&self, g: &P) -> f64 {
        self.eval_skeleton(&g.skeleton())
    }

    pub fn eval_skeleton(&self, sk: &Skeleton<f64>) -> f64 {
        self.outer.value(&self.coordinates(sk))
    }

    /// `d/dt c_i(e_{tφ}∘g)` at `t = 0`.
    pub fn coordinate_derivatives(&self, sk: &Skeleton<f64>, phi: &dyn VectorField) -> Vec<f64> {
        match &self.coords {
            Coordinates::Points(xs) => xs.iter().map(|&x| phi.value(sk.eval(x))).collect(),
            Coordinates::Weighted(fs) => fs.iter().map(|f| weighted_sum(sk, f, |v| phi.value(v))).collect(),
            Coordinates::Composed(al) => al.iter().map(|a| sk.integrate(|v| a.deriv(v) * phi.value(v))).collect(),
        }
    }

    /// `D_ψ D_φ c_i`.
    pub fn coordinate_second_derivatives(&self, sk: &Skeleton<f64>, phi: &dyn VectorField, psi: &dyn VectorField) -> Vec<f64> {
        match &self.coords {
            Coordinates::Points(xs) => xs
                .iter()
                .map(|&x| {
                    let v = sk.eval(x);
                    phi.deriv(v) * psi.value(v)
                })
                .collect(),
            Coordinates::Weighted(fs) => fs.iter().map(|f| weighted_sum(sk, f, |v| phi.deriv(v) * psi.value(v))).collect(),
            Coordinates::Composed(al) => al
                .iter()
                .map(|a| sk.integrate(|v| (a.deriv2(v) * phi.value(v) + a.deriv(v) * phi.deriv(v)) * psi.value(v)))
                .collect(),
        }
    }

    /// `D_φ u(g) = Σ ∂_iU · D_φ c_i`.
    pub fn directional_derivative<P: MonotonePath<f64> + ?Sized>(&self, g: &P, phi: &dyn VectorField) -> f64 {
        let sk = g.skeleton();
        self.directional_derivative_skeleton(&sk, phi)
    }

    pub fn directional_derivative_skeleton(&self, sk: &Skeleton<f64>, phi: &dyn VectorField) -> f64 {
        let grad = self.outer.gradient(&self.coordinates(sk));
        grad.iter().zip(self.coordinate_derivatives(sk, phi)).map(|(a, b)| a * b).sum()
    }

    /// `D_ψ D_φ u(g)`.
    pub fn second_derivative_skeleton(&self, sk: &Skeleton<f64>, phi: &dyn VectorField, psi: &dyn VectorField) -> f64 {
        let y = self.coordinates(sk);
        let m = y.len();
        let (grad, hess) = (self.outer.gradient(&y), self.outer.hessian(&y));
        let (dp, dq) = (self.coordinate_derivatives(sk, phi), self.coordinate_derivatives(sk, psi));
        let d2 = self.coordinate_second_derivatives(sk, phi, psi);
        let mut s = 0.0;
        for i in 0..m {
            s += grad[i] * d2[i];
            for j in 0..m {
                s += hess[i * m + j] * dp[i] * dq[j];
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::ScalarFn;
    use crate::field::{flow, Combination, FieldRef, Polynomial, Trig, Zero};
    use crate::path::JumpFunction;
    use std::sync::Arc;

    fn g() -> JumpFunction<f64> {
        JumpFunction::new(0.0, vec![(0.15, 0.2), (0.4, 0.35), (0.72, 0.3), (0.9, 0.15)]).unwrap()
    }

    #[test]
    fn secants_match_difference_quotients() {
        for a in [TestFn::Monomial(0), TestFn::Monomial(1), TestFn::Monomial(4), TestFn::CosPi(1.0), TestFn::CosPi(3.0), TestFn::SinPi(2.0)] {
            for (l, r) in [(0.1, 0.7), (0.0, 1.0), (0.3, 0.3 + 1e-3)] {
                let q = (a.deriv(r) - a.deriv(l)) / (r - l);
                assert!((a.deriv_secant(l, r) - q).abs() < 1e-10 * (1.0 + q.abs()), "{a:?} {l} {r}");
            }
            assert!((a.deriv_secant(0.4, 0.4) - a.deriv2(0.4)).abs() < 1e-12);
            let s = a.deriv_secant(0.4, 0.4 + 1e-13);
            assert!((s - a.deriv2(0.4)).abs() < 1e-9 * (1.0 + s.abs()));
        }
    }

    fn flowed(g: &JumpFunction<f64>, phi: &dyn VectorField, t: f64) -> JumpFunction<f64> {
        let vals: Vec<f64> = std::iter::once(g.base()).chain(g.levels().iter().copied()).map(|v| flow(phi, t, v)).collect();
        let jumps = g.locations().iter().zip(vals.windows(2)).map(|(&a, w)| (a, w[1] - w[0])).collect();
        JumpFunction::new(vals[0], jumps).unwrap()
    }

    fn examples() -> Vec<CylinderFunction> {
        vec![
            CylinderFunction::point(0.5),
            CylinderFunction::new(Coordinates::Points(vec![0.3, 0.7]), OuterFn::Product).unwrap(),
            CylinderFunction::new(Coordinates::Weighted(vec![TestFn::Monomial(0), TestFn::CosPi(1.0)]), OuterFn::Linear { w: vec![1.0, -0.5] }).unwrap(),
            CylinderFunction::new(Coordinates::Composed(vec![TestFn::Monomial(2)]), OuterFn::Exp { c: -1.0 }).unwrap(),
            CylinderFunction::new(Coordinates::Composed(vec![TestFn::SinPi(2.0), TestFn::Monomial(1)]), OuterFn::Product).unwrap(),
        ]
    }

    #[test]
    fn evaluation_matches_definitions() {
        let g = g();
        assert_eq!(CylinderFunction::point(0.5).eval(&g), 0.55);
        // ∫ g = Σ value·length
        let int_g = 0.2 * 0.25 + 0.55 * 0.32 + 0.85 * 0.18 + 1.0 * 0.1;
        let c = CylinderFunction::new(Coordinates::Weighted(vec![TestFn::Monomial(0)]), OuterFn::identity()).unwrap();
        assert!((c.eval(&g) - int_g).abs() < 1e-15);
        let z = CylinderFunction::moment(TestFn::Monomial(1));
        assert!((z.eval(&g) - int_g).abs() < 1e-15);
        // ∫ t g(t) dt on the pieces
        let w = CylinderFunction::new(Coordinates::Weighted(vec![TestFn::Monomial(1)]), OuterFn::identity()).unwrap();
        let oracle = 0.2 * (0.4f64.powi(2) - 0.15f64.powi(2)) / 2.0
            + 0.55 * (0.72f64.powi(2) - 0.4f64.powi(2)) / 2.0
            + 0.85 * (0.81 - 0.72f64.powi(2)) / 2.0
            + (1.0 - 0.81) / 2.0;
        assert!((w.eval(&g) - oracle).abs() < 1e-15);
        assert!(CylinderFunction::new(Coordinates::Points(vec![]), OuterFn::Product).is_err());
        assert!(CylinderFunction::new(Coordinates::Points(vec![0.1, 0.2]), OuterFn::Exp { c: 1.0 }).is_err());
    }

    #[test]
    fn point_derivative_is_field_value() {
        let phi = Polynomial::cubic_bump();
        let g = g();
        let d = CylinderFunction::point(0.3).directional_derivative(&g, &phi);
        assert_eq!(d, phi.value(g.eval(0.3).unwrap()));
    }

    #[test]
    fn derivatives_match_flow_differences() {
        let g = g();
        let phi = Polynomial::cubic_bump();
        for u in examples() {
            let d = u.directional_derivative(&g, &phi);
            let mut errs = Vec::new();
            for t in [1e-3, 1e-4] {
                let fd = (u.eval(&flowed(&g, &phi, t)) - u.eval(&g)) / t;
                errs.push((fd - d).abs());
            }
            // O(t): the error shrinks tenfold
            assert!(errs[1] < 0.2 * errs[0] + 1e-9, "{u:?}: {errs:?}");
            assert!(errs[0] < 1e-2);
        }
    }

    #[test]
    fn second_derivatives_match_flow_differences() {
        let sk = g().skeleton();
        let phi = Polynomial::cubic_bump();
        let psi = Polynomial::quartic_bump();
        for u in examples() {
            let d2 = u.second_derivative_skeleton(&sk, &phi, &psi);
            // D_ψ(D_φ u) by a centred difference along ψ
            let t = 1e-4;
            let fwd = flowed(&g(), &psi, t);
            let bwd = flowed(&g(), &psi, -t);
            let fd = (u.directional_derivative(&fwd, &phi) - u.directional_derivative(&bwd, &phi)) / (2.0 * t);
            assert!((fd - d2).abs() < 1e-6, "{u:?}: {fd} vs {d2}");
        }
    }

    #[test]
    fn linearity_in_field() {
        let g = g();
        let (a, b) = (0.7, -1.3);
        let phi: FieldRef = Arc::new(Polynomial::cubic_bump());
        let psi: FieldRef = Arc::new(Trig::sin(0.2, PI));
        let comb = Combination(vec![(a, phi.clone()), (b, psi.clone())]);
        for u in examples() {
            let lhs = u.directional_derivative(&g, &comb);
            let rhs = a * u.directional_derivative(&g, &*phi) + b * u.directional_derivative(&g, &*psi);
            assert!((lhs - rhs).abs() < 1e-14);
            assert_eq!(u.directional_derivative(&g, &Zero), 0.0);
        }
    }
}

//! The drift functional `V^β_φ` and Monte Carlo checks of the
//! integration-by-parts formula
//! `E[D_φu · v] = −E[u · D_φv] − E[u · v · V^β_φ]`.

use crate::cov::{draw, y_total_with_lip, Draw};
use crate::cylinder::CylinderFunction;
use crate::dirichlet::{default_truncation, BetaParam};
use crate::error::{Error, Result};
use crate::field::{check_field_for_circle, check_field_for_interval, FieldRef, FlowMap, VectorField};
use crate::path::{Domain, MonotonePath, Skeleton};
use crate::quad;
use crate::rng::replicate;
use crate::scalar::KahanSum;
use crate::stats::McComparison;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftValue {
    /// Jump part, boundary gaps (or the circle wrap) included.
    pub v0: f64,
    /// `∫ φ′(g(x)) dx`; enters multiplied by `β`.
    pub entropy_term: f64,
    /// `(φ′(0) + φ′(1))/2` on the interval, `0` on the circle.
    pub boundary_correction: f64,
    pub total: f64,
}

fn bracket(phi: &(impl VectorField + ?Sized), v: f64, d: f64) -> f64 {
    0.5 * (phi.deriv(v) + phi.deriv(v + d)) - phi.increment(v, d) / d
}

/// `V⁰_φ`: trapezoid of `φ′` minus secant of `φ` over every jump. Zero-height
/// rises (ties) contribute nothing.
pub fn drift_v0(phi: &(impl VectorField + ?Sized), sk: &Skeleton<f64>) -> f64 {
    let mut acc = KahanSum::new();
    for (v, d) in sk.interior_jumps().chain(sk.boundary_jumps()) {
        if d > 0.0 {
            acc.add(bracket(phi, v, d));
        }
    }
    acc.value()
}

/// `V^β_φ` on a skeleton, without checking the field against the domain.
pub fn drift_skeleton(phi: &(impl VectorField + ?Sized), sk: &Skeleton<f64>, beta: f64) -> DriftValue {
    let v0 = drift_v0(phi, sk);
    let entropy_term = sk.integrate(|x| phi.deriv(x));
    let boundary_correction = match sk.domain {
        Domain::Interval => 0.5 * (phi.deriv(0.0) + phi.deriv(1.0)),
        Domain::Circle => 0.0,
    };
    DriftValue { v0, entropy_term, boundary_correction, total: v0 + beta * entropy_term - boundary_correction }
}

pub fn check_field(phi: &dyn VectorField, domain: Domain) -> Result<()> {
    match domain {
        Domain::Interval => check_field_for_interval(phi),
        Domain::Circle => check_field_for_circle(phi),
    }
}

pub fn drift_v<P: MonotonePath<f64> + ?Sized>(phi: &dyn VectorField, g: &P, beta: BetaParam) -> Result<DriftValue> {
    let sk = g.skeleton();
    check_field(phi, sk.domain)?;
    Ok(drift_skeleton(phi, &sk, beta.get()))
}

/// `½ ∫₀¹ |φ″|`, a bound for `|V⁰_φ|` on every path.
pub fn v0_bound(phi: &dyn VectorField) -> f64 {
    // split at a uniform grid so kinks of |φ″| do not stall the quadrature
    let m = 64;
    (0..m)
        .map(|i| quad::integrate(|x| phi.deriv2(x).abs(), i as f64 / m as f64, (i + 1) as f64 / m as f64, 1e-14, 1e-12).0)
        .sum::<f64>()
        * 0.5
}

/// Central difference `(Y_{e_{tφ}} − Y_{e_{−tφ}})/(2t)`.
pub fn drift_central_difference<P: MonotonePath<f64> + ?Sized>(phi: &FieldRef, g: &P, beta: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("step {t} must be positive")));
    }
    let y = |s: f64| y_total_with_lip(&FlowMap::new(phi.clone(), s), g, beta, 0.0).map(|d| d.total);
    Ok((y(t)? - y(-t)?) / (2.0 * t))
}

/// Richardson extrapolation of [`drift_central_difference`] from steps `t`
/// and `t/2`; the error is `O(t⁴)`.
pub fn drift_richardson<P: MonotonePath<f64> + ?Sized>(phi: &FieldRef, g: &P, beta: f64, t: f64) -> Result<f64> {
    let coarse = drift_central_difference(phi, g, beta, t)?;
    let fine = drift_central_difference(phi, g, beta, 0.5 * t)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

pub type IbpReport = McComparison;

pub const IBP_Z_MAX: f64 = 4.0;

/// Per-path `(D_φu·v, −u·D_φv − u·v·V)`.
pub fn ibp_terms(u: &CylinderFunction, v: &CylinderFunction, phi: &dyn VectorField, sk: &Skeleton<f64>, drift: f64) -> (f64, f64) {
    let (uu, vv) = (u.eval_skeleton(sk), v.eval_skeleton(sk));
    let du = u.directional_derivative_skeleton(sk, phi);
    let dv = v.directional_derivative_skeleton(sk, phi);
    (du * vv, -uu * dv - uu * vv * drift)
}

#[derive(Debug, Clone, Serialize)]
pub struct IbpCase {
    pub beta: f64,
    pub field: String,
    pub pair: String,
    pub report: IbpReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct IbpBattery {
    pub cases: Vec<IbpCase>,
    /// Paths on which `|V⁰_φ| > ½∫|φ″|` (must be zero).
    pub bound_violations: usize,
    /// Largest observed `|V⁰_φ| / (½∫|φ″|)`.
    pub max_bound_ratio: f64,
}

impl IbpBattery {
    pub fn pass(&self) -> bool {
        self.bound_violations == 0 && self.cases.iter().all(|c| c.report.pass)
    }
}

pub struct IbpPair {
    pub name: String,
    pub u: CylinderFunction,
    pub v: CylinderFunction,
}

/// Every (field, pair) combination on one shared set of `n` draws per `β`.
pub fn ibp_battery(
    betas: &[f64],
    fields: &[(String, FieldRef)],
    pairs: &[IbpPair],
    domain: Domain,
    n: usize,
    seed: u64,
) -> Result<IbpBattery> {
    for (_, phi) in fields {
        check_field(&**phi, domain)?;
    }
    let bounds: Vec<f64> = fields.iter().map(|(_, phi)| v0_bound(&**phi)).collect();
    let mut cases = Vec::new();
    let (mut violations, mut max_ratio) = (0, 0.0f64);
    for (bi, &b) in betas.iter().enumerate() {
        let beta = BetaParam::new(b)?;
        let k = default_truncation(beta, 1e-8);
        // rows[i][f] = (|V⁰|, per pair (lhs, rhs))
        let rows: Vec<Vec<(f64, Vec<(f64, f64)>)>> = replicate(seed, (bi as u64) << 32, n, |r, _| {
            let g: Draw = draw(beta, domain, k, r);
            let sk = g.skeleton();
            fields
                .iter()
                .map(|(_, phi)| {
                    let dv = drift_skeleton(&**phi, &sk, b);
                    (dv.v0.abs(), pairs.iter().map(|p| ibp_terms(&p.u, &p.v, &**phi, &sk, dv.total)).collect())
                })
                .collect()
        });
        for row in &rows {
            for (fi, (v0, _)) in row.iter().enumerate() {
                // tiny slack for rounding in the bracket sums
                if *v0 > bounds[fi] * (1.0 + 1e-12) + 1e-15 {
                    violations += 1;
                }
                if bounds[fi] > 0.0 {
                    max_ratio = max_ratio.max(v0 / bounds[fi]);
                }
            }
        }
        for (fi, (fname, _)) in fields.iter().enumerate() {
            for (pi, pair) in pairs.iter().enumerate() {
                let lhs: Vec<f64> = rows.iter().map(|r| r[fi].1[pi].0).collect();
                let rhs: Vec<f64> = rows.iter().map(|r| r[fi].1[pi].1).collect();
                cases.push(IbpCase { beta: b, field: fname.clone(), pair: pair.name.clone(), report: IbpReport::from_samples(&lhs, &rhs, IBP_Z_MAX) });
            }
        }
    }
    Ok(IbpBattery { cases, bound_violations: violations, max_bound_ratio: max_ratio })
}

/// Single `(u, v, φ, β)` test on the interval.
pub fn ibp_mc_test(u: &CylinderFunction, v: &CylinderFunction, phi: FieldRef, beta: BetaParam, n: usize, seed: u64) -> Result<IbpReport> {
    let pairs = [IbpPair { name: "uv".into(), u: u.clone(), v: v.clone() }];
    let b = ibp_battery(&[beta.get()], &[("phi".into(), phi)], &pairs, Domain::Interval, n, seed)?;
    Ok(b.cases.into_iter().next().expect("one case").report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cylinder::{Coordinates, OuterFn, TestFn};
    use crate::dirichlet::sample_path;
    use crate::field::{sine_bump, Combination, Polynomial, Trig, Zero};
    use crate::path::JumpFunction;
    use crate::rng::RngStream;
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn cubic() -> FieldRef {
        Arc::new(Polynomial::cubic_bump())
    }

    #[test]
    fn quadratic_field_has_no_jump_part() {
        let phi = Polynomial::quadratic_bump();
        for seed in 0..50 {
            let g = sample_path(BetaParam::new(1.3).unwrap(), 60, &mut RngStream::new(seed, 0).rng());
            let d = drift_v(&phi, &g, BetaParam::new(1.3).unwrap()).unwrap();
            assert!(d.v0.abs() < 1e-13, "{}", d.v0);
            let expect = 1.3 * g.skeleton().integrate(|x| 1.0 - 2.0 * x);
            assert!((d.total - expect).abs() < 1e-13);
            assert_eq!(d.boundary_correction, 0.0);
        }
    }

    #[test]
    fn hand_evaluated_single_jump() {
        // g = 0.2 on [0, 0.5), 0.8 after; φ = x²(1−x)
        let phi = Polynomial::cubic_bump();
        let g = JumpFunction::new(0.2, vec![(0.5, 0.6)]).unwrap();
        let dphi = |x: f64| 2.0 * x - 3.0 * x * x;
        let p = |x: f64| x * x * (1.0 - x);
        let br = |a: f64, b: f64| 0.5 * (dphi(a) + dphi(b)) - (p(b) - p(a)) / (b - a);
        let v0 = br(0.0, 0.2) + br(0.2, 0.8) + br(0.8, 1.0);
        let ent = 0.5 * dphi(0.2) + 0.5 * dphi(0.8);
        let corr = 0.5 * (dphi(0.0) + dphi(1.0));
        let d = drift_v(&phi, &g, BetaParam::new(2.0).unwrap()).unwrap();
        assert!((d.v0 - v0).abs() < 1e-15);
        assert!((d.total - (v0 + 2.0 * ent - corr)).abs() < 1e-15);
    }

    #[test]
    fn field_must_fit_domain() {
        let g = JumpFunction::new(0.2, vec![(0.5, 0.6)]).unwrap();
        let bad = Polynomial::new(vec![1.0, 1.0]);
        assert!(drift_v(&bad, &g, BetaParam::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn v0_bound_cubic_is_exact_value() {
        // φ″ = 2 − 6x ⇒ ∫|φ″| = 2·(1/3)·1 + ... = 5/3
        let b = v0_bound(&Polynomial::cubic_bump());
        assert!((b - 0.5 * 5.0 / 3.0).abs() < 1e-12, "{b}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linear_in_field_affine_in_beta(a in -3.0..3.0f64, b in -3.0..3.0f64, beta in 0.1..10.0f64, seed in 0u64..500) {
            let g = sample_path(BetaParam::new(beta).unwrap(), 50, &mut RngStream::new(seed, 2).rng());
            let sk = g.skeleton();
            let phi: FieldRef = cubic();
            let psi: FieldRef = Arc::new(sine_bump(2));
            let comb = Combination(vec![(a, phi.clone()), (b, psi.clone())]);
            let lhs = drift_skeleton(&comb, &sk, beta).total;
            let rhs = a * drift_skeleton(&*phi, &sk, beta).total + b * drift_skeleton(&*psi, &sk, beta).total;
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            let d1 = drift_skeleton(&*phi, &sk, beta);
            let d2 = drift_skeleton(&*phi, &sk, 2.0 * beta);
            prop_assert!((d2.total - d1.total - beta * d1.entropy_term).abs() < 1e-12);
        }

        #[test]
        fn v0_respects_bound(seed in 0u64..10_000, beta in 0.1..8.0f64, j in 1u32..4) {
            let g = sample_path(BetaParam::new(beta).unwrap(), 80, &mut RngStream::new(seed, 3).rng());
            let phi = sine_bump(j);
            let d = drift_v(&phi, &g, BetaParam::new(beta).unwrap()).unwrap();
            prop_assert!(d.v0.abs() <= v0_bound(&phi) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn derivative_of_density_is_drift() {
        let fields: Vec<FieldRef> = vec![cubic(), Arc::new(Polynomial::quartic_bump()), Arc::new(sine_bump(2))];
        for (fi, phi) in fields.iter().enumerate() {
            for (seed, beta) in [(0u64, 0.5), (1, 1.0), (2, 5.0)] {
                let bp = BetaParam::new(beta).unwrap();
                let g = sample_path(bp, default_truncation(bp, 1e-8), &mut RngStream::new(seed, fi as u64).rng());
                let v = drift_v(&**phi, &g, bp).unwrap().total;
                let fd = drift_richardson(phi, &g, beta, 1e-3).unwrap();
                assert!((fd - v).abs() <= 1e-3 * v.abs().max(1e-3), "field {fi} β {beta}: {fd} vs {v}");
            }
        }
    }

    #[test]
    fn zero_field_gives_exact_zero() {
        let r = ibp_mc_test(&CylinderFunction::point(0.3), &CylinderFunction::point(0.7), Arc::new(Zero), BetaParam::new(1.0).unwrap(), 500, 1).unwrap();
        assert_eq!((r.estimate_lhs, r.estimate_rhs, r.z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn point_pair_and_mean_zero_drift() {
        let bp = BetaParam::new(1.0).unwrap();
        let r = ibp_mc_test(&CylinderFunction::point(0.3), &CylinderFunction::point(0.7), cubic(), bp, 40_000, 11).unwrap();
        assert!(r.pass, "{r:?}");
        let one = CylinderFunction::constant_one();
        let r = ibp_mc_test(&one, &one, Arc::new(Polynomial::quartic_bump()), bp, 40_000, 12).unwrap();
        assert_eq!(r.estimate_lhs, 0.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn circle_variant() {
        let phi: FieldRef = Arc::new(Trig::sin(0.3, 2.0 * PI));
        let u = CylinderFunction::new(Coordinates::Points(vec![0.2]), OuterFn::Cos { omega: 2.0 * PI }).unwrap();
        let v = CylinderFunction::new(Coordinates::Composed(vec![TestFn::CosPi(2.0)]), OuterFn::Exp { c: 0.5 }).unwrap();
        let one = CylinderFunction::constant_one();
        let pairs = [IbpPair { name: "s-z".into(), u, v }, IbpPair { name: "1-1".into(), u: one.clone(), v: one }];
        let b = ibp_battery(&[1.0], &[("sin".into(), phi)], &pairs, Domain::Circle, 20_000, 4).unwrap();
        assert!(b.pass(), "{b:?}");
    }
}

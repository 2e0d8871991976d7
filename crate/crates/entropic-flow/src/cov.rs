//! Quasi-invariance densities of the Dirichlet process under smooth
//! reparametrizations `g ↦ h∘g`, their finite-grid approximants, and a Monte
//! Carlo check of `E[u(h⁻¹∘g)] = E[u(g)·Y_h(g)]`.
//!
//! All products are accumulated as sums of logarithms.

use crate::cylinder::CylinderFunction;
use crate::dirichlet::{default_truncation, sample_circle, sample_path, BetaParam};
use crate::error::{Error, Result};
use crate::maps::{log_derivative_sups, InverseMap, MapRef, SmoothMap};
use crate::path::{compose, compose_circle, Domain, MonotonePath, Skeleton};
use crate::rng::replicate;
use crate::scalar::{KahanSum, Real};
use crate::stats::McComparison;
use serde::Serialize;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovDensity<T> {
    pub x_factor: T,
    pub y0_factor: T,
    /// `1/√(h′(0)h′(1))` times the brackets of the boundary gaps on the
    /// interval; `1` on the circle.
    pub boundary_factor: T,
    pub total: T,
    pub log_total: T,
    /// `exp(sup|(log h′)′| · m_tail)`: multiplicative error bar for jumps
    /// dropped by truncation.
    pub tail_bound: T,
}

fn ln_deriv<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, x: T) -> Result<T> {
    let d = h.deriv(x);
    if d > T::zero() && d.is_finite() {
        Ok(d.ln())
    } else {
        Err(Error::InvalidMap(format!("h'({x}) = {d} is not positive")))
    }
}

/// `log[√(h′(v)h′(v+Δ)) · Δ/(h(v+Δ) − h(v))]`.
fn ln_jump_bracket<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, v: T, d: T) -> Result<T> {
    if !(d > T::zero()) {
        return Err(Error::Representation(format!("zero-length jump at value {v}")));
    }
    let dh = h.increment(v, d);
    if !(dh > T::zero()) {
        return Err(Error::InvalidMap(format!("h is not increasing on [{v}, {v} + {d}]")));
    }
    let half = T::c(0.5);
    Ok(half * (ln_deriv(h, v)? + ln_deriv(h, v + d)?) - (dh / d).ln())
}

fn check_domain<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, domain: Domain) -> Result<()> {
    match domain {
        Domain::Interval if !h.fixes_endpoints() => Err(Error::InvalidMap("interval maps must fix 0 and 1".into())),
        Domain::Circle if !h.circle_periodic() => Err(Error::InvalidMap("circle maps must be degree-one lifts".into())),
        _ => Ok(()),
    }
}

/// `log X_h^β(g) = β ∫ log h′(g(s)) ds`, exact on the skeleton.
pub fn ln_x_factor<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, sk: &Skeleton<T>, beta: T) -> Result<T> {
    let mut acc = KahanSum::new();
    for (&l, &v) in sk.lens.iter().zip(&sk.vals) {
        acc.add(l * ln_deriv(h, v)?);
    }
    Ok(beta * acc.value())
}

pub fn x_factor<T: Real, M: SmoothMap<T> + ?Sized, P: MonotonePath<T> + ?Sized>(h: &M, g: &P, beta: f64) -> Result<T> {
    Ok(ln_x_factor(h, &g.skeleton(), T::c(beta))?.exp())
}

/// `log Y⁰_h(g)` over the interior jumps, plus the wrap-around jump on the
/// circle.
pub fn ln_y0_factor<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, sk: &Skeleton<T>) -> Result<T> {
    let mut acc = KahanSum::new();
    for (v, d) in sk.interior_jumps() {
        acc.add(ln_jump_bracket(h, v, d)?);
    }
    if sk.domain == Domain::Circle {
        for (v, d) in sk.boundary_jumps() {
            acc.add(ln_jump_bracket(h, v, d)?);
        }
    }
    Ok(acc.value())
}

pub fn y0_factor<T: Real, M: SmoothMap<T> + ?Sized, P: MonotonePath<T> + ?Sized>(h: &M, g: &P) -> Result<T> {
    Ok(ln_y0_factor(h, &g.skeleton())?.exp())
}

fn ln_boundary_factor<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, sk: &Skeleton<T>) -> Result<T> {
    if sk.domain == Domain::Circle {
        return Ok(T::zero());
    }
    let half = T::c(0.5);
    let mut acc = -half * (ln_deriv(h, T::zero())? + ln_deriv(h, T::one())?);
    for (v, d) in sk.boundary_jumps() {
        acc += ln_jump_bracket(h, v, d)?;
    }
    Ok(acc)
}

/// `Y_h^β(g) = X·Y⁰·boundary`, with the domain taken from the path.
pub fn y_total<T: Real, M: SmoothMap<T> + ?Sized, P: MonotonePath<T> + ?Sized>(h: &M, g: &P, beta: f64) -> Result<CovDensity<T>> {
    let lip = if g.tail_mass() > T::zero() { log_derivative_sups(h).1 } else { T::zero() };
    y_total_with_lip(h, g, beta, lip)
}

/// [`y_total`] with `sup|(log h′)′|` supplied, for repeated evaluation.
pub fn y_total_with_lip<T: Real, M: SmoothMap<T> + ?Sized, P: MonotonePath<T> + ?Sized>(
    h: &M,
    g: &P,
    beta: f64,
    lip: T,
) -> Result<CovDensity<T>> {
    let sk = g.skeleton();
    check_domain(h, sk.domain)?;
    let lx = ln_x_factor(h, &sk, T::c(beta))?;
    let ly = ln_y0_factor(h, &sk)?;
    let lb = ln_boundary_factor(h, &sk)?;
    let log_total = lx + ly + lb;
    Ok(CovDensity {
        x_factor: lx.exp(),
        y0_factor: ly.exp(),
        boundary_factor: lb.exp(),
        total: log_total.exp(),
        log_total,
        tail_bound: (lip * g.tail_mass()).exp(),
    })
}

/// `C = exp((β+1)·sup|log h′| + sup|(log h′)′|)`, bounding `Y` and its
/// approximants from both sides.
pub fn finiteness_constant<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, beta: f64) -> T {
    let (a, b) = log_derivative_sups(h);
    ((T::c(beta) + T::one()) * a + b).exp()
}

/// Finite products on the grid `t_i = i/k`: returns `(X_k, Y⁰_k)`.
///
/// On the interval `g(t_k) = 1` and the first bracket carries no `h′`; the
/// limit of `Y⁰_k` is then `Y⁰·boundary` of [`y_total`]. On the circle
/// `g(t_k) = g(0) + 1`. A flat step contributes `h′(g(t_i))` to `X_k` and
/// nothing to `Y⁰_k` (its `0/0` bracket is read as `h′/h′`); on the interval
/// a flat first step contributes `1/h′(g(0))`.
pub fn approximant_k<T: Real, M: SmoothMap<T> + ?Sized, P: MonotonePath<T> + ?Sized>(h: &M, g: &P, beta: f64, k: usize) -> Result<(T, T)> {
    if k < 2 {
        return Err(Error::Domain(format!("approximant needs k >= 2, got {k}")));
    }
    let sk = g.skeleton();
    let kk = T::c(k as f64);
    let mut vals: Vec<T> = (0..k).map(|i| sk.eval(T::c(i as f64) / kk)).collect();
    vals.push(match sk.domain {
        Domain::Interval => T::one(),
        Domain::Circle => vals[0] + T::one(),
    });
    let mut lx = KahanSum::new();
    let mut ly = KahanSum::new();
    for i in 0..k {
        let (v, d) = (vals[i], vals[i + 1] - vals[i]);
        let lhp = ln_deriv(h, v)?;
        let ln_slope = if d > T::zero() {
            let dh = h.increment(v, d);
            if !(dh > T::zero()) {
                return Err(Error::InvalidMap(format!("h is not increasing on [{v}, {v} + {d}]")));
            }
            (dh / d).ln()
        } else {
            lhp
        };
        lx.add(ln_slope);
        let first_interval = i == 0 && sk.domain == Domain::Interval;
        ly.add(if first_interval { -ln_slope } else { lhp - ln_slope });
    }
    Ok(((T::c(beta) / kk * lx.value()).exp(), ly.value().exp()))
}

pub type CovReport = McComparison;

pub const COV_Z_MAX: f64 = 4.0;

/// Draws shared by every (map, test function) pair at one `β`.
pub(crate) fn draw(beta: BetaParam, domain: Domain, k: usize, r: &mut rand_chacha::ChaCha8Rng) -> Draw {
    match domain {
        Domain::Interval => Draw::Interval(sample_path(beta, k, r)),
        Domain::Circle => Draw::Circle(sample_circle(beta, k, r)),
    }
}

pub(crate) enum Draw {
    Interval(crate::path::JumpFunction<f64>),
    Circle(crate::path::CirclePath<f64>),
}

impl Draw {
    pub(crate) fn skeleton(&self) -> Skeleton<f64> {
        match self {
            Draw::Interval(g) => g.skeleton(),
            Draw::Circle(g) => g.skeleton(),
        }
    }
    fn pulled_back(&self, hinv: &InverseMap<f64>) -> Result<Skeleton<f64>> {
        Ok(match self {
            Draw::Interval(g) => compose(hinv, g)?.skeleton(),
            Draw::Circle(g) => compose_circle(hinv, g)?.skeleton(),
        })
    }
    fn density(&self, h: &MapRef<f64>, beta: f64, lip: f64) -> Result<f64> {
        Ok(match self {
            Draw::Interval(g) => y_total_with_lip(&**h, g, beta, lip)?.total,
            Draw::Circle(g) => y_total_with_lip(&**h, g, beta, lip)?.total,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovCase {
    pub beta: f64,
    pub map: String,
    pub test_fn: String,
    pub report: CovReport,
}

/// Run every `(map, u)` pair on one shared set of `n` draws per `β`.
/// Replicate `i` of `β`-index `b` uses stream `(seed, b·2³² + i)`.
pub fn cov_battery(
    betas: &[f64],
    maps: &[(String, MapRef<f64>)],
    tests: &[(String, CylinderFunction)],
    domain: Domain,
    n: usize,
    seed: u64,
) -> Result<Vec<CovCase>> {
    for (_, h) in maps {
        check_domain(&**h, domain)?;
    }
    let inverses: Vec<InverseMap<f64>> = maps.iter().map(|(_, h)| InverseMap::new(h.clone())).collect();
    let lips: Vec<f64> = maps.iter().map(|(_, h)| log_derivative_sups(&**h).1).collect();
    let mut out = Vec::new();
    for (bi, &b) in betas.iter().enumerate() {
        let beta = BetaParam::new(b)?;
        let k = default_truncation(beta, 1e-8);
        // rows[i] = for each map: (Y, lhs per u, rhs-u per u)
        let rows: Vec<Result<Vec<(f64, Vec<f64>, Vec<f64>)>>> = replicate(seed, (bi as u64) << 32, n, |r, _| {
            let g = draw(beta, domain, k, r);
            let sk = g.skeleton();
            let plain: Vec<f64> = tests.iter().map(|(_, u)| u.eval_skeleton(&sk)).collect();
            maps.iter()
                .zip(inverses.iter().zip(&lips))
                .map(|((_, h), (hinv, &lip))| {
                    let y = g.density(h, b, lip)?;
                    let back = g.pulled_back(hinv)?;
                    let lhs = tests.iter().map(|(_, u)| u.eval_skeleton(&back)).collect();
                    Ok((y, lhs, plain.iter().map(|p| p * y).collect()))
                })
                .collect()
        });
        let rows: Vec<Vec<(f64, Vec<f64>, Vec<f64>)>> = rows.into_iter().collect::<Result<_>>()?;
        for (mi, (mname, _)) in maps.iter().enumerate() {
            for (ui, (uname, _)) in tests.iter().enumerate() {
                let lhs: Vec<f64> = rows.iter().map(|r| r[mi].1[ui]).collect();
                let rhs: Vec<f64> = rows.iter().map(|r| r[mi].2[ui]).collect();
                out.push(CovCase { beta: b, map: mname.clone(), test_fn: uname.clone(), report: CovReport::from_samples(&lhs, &rhs, COV_Z_MAX) });
            }
        }
    }
    Ok(out)
}

/// Single `(β, h, u)` quasi-invariance test.
pub fn cov_mc_test(u: &CylinderFunction, h: MapRef<f64>, beta: BetaParam, domain: Domain, n: usize, seed: u64) -> Result<CovReport> {
    let cases = cov_battery(&[beta.get()], &[("h".into(), h)], &[("u".into(), u.clone())], domain, n, seed)?;
    Ok(cases.into_iter().next().expect("one case").report)
}

/// `h ↦ Arc` convenience for the test families.
pub fn map_ref<M: SmoothMap<f64> + 'static>(h: M) -> MapRef<f64> {
    Arc::new(h)
}

//! Samplers for the Dirichlet process on `[0,1]` and on the circle, and the
//! closed forms used to check them.
//!
//! Finite-dimensional marginals come from normalized Gamma increments and are
//! exact in law. Whole paths use stick-breaking, truncated once the leftover
//! stick is expected to be below a tolerance; a Poisson (gamma-subordinator)
//! construction is kept as an independent cross-check.

use crate::error::{Error, Result};
use crate::path::{circle_shift, distance_to_identity, CirclePath, JumpFunction};
use crate::quad;
use crate::rng::{open01, replicate};
use crate::stats::{ln_gamma, z_score, Summary};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::Serialize;

/// Inverse temperature `β > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct BetaParam(f64);

impl BetaParam {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self(beta))
        } else {
            Err(Error::Domain(format!("beta = {beta} must be positive and finite")))
        }
    }
    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `log G` for `G ~ Gamma(shape, 1)`. Small shapes use `G(a+1)·U^{1/a}`,
/// carried in log space so that `U^{1/a}` cannot underflow.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + open01(rng).ln() / shape
    }
}

/// Joint draw of `(g(t_1), …, g(t_N))` under the Dirichlet process started at 0.
///
/// Values within one rounding unit of 0 or 1 saturate there; this only
/// happens for very small `β·Δt`.
pub fn sample_marginals<R: Rng + ?Sized>(beta: BetaParam, times: &[f64], rng: &mut R) -> Result<MarginalSample> {
    let b = beta.get();
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev && t < 1.0) {
            return Err(Error::Domain(format!("times must satisfy 0 < t_1 < … < t_N < 1, got {t} after {prev}")));
        }
        prev = t;
    }
    let mut logs = Vec::with_capacity(times.len() + 1);
    let mut s = 0.0;
    for &t in times.iter().chain(std::iter::once(&1.0)) {
        logs.push(ln_gamma_variate(b * (t - s), rng));
        s = t;
    }
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    let values = w[..times.len()]
        .iter()
        .map(|x| {
            acc += x / total;
            acc.min(1.0)
        })
        .collect();
    Ok(MarginalSample { times: times.to_vec(), values })
}

/// Smallest `K` with `(β/(1+β))^K ≤ tol`.
pub fn default_truncation(beta: BetaParam, tol: f64) -> usize {
    let r = beta.get() / (1.0 + beta.get());
    ((tol.ln() / r.ln()).ceil() as usize).max(1)
}

/// Stick-breaking path with `K` sticks, the last forced to take the rest.
/// The forced remainder is recorded as the path's tail mass.
pub fn sample_path<R: Rng + ?Sized>(beta: BetaParam, k: usize, rng: &mut R) -> JumpFunction<f64> {
    let k = k.max(1);
    let inv_b = 1.0 / beta.get();
    let mut ln_rest = 0.0f64;
    let mut atoms = Vec::with_capacity(k);
    let mut tail = 1.0;
    for j in 0..k {
        let rest = ln_rest.exp();
        let p = if j + 1 == k {
            tail = rest;
            rest
        } else {
            // 1 − v = U^{1/β} with v ~ Beta(1, β)
            let ln_keep = open01(rng).ln() * inv_b;
            ln_rest += ln_keep;
            -rest * ln_keep.exp_m1()
        };
        atoms.push((rng.random::<f64>(), p));
    }
    JumpFunction::from_atoms(0.0, atoms)
        .expect("stick-breaking weights form a valid path")
        .with_tail_mass(tail)
}

/// Gamma-subordinator construction `γ_{βt}/γ_β` keeping jumps above `delta`.
/// Returns the path and the bound `β·δ` on the expected discarded mass of
/// the unnormalized subordinator.
pub fn sample_path_poisson<R: Rng + ?Sized>(beta: BetaParam, delta: f64, rng: &mut R) -> (JumpFunction<f64>, f64) {
    let b = beta.get();
    assert!(delta > 0.0 && delta < 1.0, "cutoff must lie in (0,1)");
    loop {
        let mut atoms = Vec::new();
        // On [δ,1] propose from β/x and thin by e^{−x}; on (1,∞) propose
        // from β e^{−x} and thin by 1/x. Both thinnings are exact.
        let n_small = Poisson::new(b * (1.0 / delta).ln()).expect("positive rate").sample(rng) as usize;
        for _ in 0..n_small {
            let x = delta.powf(1.0 - rng.random::<f64>());
            if rng.random::<f64>() < (-x).exp() {
                atoms.push((rng.random::<f64>(), x));
            }
        }
        let n_big = Poisson::new(b * (-1.0f64).exp()).expect("positive rate").sample(rng) as usize;
        for _ in 0..n_big {
            let x = 1.0 - open01(rng).ln();
            if rng.random::<f64>() < 1.0 / x {
                atoms.push((rng.random::<f64>(), x));
            }
        }
        if atoms.is_empty() {
            continue;
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        for a in &mut atoms {
            a.1 /= total;
        }
        let g = JumpFunction::from_atoms(0.0, atoms).expect("normalized subordinator jumps");
        return (g, b * delta);
    }
}

/// Stick-breaking path rotated by an independent uniform shift.
pub fn sample_circle<R: Rng + ?Sized>(beta: BetaParam, k: usize, rng: &mut R) -> CirclePath<f64> {
    let g = sample_path(beta, k, rng);
    let x = rng.random::<f64>();
    circle_shift(&g, x).expect("shift in [0,1)")
}

/// `r ↦ (g((1−r)s + rt) − g(s)) / (g(t) − g(s))`.
pub fn rescale_restrict(g: &JumpFunction<f64>, s: f64, t: f64) -> Result<JumpFunction<f64>> {
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(Error::Domain(format!("need 0 ≤ s < t ≤ 1, got s = {s}, t = {t}")));
    }
    let (gs, gt) = (g.eval(s)?, g.eval(t)?);
    let den = gt - gs;
    if !(den > 0.0) {
        return Err(Error::DegenerateWindow(t - s));
    }
    let jumps = g
        .jumps()
        .filter(|&(a, _)| a > s && a < t)
        .map(|(a, h)| ((a - s) / (t - s), h / den))
        .filter(|&(r, _)| r > 0.0 && r < 1.0)
        .collect();
    Ok(JumpFunction::from_atoms(0.0, jumps)?)
}

/// Density of `E[μ]` for `μ = g_*Leb` under the Dirichlet process started at
/// 0: the Beta(βt, β(1−t)) density at `x` averaged over `t ∈ [0,1]`.
pub fn mean_density(beta: BetaParam, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("mean density has poles at 0 and 1; x = {x}")));
    }
    Ok(weighted_density(beta.get(), x.ln(), (-x).ln_1p(), 0.0))
}

/// `x^p ρ_β(x)` from `ln x` and `ln(1−x)`, usable where `x` itself
/// underflows. The `t`-integrand peaks near `t ≈ 1/(β|ln x|)`, so `[0,1]` is
/// cut dyadically towards both ends before adaptive quadrature.
pub(crate) fn weighted_density(b: f64, lx: f64, l1x: f64, p: f64) -> f64 {
    let lgb = ln_gamma(b);
    let f = |t: f64| {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let (a1, a2) = (b * t, b * (1.0 - t));
        let e = lgb - ln_gamma(a1) - ln_gamma(a2) + (a1 - 1.0 + p) * lx + (a2 - 1.0) * l1x;
        if e.is_nan() {
            0.0
        } else {
            e.exp()
        }
    };
    let mut cuts = vec![0.0];
    cuts.extend((1..60).rev().map(|k| 0.5f64.powi(k)));
    cuts.extend((2..60).map(|k| 1.0 - 0.5f64.powi(k)));
    cuts.push(1.0);
    cuts.windows(2).map(|w| quad::integrate(f, w[0], w[1], 0.0, 1e-9).0).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub beta: f64,
    pub regime: &'static str,
    pub statistic: &'static str,
    pub estimate: f64,
    pub expected: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

/// Check the `β → 0` and `β → ∞` limits on `n` replicates per `β`.
///
/// `β < small` checks that `g(t)` sits at 1 with probability `t`;
/// `β > large` checks `E‖g − id‖²₂ = 1/(6(1+β))`; anything in between is a
/// reference point where only the mean `E g(t) = t` is checked.
pub fn limit_checks(betas: &[f64], t: f64, n: usize, seed: u64, z_max: f64) -> Result<Vec<LimitRow>> {
    const SMALL: f64 = 0.1;
    const LARGE: f64 = 100.0;
    let mut out = Vec::with_capacity(betas.len());
    for (bi, &b) in betas.iter().enumerate() {
        let beta = BetaParam::new(b)?;
        let offset = (bi as u64) << 32;
        let row = if b < SMALL {
            let hits = replicate(seed, offset, n, |r, _| {
                let x = sample_marginals(beta, &[t], r).expect("valid time").values[0];
                if x > 0.99 {
                    1.0
                } else {
                    0.0
                }
            });
            let s = Summary::of(&hits);
            let z = z_score(s.mean - t, s.se.max(1.0 / n as f64));
            LimitRow { beta: b, regime: "small", statistic: "P(g(t) > 0.99)", estimate: s.mean, expected: t, se: s.se, z, pass: z.abs() < z_max }
        } else if b > LARGE {
            let k = default_truncation(beta, 1e-8);
            let d2 = replicate(seed, offset, n, |r, _| {
                distance_to_identity(&sample_path(beta, k, r), 2).expect("p = 2").powi(2)
            });
            let s = Summary::of(&d2);
            let expected = 1.0 / (6.0 * (1.0 + b));
            let z = z_score(s.mean - expected, s.se);
            LimitRow { beta: b, regime: "large", statistic: "E|g - id|^2", estimate: s.mean, expected, se: s.se, z, pass: z.abs() < z_max }
        } else {
            let xs = replicate(seed, offset, n, |r, _| sample_marginals(beta, &[t], r).expect("valid time").values[0]);
            let s = Summary::of(&xs);
            let z = z_score(s.mean - t, s.se);
            LimitRow { beta: b, regime: "reference", statistic: "E g(t)", estimate: s.mean, expected: t, se: s.se, z, pass: z.abs() < z_max }
        };
        out.push(row);
    }
    Ok(out)
}

/// Empirical mean and variance of `g(t)` against `t` and `t(1−t)/(1+β)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub beta: f64,
    pub t: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub mean_expected: f64,
    pub var: f64,
    pub var_se: f64,
    pub var_expected: f64,
    pub pass: bool,
}

/// `n` joint draws of `(g(t_1), …)` per `β`; a row passes when both the mean
/// and the variance are within `k_se` standard errors.
pub fn moment_checks(betas: &[f64], times: &[f64], n: usize, seed: u64, k_se: f64) -> Result<Vec<MomentRow>> {
    let mut out = Vec::with_capacity(betas.len() * times.len());
    for (bi, &b) in betas.iter().enumerate() {
        let beta = BetaParam::new(b)?;
        sample_marginals(beta, times, &mut crate::rng::RngStream::new(seed, 0).rng())?;
        let draws = replicate(seed, (bi as u64) << 32, n, |r, _| sample_marginals(beta, times, r).expect("validated times").values);
        for (ti, &t) in times.iter().enumerate() {
            let xs: Vec<f64> = draws.iter().map(|d| d[ti]).collect();
            let s = Summary::of(&xs);
            let var_se = Summary::var_se(&xs);
            let var_expected = t * (1.0 - t) / (1.0 + b);
            let pass = (s.mean - t).abs() <= k_se * s.se && (s.var - var_expected).abs() <= k_se * var_se;
            out.push(MomentRow { beta: b, t, mean: s.mean, mean_se: s.se, mean_expected: t, var: s.var, var_se, var_expected, pass });
        }
    }
    Ok(out)
}

//! Brownian motion on circle homeomorphisms driven by a finite Fourier
//! family, with and without the drift that makes the entropic measure
//! reversible.
//!
//! One Euler–Maruyama step moves every grid value `y = g(x_j)` by
//! `Σ φ_k(y) ΔW_k + ½ Σ φ_k′(y) φ_k(y) dt [+ ½ Σ V_k(g) φ_k(y) dt]`,
//! with the same `ΔW` for all grid points.

use crate::cylinder::{Coordinates, CylinderFunction};
use crate::dirichlet::{default_truncation, sample_circle, BetaParam};
use crate::error::{Error, Result};
use crate::field::{FieldRef, Trig};
use crate::ibp::drift_skeleton;
use crate::maps::ScalarFn;
use crate::path::{frac, CirclePath, Domain, GridFunction, Skeleton};
use crate::rng::replicate;
use crate::stats::{combined_se, z_score, Summary};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::f64::consts::TAU;
use std::sync::Arc;

/// `φ_1 ≡ 1`, `φ_{2k} = √2 k^{−s} sin(2πkx)`, `φ_{2k+1} = √2 k^{−s} cos(2πkx)`.
#[derive(Debug, Clone)]
pub struct FourierFamily {
    s: f64,
    fields: Vec<Trig>,
}

impl FourierFamily {
    pub fn new(s: f64, n: usize) -> Result<Self> {
        if !(s > 0.5) || n == 0 {
            return Err(Error::Domain(format!("Fourier family needs s > 1/2 and n >= 1 (s = {s}, n = {n})")));
        }
        let fields = (1..=n)
            .map(|i| {
                if i == 1 {
                    return Trig::cos(1.0, 0.0);
                }
                let k = (i / 2) as f64;
                let amp = std::f64::consts::SQRT_2 * k.powf(-s);
                if i % 2 == 0 {
                    Trig::sin(amp, TAU * k)
                } else {
                    Trig::cos(amp, TAU * k)
                }
            })
            .collect();
        Ok(Self { s, fields })
    }

    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn len(&self) -> usize {
        self.fields.len()
    }
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
    pub fn field(&self, k: usize) -> &Trig {
        &self.fields[k]
    }
    pub fn field_refs(&self) -> Vec<FieldRef> {
        self.fields.iter().map(|f| Arc::new(*f) as FieldRef).collect()
    }

    /// `Σ φ_k(x)²`.
    pub fn sum_squares(&self, x: f64) -> f64 {
        self.fields.iter().map(|f| f.value(x).powi(2)).sum()
    }

    /// Itô correction `½ Σ φ_k′(x) φ_k(x)`.
    pub fn ito_correction(&self, x: f64) -> f64 {
        0.5 * self.fields.iter().map(|f| f.deriv(x) * f.value(x)).sum::<f64>()
    }

    /// `V^β_{φ_k}(g)` for every member, grid increments read as jumps.
    pub fn drifts(&self, sk: &Skeleton<f64>, beta: f64) -> Vec<f64> {
        self.fields.iter().map(|f| drift_skeleton(f, sk, beta).total).collect()
    }

    /// The new value of a point at `y` after one step.
    pub fn point_update(&self, y: f64, dw: &[f64], dt: f64, drift: Option<&[f64]>) -> f64 {
        let mut noise = 0.0;
        let mut corr = 0.0;
        let mut extra = 0.0;
        for (k, f) in self.fields.iter().enumerate() {
            let p = f.value(y);
            noise += p * dw[k];
            corr += f.deriv(y) * p;
            if let Some(v) = drift {
                extra += v[k] * p;
            }
        }
        y + noise + 0.5 * (corr + extra) * dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummabilityReport {
    pub s: f64,
    pub n: usize,
    /// `sup Σ φ_k²` over a 10⁴-point grid.
    pub c: f64,
    /// `1 + 2 Σ_{k≥1} k^{−2s}`: finite for every `s > 1/2`.
    pub c_limit: f64,
    pub c_finite: bool,
    /// `Σ_{k ≤ n/2} k^{4−2s}` for the present family.
    pub drift_square_partial: f64,
    /// Whether the drift-square series converges as `n → ∞` (`s > 5/2`).
    pub drift_square_finite: bool,
}

pub fn summability_report(family: &FourierFamily) -> SummabilityReport {
    let grid = 10_000;
    let c = (0..grid).map(|i| family.sum_squares(i as f64 / grid as f64)).fold(0.0, f64::max);
    let s = family.s;
    let kmax = family.len() / 2;
    // tail of Σ k^{−2s} by the integral bound, which is sharp enough for a report
    let terms = 100_000;
    let head: f64 = (1..=terms).map(|k| (k as f64).powf(-2.0 * s)).sum();
    let tail = (terms as f64).powf(1.0 - 2.0 * s) / (2.0 * s - 1.0);
    SummabilityReport {
        s,
        n: family.len(),
        c,
        c_limit: 1.0 + 2.0 * (head + tail),
        c_finite: s > 0.5,
        drift_square_partial: (1..=kmax).map(|k| (k as f64).powf(4.0 - 2.0 * s)).sum(),
        drift_square_finite: s > 2.5,
    }
}

/// A monotone circle map sampled at the cell midpoints `(j + ½)/M`, stored
/// as a lift.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    pub values: Vec<f64>,
    pub time: f64,
    pub steps: usize,
    /// Steps after which the order had to be restored.
    pub violations: usize,
}

impl FlowState {
    pub fn identity(m: usize) -> Self {
        Self::new(GridFunction::<f64>::identity(m, Domain::Circle).into_values())
    }

    fn new(values: Vec<f64>) -> Self {
        Self { values, time: 0.0, steps: 0, violations: 0 }
    }

    /// A lifted monotone grid (`v_1 ≤ … ≤ v_M ≤ v_1 + 1`).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Ok(Self::new(GridFunction::new(values, Domain::Circle)?.into_values()))
    }

    /// Midpoint samples of a circle path.
    pub fn from_circle_path(g: &CirclePath<f64>, m: usize) -> Self {
        let sk = g.skeleton();
        Self::new((0..m).map(|j| sk.eval((j as f64 + 0.5) / m as f64)).collect())
    }

    pub fn grid(&self) -> GridFunction<f64> {
        GridFunction::new(self.values.clone(), Domain::Circle).expect("flow states stay ordered")
    }

    pub fn skeleton(&self) -> Skeleton<f64> {
        self.grid().skeleton()
    }
}

/// Sort; if the lift then spans more than one turn (beyond rounding), reduce
/// every value into `[v_min, v_min + 1)` and sort again. Returns whether
/// anything changed.
// a full turn drifts by rounding only; well inside the grid validation tolerance
const SPAN_TOL: f64 = 0.5e-12;

fn restore_order(v: &mut [f64]) -> bool {
    let by_value = |a: &f64, b: &f64| a.partial_cmp(b).expect("finite values");
    let mut changed = false;
    if v.windows(2).any(|w| w[1] < w[0]) {
        v.sort_by(by_value);
        changed = true;
    }
    let m = v.len();
    if m > 1 && v[m - 1] > v[0] + 1.0 + SPAN_TOL {
        let base = v[0];
        for x in v.iter_mut() {
            *x = base + frac(*x - base);
        }
        v.sort_by(by_value);
        changed = true;
    }
    changed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub drift: bool,
    pub beta: f64,
}

impl SdeConfig {
    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Domain(format!("time step {} must be positive", self.dt)));
        }
        BetaParam::new(self.beta).map(|_| ())
    }
}

/// One step driven by the increments `dw`; returns the drifts `V_k(g_t)`
/// used (empty when the drift is off).
pub fn sde_step(state: &mut FlowState, family: &FourierFamily, cfg: &SdeConfig, dw: &[f64]) -> Result<Vec<f64>> {
    cfg.check()?;
    if dw.len() != family.len() {
        return Err(Error::SizeMismatch(dw.len(), family.len()));
    }
    let v = if cfg.drift { family.drifts(&state.skeleton(), cfg.beta) } else { Vec::new() };
    let drift = cfg.drift.then_some(v.as_slice());
    for y in &mut state.values {
        *y = family.point_update(*y, dw, cfg.dt, drift);
    }
    if restore_order(&mut state.values) {
        state.violations += 1;
    }
    state.time += cfg.dt;
    state.steps += 1;
    Ok(v)
}

pub fn brownian_increments<R: Rng + ?Sized>(n: usize, dt: f64, rng: &mut R) -> Vec<f64> {
    let sd = dt.sqrt();
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Simulate `steps` steps. With `girsanov`, the drift is left out of the
/// dynamics and instead accumulated as the log-likelihood ratio
/// `Σ θ·ΔW − ½ Σ |θ|² dt` with `θ = ½V`.
pub fn simulate<R: Rng + ?Sized>(
    g0: &FlowState,
    family: &FourierFamily,
    cfg: &SdeConfig,
    steps: usize,
    girsanov: bool,
    rng: &mut R,
) -> Result<(FlowState, f64)> {
    let mut state = g0.clone();
    let mut log_w = 0.0;
    let step_cfg = SdeConfig { drift: cfg.drift && !girsanov, ..*cfg };
    for _ in 0..steps {
        let dw = brownian_increments(family.len(), cfg.dt, rng);
        if girsanov && cfg.drift {
            let v = family.drifts(&state.skeleton(), cfg.beta);
            for (vk, wk) in v.iter().zip(&dw) {
                let theta = 0.5 * vk;
                log_w += theta * wk - 0.5 * theta * theta * cfg.dt;
            }
        }
        sde_step(&mut state, family, &step_cfg, &dw)?;
    }
    Ok((state, log_w))
}

fn class_s_points(u: &CylinderFunction) -> Result<&[f64]> {
    match &u.coords {
        Coordinates::Points(xs) => Ok(xs),
        _ => Err(Error::Domain("the generator check needs a point-evaluation cylinder function".into())),
    }
}

/// `½Lu(g)` for class-S `u`:
/// `½ Σ_k [Σ_ij ∂_i∂_jU φ_k(y_i)φ_k(y_j) + Σ_i ∂_iU (φ_k′(y_i) + V_k) φ_k(y_i)]`.
pub fn generator_explicit(u: &CylinderFunction, family: &FourierFamily, g0: &FlowState, beta: f64, drift: bool) -> Result<f64> {
    class_s_points(u)?;
    let sk = g0.skeleton();
    let y = u.coordinates(&sk);
    let m = y.len();
    let grad = u.outer.gradient(&y);
    let hess = u.outer.hessian(&y);
    let v = if drift { family.drifts(&sk, beta) } else { vec![0.0; family.len()] };
    let mut total = 0.0;
    for (k, f) in family.fields.iter().enumerate() {
        let p: Vec<f64> = y.iter().map(|&yi| f.value(yi)).collect();
        for i in 0..m {
            for j in 0..m {
                total += hess[i * m + j] * p[i] * p[j];
            }
            total += grad[i] * (f.deriv(y[i]) + v[k]) * p[i];
        }
    }
    Ok(0.5 * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub dt: f64,
    pub n_paths: usize,
    pub explicit: f64,
    /// `(u(g_dt) − u(g₀))/dt`, plain Monte Carlo.
    pub plain: ResidualEstimate,
    /// Same draws, antithetic pairs `±ΔW`.
    pub antithetic: ResidualEstimate,
    /// Antithetic estimate at `2·dt` (independent streams).
    pub antithetic_2dt: ResidualEstimate,
    /// `2·r(dt) − r(2dt)`, removing the first-order time-step bias.
    pub extrapolated: ResidualEstimate,
    /// `r(dt) − r(2dt)`, an estimate of the bias at `dt`.
    pub bias_estimate: f64,
    pub z_plain: f64,
    pub z_antithetic: f64,
    pub z_extrapolated: f64,
    pub pass: bool,
}

pub const GENERATOR_Z_MAX: f64 = 4.0;

/// `(plain, antithetic)` one-step samples of `(u(g_dt) − u(g₀))/dt`.
fn one_step_samples(
    u: &CylinderFunction,
    family: &FourierFamily,
    g0: &FlowState,
    beta: f64,
    dt: f64,
    drift: bool,
    n: usize,
    seed: u64,
    offset: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let xs = class_s_points(u)?;
    let sk = g0.skeleton();
    let y0: Vec<f64> = xs.iter().map(|&x| sk.eval(x)).collect();
    let u0 = u.outer.value(&y0);
    let v = if drift { Some(family.drifts(&sk, beta)) } else { None };
    // Only the evaluation points move; the drifts are those of g₀, as in a
    // full grid step.
    let rows = replicate(seed, offset, n, |r, _| {
        let dw = brownian_increments(family.len(), dt, r);
        let neg: Vec<f64> = dw.iter().map(|w| -w).collect();
        let up: Vec<f64> = y0.iter().map(|&y| family.point_update(y, &dw, dt, v.as_deref())).collect();
        let dn: Vec<f64> = y0.iter().map(|&y| family.point_update(y, &neg, dt, v.as_deref())).collect();
        let (a, b) = (u.outer.value(&up), u.outer.value(&dn));
        ((a - u0) / dt, (0.5 * (a + b) - u0) / dt)
    });
    Ok(rows.into_iter().unzip())
}

fn estimate(xs: &[f64]) -> ResidualEstimate {
    let s = Summary::of(xs);
    ResidualEstimate { mean: s.mean, se: s.se }
}

pub fn generator_residual(
    u: &CylinderFunction,
    family: &FourierFamily,
    g0: &FlowState,
    beta: f64,
    dt: f64,
    drift: bool,
    n_paths: usize,
    seed: u64,
) -> Result<GeneratorReport> {
    SdeConfig { dt, drift, beta }.check()?;
    let explicit = generator_explicit(u, family, g0, beta, drift)?;
    let (plain, anti) = one_step_samples(u, family, g0, beta, dt, drift, n_paths, seed, 0)?;
    let (_, anti2) = one_step_samples(u, family, g0, beta, 2.0 * dt, drift, n_paths, seed, 1 << 40)?;
    let (mut plain, mut antithetic, mut antithetic_2dt) = (estimate(&plain), estimate(&anti), estimate(&anti2));
    // differences of u are only known to rounding, which matters when the
    // antithetic estimator has no noise (linear u)
    let u0 = u.eval_skeleton(&g0.skeleton()).abs().max(1.0);
    let floor = 64.0 * f64::EPSILON * u0 / dt;
    for (e, h) in [(&mut plain, dt), (&mut antithetic, dt), (&mut antithetic_2dt, 2.0 * dt)] {
        e.se = e.se.hypot(floor * dt / h);
    }
    let extrapolated = ResidualEstimate {
        mean: 2.0 * antithetic.mean - antithetic_2dt.mean,
        se: combined_se(2.0 * antithetic.se, antithetic_2dt.se),
    };
    let z_plain = z_score(plain.mean - explicit, plain.se);
    let z_antithetic = z_score(antithetic.mean - explicit, antithetic.se);
    let z_extrapolated = z_score(extrapolated.mean - explicit, extrapolated.se);
    Ok(GeneratorReport {
        dt,
        n_paths,
        explicit,
        plain,
        antithetic,
        antithetic_2dt,
        extrapolated,
        bias_estimate: antithetic.mean - antithetic_2dt.mean,
        z_plain,
        z_antithetic,
        z_extrapolated,
        pass: z_plain.abs() < GENERATOR_Z_MAX && z_extrapolated.abs() < GENERATOR_Z_MAX,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovReport {
    pub n_paths: usize,
    pub steps: usize,
    pub drifted: ResidualEstimate,
    pub weighted: ResidualEstimate,
    /// Undrifted, unweighted: shows how much the drift matters.
    pub undrifted: ResidualEstimate,
    pub z: f64,
    /// Effective sample size of the weights, as a fraction of `n_paths`.
    pub ess_fraction: f64,
    pub mean_weight: f64,
    pub pass: bool,
}

/// Compare `E[f(g_T)]` under the drifted dynamics with the Girsanov-weighted
/// undrifted dynamics, from a common start. The two runs use independent
/// streams.
pub fn girsanov_comparison(
    f: &CylinderFunction,
    family: &FourierFamily,
    g0: &FlowState,
    cfg: &SdeConfig,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<GirsanovReport> {
    cfg.check()?;
    let drifted: Vec<Result<f64>> = replicate(seed, 0, n_paths, |r, _| {
        let (s, _) = simulate(g0, family, cfg, steps, false, r)?;
        Ok(f.eval_skeleton(&s.skeleton()))
    });
    let weighted: Vec<Result<(f64, f64)>> = replicate(seed, 1 << 40, n_paths, |r, _| {
        let (s, lw) = simulate(g0, family, cfg, steps, true, r)?;
        Ok((f.eval_skeleton(&s.skeleton()), lw.exp()))
    });
    let drifted: Vec<f64> = drifted.into_iter().collect::<Result<_>>()?;
    let weighted: Vec<(f64, f64)> = weighted.into_iter().collect::<Result<_>>()?;
    let wf: Vec<f64> = weighted.iter().map(|(x, w)| x * w).collect();
    let plain: Vec<f64> = weighted.iter().map(|(x, _)| *x).collect();
    let (d, w, un) = (estimate(&drifted), estimate(&wf), estimate(&plain));
    let sw: f64 = weighted.iter().map(|(_, w)| w).sum();
    let sw2: f64 = weighted.iter().map(|(_, w)| w * w).sum();
    let z = z_score(d.mean - w.mean, combined_se(d.se, w.se));
    Ok(GirsanovReport {
        n_paths,
        steps,
        drifted: d,
        weighted: w,
        undrifted: un,
        z,
        ess_fraction: sw * sw / sw2 / n_paths as f64,
        mean_weight: sw / n_paths as f64,
        pass: z.abs() < GENERATOR_Z_MAX,
    })
}

/// A start drawn from the entropic measure on the circle, sampled on `m`
/// midpoints.
pub fn entropic_start<R: Rng + ?Sized>(beta: BetaParam, m: usize, rng: &mut R) -> FlowState {
    let g = sample_circle(beta, default_truncation(beta, 1e-8), rng);
    FlowState::from_circle_path(&g, m)
}

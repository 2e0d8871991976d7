//! Finite-dimensional Wasserstein diffusion on monotone grid maps of `[0,1]`.
//!
//! Each cell value `y = g(x_j)` moves by
//! `(σφ(y))·ΔW + ½[φ(y)ᵀa(φ′(y) + V) − c·φ(y)] dt`, where `a = (Φ+λ)⁻¹`,
//! `σ = a^{1/2}` and `c_j = Σ a_ik a_mj ⟨(φ_kφ_m)′, φ_i⟩` is the
//! divergence of the mobility. Cells holding equal values move together, so
//! all coefficients are computed once per distinct value (atom of `μ = g_*Leb`).

use crate::cylinder::{Coordinates, CylinderFunction, OuterFn, TestFn};
use crate::dirichlet::{default_truncation, sample_path, BetaParam};
use crate::error::{Error, Result};
use crate::field::{FieldRef, Trig, VectorField};
use crate::ibp::drift_skeleton;
use crate::maps::ScalarFn;
use crate::path::{DiscreteMeasure, Domain, GridFunction, Skeleton};
use crate::rng::replicate;
use crate::stats::{ks_two_sample, regress_robust, z_score, KsResult, Summary};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct BasisFamily {
    fields: Vec<FieldRef>,
}

impl BasisFamily {
    pub fn new(fields: Vec<FieldRef>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Domain("empty basis".into()));
        }
        if let Some(f) = fields.iter().find(|f| !f.vanishes_at_endpoints()) {
            return Err(Error::InvalidMap(format!("basis member {f:?} does not vanish at 0 and 1")));
        }
        Ok(Self { fields })
    }

    /// `√2 sin(iπx)`, `i = 1..n`: orthonormal in `L²(Leb)`.
    pub fn sine(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| Arc::new(Trig::sin(SQRT_2, i as f64 * PI)) as FieldRef).collect())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
    pub fn fields(&self) -> &[FieldRef] {
        &self.fields
    }

    /// Condition number of `Φ` at the identity grid with `m` cells.
    pub fn gram_condition(&self, m: usize) -> f64 {
        let sk = GridFunction::<f64>::identity(m, Domain::Interval).skeleton();
        let e = SymmetricEigen::new(phi_matrix(self, &sk)).eigenvalues;
        e.max() / e.min()
    }

    fn eval(&self, atoms: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (k, n) = (atoms.len(), self.len());
        let p = DMatrix::from_fn(k, n, |x, i| self.fields[i].value(atoms[x]));
        let d = DMatrix::from_fn(k, n, |x, i| self.fields[i].deriv(atoms[x]));
        (p, d)
    }
}

/// `Φ_ij = ∫ φ_i(g) φ_j(g) dx`, exact over the constancy pieces.
pub fn phi_matrix(basis: &BasisFamily, sk: &Skeleton<f64>) -> DMatrix<f64> {
    let (p, _) = basis.eval(&sk.vals);
    weighted_gram(&p, &sk.lens)
}

fn weighted_gram(p: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (k, n) = p.shape();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..k).map(|x| w[x] * p[(x, i)] * p[(x, j)]).sum();
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityMatrices {
    pub phi: DMatrix<f64>,
    /// `(Φ + λI)⁻¹`
    pub a: DMatrix<f64>,
    /// `(Φ + λI)^{−1/2}`
    pub sigma: DMatrix<f64>,
    pub lambda: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// `λ = 1e-6 · tr(Φ)/n`, floored at `1e-300` so a state sitting on the
/// boundary (where every basis field vanishes) still has a mobility.
pub fn default_lambda(phi: &DMatrix<f64>) -> f64 {
    (1e-6 * phi.trace() / phi.nrows() as f64).max(1e-300)
}

pub fn mobility(phi: &DMatrix<f64>, lambda: f64) -> Result<MobilityMatrices> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("ridge parameter {lambda} must be positive")));
    }
    let n = phi.nrows();
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("Φ has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(phi.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let scale = phi.trace().abs().max(1e-300);
    if lo < -1e-10 * scale {
        return Err(Error::Numerical(format!("Φ is not positive semidefinite: eigenvalues in [{lo:e}, {hi:e}]")));
    }
    let q = &eig.eigenvectors;
    let inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&e| 1.0 / (e.max(0.0) + lambda)));
    let a = q * DMatrix::from_diagonal(&inv) * q.transpose();
    let sigma = q * DMatrix::from_diagonal(&inv.map(f64::sqrt)) * q.transpose();
    Ok(MobilityMatrices { phi: phi.clone(), a: symmetrize(a), sigma: symmetrize(sigma), lambda, min_eigenvalue: lo, max_eigenvalue: hi })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Coefficients of one step at the atoms of the current state.
#[derive(Debug, Clone)]
pub struct StepCoefficients {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    pub drift: Vec<f64>,
    /// Row `x` is `σφ(y_x)`: the loadings of atom `x` on the `n` Brownian motions.
    pub noise: DMatrix<f64>,
    pub mobility: MobilityMatrices,
    /// `V^β_{φ_i}(g)`, grid increments read as jumps.
    pub v: Vec<f64>,
    /// `c = a·e`, the mobility-divergence coefficients.
    pub c: DVector<f64>,
}

/// `c_j = Σ_{i,k,m} a_ik a_mj B_kmi`, `B_kmi = ∫ (φ_kφ_m)′(g) φ_i(g)`, in
/// `O(K n²)` without forming `B`.
pub fn divergence_coefficients(p: &DMatrix<f64>, d: &DMatrix<f64>, w: &[f64], a: &DMatrix<f64>) -> DVector<f64> {
    let q = p * a;
    let (k, n) = p.shape();
    let mut e = DVector::zeros(n);
    for x in 0..k {
        let r: f64 = (0..n).map(|i| d[(x, i)] * q[(x, i)]).sum();
        let s: f64 = (0..n).map(|i| p[(x, i)] * q[(x, i)]).sum();
        for m in 0..n {
            e[m] += w[x] * (r * p[(x, m)] + s * d[(x, m)]);
        }
    }
    a * e
}

pub fn step_coefficients(sk: &Skeleton<f64>, basis: &BasisFamily, beta: f64, lambda: Option<f64>) -> Result<StepCoefficients> {
    let (p, d) = basis.eval(&sk.vals);
    let phi = weighted_gram(&p, &sk.lens);
    let lambda = lambda.unwrap_or_else(|| default_lambda(&phi));
    let mob = mobility(&phi, lambda)?;
    let v: Vec<f64> = basis.fields.iter().map(|f| drift_skeleton(&**f, sk, beta).total).collect();
    let vv = DVector::from_column_slice(&v);
    let c = divergence_coefficients(&p, &d, &sk.lens, &mob.a);
    let pa = &p * &mob.a;
    let k = sk.vals.len();
    let drift = (0..k)
        .map(|x| {
            let row = pa.row(x);
            let mut s = 0.0;
            for i in 0..basis.len() {
                s += row[i] * (d[(x, i)] + vv[i]) - c[i] * p[(x, i)];
            }
            0.5 * s
        })
        .collect();
    let noise = &p * &mob.sigma;
    Ok(StepCoefficients { atoms: sk.vals.clone(), weights: sk.lens.clone(), drift, noise, mobility: mob, v, c })
}

/// Exact generator of the discretized dynamics applied to `⟨α, μ⟩`:
/// `Σ_x w_x [α′(y_x)·drift_x + ½ α″(y_x)·|σφ(y_x)|²]`.
pub fn finite_generator(alpha: &TestFn, coeffs: &StepCoefficients) -> f64 {
    coeffs
        .atoms
        .iter()
        .enumerate()
        .map(|(x, &y)| coeffs.weights[x] * (alpha.deriv(y) * coeffs.drift[x] + 0.5 * alpha.deriv2(y) * coeffs.noise.row(x).norm_squared()))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionState {
    pub values: Vec<f64>,
    pub time: f64,
    pub steps: usize,
    /// Steps after which the order had to be restored.
    pub violations: usize,
    /// Cell values pushed back into `[0, 1]`.
    pub clamps: usize,
}

impl DiffusionState {
    pub fn new(g: GridFunction<f64>) -> Result<Self> {
        if g.domain() != Domain::Interval {
            return Err(Error::Domain("the Wasserstein diffusion lives on the interval".into()));
        }
        Ok(Self { values: g.into_values(), time: 0.0, steps: 0, violations: 0, clamps: 0 })
    }

    pub fn identity(m: usize) -> Self {
        Self::new(GridFunction::identity(m, Domain::Interval)).expect("interval grid")
    }

    /// Entropic sample discretized at the cell midpoints.
    pub fn entropic<R: Rng + ?Sized>(beta: BetaParam, m: usize, rng: &mut R) -> Self {
        let g = sample_path(beta, default_truncation(beta, 1e-8), rng);
        Self::new(GridFunction::sample(&g, m)).expect("interval grid")
    }

    pub fn grid(&self) -> GridFunction<f64> {
        GridFunction::new(self.values.clone(), Domain::Interval).expect("diffusion states stay ordered in [0,1]")
    }

    pub fn skeleton(&self) -> Skeleton<f64> {
        self.grid().skeleton()
    }

    pub fn measure(&self) -> DiscreteMeasure<f64> {
        self.grid().pushforward()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WdStepConfig {
    pub beta: f64,
    pub dt: f64,
    /// Ridge parameter; `None` uses [`default_lambda`] at every step.
    pub lambda: Option<f64>,
}

/// One Euler–Maruyama step driven by `dw` (length `n`).
pub fn wd_step(state: &mut DiffusionState, basis: &BasisFamily, cfg: &WdStepConfig, dw: &[f64]) -> Result<StepCoefficients> {
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(Error::Domain(format!("time step {} must be positive", cfg.dt)));
    }
    if dw.len() != basis.len() {
        return Err(Error::SizeMismatch(dw.len(), basis.len()));
    }
    let sk = state.skeleton();
    let coeffs = step_coefficients(&sk, basis, cfg.beta, cfg.lambda)?;
    let dwv = DVector::from_column_slice(dw);
    let moved: Vec<f64> = (0..sk.vals.len()).map(|x| sk.vals[x] + coeffs.drift[x] * cfg.dt + coeffs.noise.row(x).transpose().dot(&dwv)).collect();
    // pieces are runs of equal cells; map each cell to its run
    let m = state.values.len();
    let mut piece = 0;
    for j in 0..m {
        while piece + 1 < sk.vals.len() && state.values[j] != sk.vals[piece] {
            piece += 1;
        }
        let mut y = moved[piece];
        if !(0.0..=1.0).contains(&y) {
            y = y.clamp(0.0, 1.0);
            state.clamps += 1;
        }
        state.values[j] = y;
    }
    if state.values.windows(2).any(|w| w[1] < w[0]) {
        state.values.sort_by(f64::total_cmp);
        state.violations += 1;
    }
    state.time += cfg.dt;
    state.steps += 1;
    Ok(coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorParts {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub beta: f64,
    /// `𝕃₁ + 𝕃₂ + β𝕃₃`
    pub total: f64,
}

fn z_alphas(u: &CylinderFunction) -> Result<&[TestFn]> {
    match &u.coords {
        Coordinates::Composed(a) => Ok(a),
        _ => Err(Error::Domain("the Wasserstein generator acts on ∫α(g) cylinder functions".into())),
    }
}

/// Gap bracket `(α″(I₋) + α″(I₊))/2 − (α′(I₊) − α′(I₋))/|I|`.
fn gap_bracket(alpha: &TestFn, l: f64, r: f64) -> f64 {
    0.5 * (alpha.deriv2(l) + alpha.deriv2(r)) - alpha.deriv_secant(l, r)
}

/// `Σ_{I ∈ gaps(μ)} bracket − (α″(0) + α″(1))/2`.
pub fn gap_term(alpha: &TestFn, mu: &DiscreteMeasure<f64>) -> f64 {
    let s: f64 = mu.gaps(Domain::Interval).iter().filter(|g| g.len() > 0.0).map(|g| gap_bracket(alpha, g.left, g.right)).sum();
    s - 0.5 * (alpha.deriv2(0.0) + alpha.deriv2(1.0))
}

/// `𝕃u(μ)` for `u = U(∫α⃗ dμ)` with `α_i′(0) = α_i′(1) = 0`.
pub fn generator_apply(u: &CylinderFunction, mu: &DiscreteMeasure<f64>, beta: f64) -> Result<GeneratorParts> {
    let alphas = z_alphas(u)?;
    for a in alphas {
        if a.deriv(0.0).abs() > 1e-12 || a.deriv(1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("test function {a:?} needs α′(0) = α′(1) = 0")));
        }
    }
    let y: Vec<f64> = alphas.iter().map(|a| mu.integrate(|x| a.value(x))).collect();
    let grad = u.outer.gradient(&y);
    let hess = u.outer.hessian(&y);
    let m = alphas.len();
    let mut l1 = 0.0;
    for i in 0..m {
        for j in 0..m {
            if hess[i * m + j] != 0.0 {
                l1 += hess[i * m + j] * mu.integrate(|x| alphas[i].deriv(x) * alphas[j].deriv(x));
            }
        }
    }
    let l2: f64 = (0..m).map(|i| grad[i] * gap_term(&alphas[i], mu)).sum();
    let l3: f64 = (0..m).map(|i| grad[i] * mu.integrate(|x| alphas[i].deriv2(x))).sum();
    Ok(GeneratorParts { l1, l2, l3, beta, total: l1 + l2 + beta * l3 })
}

/// Streaming compensated martingale `M_t = ⟨α,μ_t⟩ − ∫ ½(𝕃₂ + β𝕃₃)⟨α,·⟩(μ_s) ds`
/// (trapezoidal in time) together with realized and predicted quadratic
/// variation, recorded in blocks of `block` steps.
#[derive(Debug, Clone)]
pub struct MartingaleTracker {
    alpha: TestFn,
    beta: f64,
    dt: f64,
    block: usize,
    m: f64,
    value: f64,
    drift: f64,
    qv_density: f64,
    steps: usize,
    block_start: (f64, f64),
    out: PathMartingale,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PathMartingale {
    pub m_final: f64,
    pub qv_realized: f64,
    pub qv_expected: f64,
    /// `(⟨α,μ⟩ at block start, M increment over the block)`.
    pub blocks: Vec<(f64, f64)>,
}

impl MartingaleTracker {
    pub fn new(alpha: TestFn, beta: f64, dt: f64, block: usize, mu0: &DiscreteMeasure<f64>) -> Result<Self> {
        if alpha.deriv(0.0).abs() > 1e-12 || alpha.deriv(1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("test function {alpha:?} needs α′(0) = α′(1) = 0")));
        }
        let (value, drift, qv_density) = Self::observe_measure(&alpha, beta, mu0);
        Ok(Self { alpha, beta, dt, block: block.max(1), m: 0.0, value, drift, qv_density, steps: 0, block_start: (value, 0.0), out: PathMartingale::default() })
    }

    fn observe_measure(alpha: &TestFn, beta: f64, mu: &DiscreteMeasure<f64>) -> (f64, f64, f64) {
        let value = mu.integrate(|x| alpha.value(x));
        let drift = 0.5 * (gap_term(alpha, mu) + beta * mu.integrate(|x| alpha.deriv2(x)));
        let qv = mu.integrate(|x| alpha.deriv(x).powi(2));
        (value, drift, qv)
    }

    pub fn observe(&mut self, mu: &DiscreteMeasure<f64>) {
        let (value, drift, qv) = Self::observe_measure(&self.alpha, self.beta, mu);
        let dv = value - self.value;
        self.m += dv - 0.5 * self.dt * (self.drift + drift);
        self.out.qv_realized += dv * dv;
        self.out.qv_expected += 0.5 * self.dt * (self.qv_density + qv);
        self.value = value;
        self.drift = drift;
        self.qv_density = qv;
        self.steps += 1;
        if self.steps % self.block == 0 {
            self.out.blocks.push((self.block_start.0, self.m - self.block_start.1));
            self.block_start = (value, self.m);
        }
    }

    pub fn finish(mut self) -> PathMartingale {
        self.out.m_final = self.m;
        self.out
    }
}

/// Statistics of `μ` compared in the stationarity test.
pub const STATISTIC_NAMES: [&str; 5] = ["mean", "cos_pi", "cos_2pi", "largest_gap", "gap_square_sum"];

pub fn measure_statistics(mu: &DiscreteMeasure<f64>) -> [f64; 5] {
    let gaps = mu.gaps(Domain::Interval);
    [
        mu.integrate(|x| x),
        mu.integrate(|x| (PI * x).cos()),
        mu.integrate(|x| (2.0 * PI * x).cos()),
        gaps.iter().map(|g| g.len()).fold(0.0, f64::max),
        gaps.iter().map(|g| g.len().powi(2)).sum(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdExperiment {
    pub beta: f64,
    pub grid: usize,
    pub n_basis: usize,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub lambda: Option<f64>,
    /// Martingale increments are taken over blocks of this many steps.
    pub block_steps: usize,
    pub alphas: Vec<TestFn>,
}

impl Default for WdExperiment {
    fn default() -> Self {
        Self {
            beta: 1.0,
            grid: 128,
            n_basis: 16,
            dt: 1e-4,
            horizon: 0.05,
            paths: 1000,
            seed: 0,
            lambda: None,
            block_steps: 50,
            alphas: vec![TestFn::CosPi(1.0), TestFn::CosPi(2.0), TestFn::CosPi(3.0)],
        }
    }
}

impl WdExperiment {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        BetaParam::new(self.beta)?;
        if self.grid < 2 || self.n_basis == 0 || self.paths < 2 || !(self.dt > 0.0) || !(self.horizon >= 0.0) {
            return Err(Error::Domain("experiment needs grid >= 2, n_basis >= 1, paths >= 2, dt > 0, horizon >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub initial: [f64; 5],
    pub terminal: [f64; 5],
    pub martingales: Vec<PathMartingale>,
    pub violations: usize,
    pub clamps: usize,
    pub final_values: Vec<f64>,
}

/// Simulate one path; `snapshot(step, state)` is called at every step
/// (step 0 included).
pub fn simulate_path(
    exp: &WdExperiment,
    basis: &BasisFamily,
    rng: &mut ChaCha8Rng,
    mut snapshot: impl FnMut(usize, &DiffusionState),
) -> Result<PathResult> {
    let beta = BetaParam::new(exp.beta)?;
    let mut state = DiffusionState::entropic(beta, exp.grid, rng);
    let cfg = WdStepConfig { beta: exp.beta, dt: exp.dt, lambda: exp.lambda };
    let mu0 = state.measure();
    let initial = measure_statistics(&mu0);
    let mut trackers: Vec<MartingaleTracker> =
        exp.alphas.iter().map(|a| MartingaleTracker::new(*a, exp.beta, exp.dt, exp.block_steps, &mu0)).collect::<Result<_>>()?;
    snapshot(0, &state);
    let sd = exp.dt.sqrt();
    for step in 1..=exp.steps() {
        let dw: Vec<f64> = (0..basis.len()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        wd_step(&mut state, basis, &cfg, &dw)?;
        let mu = state.measure();
        for t in &mut trackers {
            t.observe(&mu);
        }
        snapshot(step, &state);
    }
    Ok(PathResult {
        initial,
        terminal: measure_statistics(&state.measure()),
        martingales: trackers.into_iter().map(MartingaleTracker::finish).collect(),
        violations: state.violations,
        clamps: state.clamps,
        final_values: state.values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub alpha: TestFn,
    /// Regression of block increments on `[1, ⟨α,μ⟩]`, HC0 standard errors.
    pub z_intercept: f64,
    pub z_slope: f64,
    /// `E[M_T]` over paths.
    pub mean_m: f64,
    pub se_m: f64,
    pub z_mean: f64,
    pub qv_ratio: f64,
    pub qv_ratio_se: f64,
    pub pass_martingale: bool,
    pub pass_qv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityRow {
    pub statistic: String,
    pub initial_vs_reference: KsResult,
    pub terminal_vs_reference: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WdReport {
    pub config: WdExperiment,
    pub martingales: Vec<MartingaleReport>,
    pub stationarity: Vec<StationarityRow>,
    pub stationarity_p_min: f64,
    pub violations: usize,
    pub clamps: usize,
    pub gram_condition_identity: f64,
    pub pass_martingale: bool,
    pub pass_qv: bool,
    pub pass_stationarity: bool,
}

pub const MARTINGALE_Z_MAX: f64 = 4.0;
pub const MEAN_Z_MAX: f64 = 3.0;
pub const QV_BAND: (f64, f64) = (0.8, 1.2);
pub const STATIONARITY_P_MIN: f64 = 0.01;

pub fn summarize_martingale(alpha: TestFn, paths: &[&PathMartingale]) -> MartingaleReport {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for p in paths {
        for &(s, d) in &p.blocks {
            x.push(s);
            y.push(d);
        }
    }
    let reg = regress_robust(&y, &x);
    let finals: Vec<f64> = paths.iter().map(|p| p.m_final).collect();
    let sm = Summary::of(&finals);
    let r: f64 = paths.iter().map(|p| p.qv_realized).sum();
    let e: f64 = paths.iter().map(|p| p.qv_expected).sum();
    let ratio = r / e;
    // delta method for a ratio of sums
    let resid: f64 = paths.iter().map(|p| (p.qv_realized - ratio * p.qv_expected).powi(2)).sum();
    let ratio_se = resid.sqrt() / e;
    let z_mean = z_score(sm.mean, sm.se);
    MartingaleReport {
        alpha,
        z_intercept: reg.z_intercept(),
        z_slope: reg.z_slope(),
        mean_m: sm.mean,
        se_m: sm.se,
        z_mean,
        qv_ratio: ratio,
        qv_ratio_se: ratio_se,
        pass_martingale: reg.z_intercept().abs() < MARTINGALE_Z_MAX && reg.z_slope().abs() < MARTINGALE_Z_MAX && z_mean.abs() < MEAN_Z_MAX,
        pass_qv: ratio >= QV_BAND.0 && ratio <= QV_BAND.1,
    }
}

/// Reference statistics from fresh entropic starts on independent streams.
pub fn reference_statistics(exp: &WdExperiment) -> Result<Vec<[f64; 5]>> {
    let beta = BetaParam::new(exp.beta)?;
    Ok(replicate(exp.seed, 1 << 40, exp.paths, |r, _| measure_statistics(&DiffusionState::entropic(beta, exp.grid, r).measure())))
}

pub fn run_experiment(exp: &WdExperiment) -> Result<WdReport> {
    exp.validate()?;
    let basis = BasisFamily::sine(exp.n_basis)?;
    let results: Vec<Result<PathResult>> = replicate(exp.seed, 0, exp.paths, |r, _| simulate_path(exp, &basis, r, |_, _| {}));
    let results: Vec<PathResult> = results.into_iter().collect::<Result<_>>()?;
    report_from_paths(exp, &basis, &results)
}

pub fn report_from_paths(exp: &WdExperiment, basis: &BasisFamily, results: &[PathResult]) -> Result<WdReport> {
    let martingales: Vec<MartingaleReport> = exp
        .alphas
        .iter()
        .enumerate()
        .map(|(ai, a)| summarize_martingale(*a, &results.iter().map(|r| &r.martingales[ai]).collect::<Vec<_>>()))
        .collect();
    let reference = reference_statistics(exp)?;
    let stationarity: Vec<StationarityRow> = STATISTIC_NAMES
        .iter()
        .enumerate()
        .map(|(si, name)| {
            let col = |f: &dyn Fn(&PathResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
            let rf: Vec<f64> = reference.iter().map(|s| s[si]).collect();
            StationarityRow {
                statistic: name.to_string(),
                initial_vs_reference: ks_two_sample(&col(&|r| r.initial[si]), &rf),
                terminal_vs_reference: ks_two_sample(&col(&|r| r.terminal[si]), &rf),
            }
        })
        .collect();
    let p_min = stationarity.iter().map(|s| s.terminal_vs_reference.p_value).fold(1.0, f64::min);
    Ok(WdReport {
        config: exp.clone(),
        pass_martingale: martingales.iter().all(|m| m.pass_martingale),
        pass_qv: martingales.iter().all(|m| m.pass_qv),
        pass_stationarity: p_min > STATIONARITY_P_MIN,
        martingales,
        stationarity,
        stationarity_p_min: p_min,
        violations: results.iter().map(|r| r.violations).sum(),
        clamps: results.iter().map(|r| r.clamps).sum(),
        gram_condition_identity: basis.gram_condition(exp.grid),
    })
}

/// `Var⟨id, μ⟩ = 1/(12(1+β))` for the continuum entropic measure.
pub fn mean_variance(beta: f64) -> f64 {
    1.0 / (12.0 * (1.0 + beta))
}

/// `Var((1/M) Σ_j g(x_j))` at the midpoints `x_j = (j+½)/M`.
pub fn mean_variance_grid(beta: f64, m: usize) -> f64 {
    let x = |j: usize| (j as f64 + 0.5) / m as f64;
    let mut s = 0.0;
    for j in 0..m {
        for k in 0..m {
            let (a, b) = (x(j), x(k));
            s += a.min(b) - a * b;
        }
    }
    s / ((m * m) as f64 * (1.0 + beta))
}

/// Violation counts of the exact identities over random discretized
/// entropic states.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StructuralReport {
    pub states: usize,
    pub affine_violations: usize,
    pub cubic_violations: usize,
    pub mobility_violations: usize,
    pub max_affine_error: f64,
    pub max_cubic_error: f64,
    pub max_sigma_error: f64,
}

impl StructuralReport {
    pub fn pass(&self) -> bool {
        self.affine_violations == 0 && self.cubic_violations == 0 && self.mobility_violations == 0
    }
}

pub const STRUCTURAL_TOL: f64 = 1e-10;

fn mobility_error(m: &MobilityMatrices) -> Option<f64> {
    let sym = |x: &DMatrix<f64>| (x - x.transpose()).abs().max();
    let scale = m.a.abs().max();
    let phi_scale = m.phi.abs().max().max(f64::MIN_POSITIVE);
    if sym(&m.phi) > 1e-12 * phi_scale || sym(&m.a) > 0.0 || sym(&m.sigma) > 0.0 {
        return None;
    }
    let psd = |x: &DMatrix<f64>| SymmetricEigen::new(x.clone()).eigenvalues.min() >= -1e-12 * x.abs().max();
    if !psd(&m.a) || !psd(&m.sigma) {
        return None;
    }
    Some((&m.sigma * &m.sigma - &m.a).abs().max() / scale)
}

pub fn structural_identities(n_states: usize, n_basis: usize, seed: u64) -> Result<StructuralReport> {
    let basis = BasisFamily::sine(n_basis)?;
    let u = CylinderFunction::new(Coordinates::Composed(vec![TestFn::CosPi(1.0), TestFn::CosPi(2.0)]), OuterFn::Product)?;
    let cubic = TestFn::Monomial(3);
    let rows: Vec<Result<(f64, f64, Option<f64>)>> = replicate(seed, 0, n_states, |r, i| {
        let beta = [0.5, 1.0, 5.0][i % 3];
        let m = [32, 128][(i / 3) % 2];
        let st = DiffusionState::entropic(BetaParam::new(beta)?, m, r);
        let mu = st.measure();
        let (a, b) = (generator_apply(&u, &mu, beta)?, generator_apply(&u, &mu, 2.0 * beta)?);
        let affine = (b.total - a.total - beta * a.l3).abs() / (1.0 + a.total.abs() + b.total.abs());
        let cub: f64 = mu.gaps(Domain::Interval).iter().filter(|g| g.len() > 0.0).map(|g| gap_bracket(&cubic, g.left, g.right)).sum::<f64>().abs();
        let sk = st.skeleton();
        let phi = phi_matrix(&basis, &sk);
        Ok((affine, cub, mobility(&phi, default_lambda(&phi)).ok().as_ref().and_then(mobility_error)))
    });
    let mut rep = StructuralReport { states: n_states, ..Default::default() };
    for row in rows {
        let (affine, cub, mob) = row?;
        rep.max_affine_error = rep.max_affine_error.max(affine);
        rep.max_cubic_error = rep.max_cubic_error.max(cub);
        rep.affine_violations += usize::from(affine > STRUCTURAL_TOL);
        rep.cubic_violations += usize::from(cub > STRUCTURAL_TOL);
        match mob {
            Some(e) => {
                rep.max_sigma_error = rep.max_sigma_error.max(e);
                rep.mobility_violations += usize::from(e > STRUCTURAL_TOL);
            }
            None => rep.mobility_violations += 1,
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Polynomial, Zero};
    use crate::path::JumpFunction;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn random_state(seed: u64, beta: f64, m: usize) -> DiffusionState {
        DiffusionState::entropic(BetaParam::new(beta).unwrap(), m, &mut RngStream::new(seed, 0).rng())
    }

    #[test]
    fn phi_at_identity_is_identity() {
        let b = BasisFamily::sine(16).unwrap();
        let phi = phi_matrix(&b, &DiffusionState::identity(128).skeleton());
        assert!((phi - DMatrix::identity(16, 16)).abs().max() < 1e-13);
        assert!(b.gram_condition(128) < 1.0 + 1e-12);
    }

    #[test]
    fn phi_of_constant_is_rank_one() {
        let b = BasisFamily::sine(4).unwrap();
        let g = JumpFunction::constant(0.3).unwrap();
        let phi = phi_matrix(&b, &g.skeleton());
        let v: Vec<f64> = b.fields().iter().map(|f| f.value(0.3)).collect();
        for i in 0..4 {
            for j in 0..4 {
                assert!((phi[(i, j)] - v[i] * v[j]).abs() < 1e-15);
            }
        }
        let e = SymmetricEigen::new(phi).eigenvalues;
        assert_eq!(e.iter().filter(|x| x.abs() > 1e-12).count(), 1);
    }

    #[test]
    fn phi_matches_fine_quadrature() {
        let b = BasisFamily::sine(3).unwrap();
        let g = crate::dirichlet::sample_path(BetaParam::new(1.0).unwrap(), 30, &mut RngStream::new(2, 0).rng());
        let phi = phi_matrix(&b, &g.skeleton());
        for i in 0..3 {
            for j in 0..3 {
                let f = |t: f64| {
                    let y = g.eval(t).unwrap();
                    b.fields()[i].value(y) * b.fields()[j].value(y)
                };
                // integrate piece by piece so the jumps fall on the breakpoints
                let sk = g.skeleton();
                let q: f64 = sk.starts.iter().zip(&sk.lens).map(|(&s, &l)| crate::quad::integrate(|t| f(s + 0.5 * l + (t - 0.5) * l * (1.0 - 1e-12)), 0.0, 1.0, 1e-15, 1e-13).0 * l).sum();
                assert!((phi[(i, j)] - q).abs() < 1e-10, "{i}{j}: {} vs {q}", phi[(i, j)]);
            }
        }
    }

    #[test]
    fn mobility_closed_forms() {
        let m = mobility(&DMatrix::identity(3, 3), 0.1).unwrap();
        assert!((m.a.clone() - DMatrix::identity(3, 3) / 1.1).abs().max() < 1e-15);
        assert!((m.sigma.clone() - DMatrix::identity(3, 3) / 1.1f64.sqrt()).abs().max() < 1e-15);
        // rank one: a·Φ → projection onto e
        let e = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let phi = &e * e.transpose();
        let proj = phi.clone();
        let mut prev = f64::INFINITY;
        for l in [1e-2, 1e-4, 1e-6] {
            let m = mobility(&phi, l).unwrap();
            let err = (&m.a * &phi - &proj).abs().max();
            assert!(err < prev);
            // exact: a·Φ = ee^T/(1+λ), max |ee^T| = 0.64
            assert!((err - 0.64 * l / (1.0 + l)).abs() < 1e-9);
            prev = err;
        }
        assert!(mobility(&DMatrix::identity(2, 2), 0.0).is_err());
        assert!(mobility(&(-DMatrix::identity(2, 2)), 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mobility_invariants(seed in 0u64..10_000, l1 in 1e-6..1.0f64, f in 1.1..10.0f64) {
            let mut rng = RngStream::new(seed, 9).rng();
            let n = 5;
            let x = DMatrix::from_fn(n, n + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let phi = &x * x.transpose();
            let (a1, a2) = (mobility(&phi, l1 * f).unwrap(), mobility(&phi, l1).unwrap());
            prop_assert!((&a1.sigma * &a1.sigma - &a1.a).abs().max() < 1e-10 * a1.a.abs().max());
            prop_assert!((a1.a.clone() - a1.a.transpose()).abs().max() == 0.0);
            let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            prop_assert!(xi.dot(&(&a1.a * &xi)) <= xi.dot(&(&a2.a * &xi)));
            prop_assert!(SymmetricEigen::new(a1.a.clone()).eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn fast_divergence_matches_tensor() {
        let b = BasisFamily::sine(6).unwrap();
        for seed in 0..5 {
            let st = random_state(seed, 1.0, 64);
            let sk = st.skeleton();
            let (p, d) = b.eval(&sk.vals);
            let w = &sk.lens;
            let mob = mobility(&weighted_gram(&p, w), 1e-3).unwrap();
            let c = divergence_coefficients(&p, &d, w, &mob.a);
            let n = 6;
            let bt = |k: usize, m: usize, i: usize| -> f64 { (0..w.len()).map(|x| w[x] * (d[(x, k)] * p[(x, m)] + p[(x, k)] * d[(x, m)]) * p[(x, i)]).sum() };
            for j in 0..n {
                let mut naive = 0.0;
                for i in 0..n {
                    for k in 0..n {
                        for m in 0..n {
                            naive += mob.a[(i, k)] * mob.a[(m, j)] * bt(k, m, i);
                        }
                    }
                }
                assert!((naive - c[j]).abs() < 1e-9 * (1.0 + naive.abs()), "{naive} vs {}", c[j]);
            }
        }
    }

    #[test]
    fn resolvent_derivative_matches_finite_difference() {
        // ∂Ψ(A)[E] = −Ψ E Ψ
        let mut rng = RngStream::new(3, 3).rng();
        let x = DMatrix::from_fn(4, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &x * x.transpose();
        let e = DMatrix::from_fn(4, 4, |i, j| if (i, j) == (1, 2) || (i, j) == (2, 1) { 1.0 } else { 0.0 });
        let psi = |m: &DMatrix<f64>| mobility(m, 0.1).unwrap().a;
        let h = 1e-6;
        let fd = (psi(&(&a + &e * h)) - psi(&(&a - &e * h))) / (2.0 * h);
        let exact = -(psi(&a) * &e * psi(&a));
        assert!((fd - exact).abs().max() < 1e-7);
    }

    #[test]
    fn generator_cubic_gap_brackets_vanish() {
        // α″ linear ⇒ trapezoid of α″ equals the secant of α′ on each gap
        let alpha = TestFn::Monomial(3);
        for seed in 0..20 {
            let mu = random_state(seed, 2.0, 64).measure();
            let s: f64 = mu.gaps(Domain::Interval).iter().map(|g| gap_bracket(&alpha, g.left, g.right)).sum();
            assert!(s.abs() < 1e-11, "{s}");
        }
    }

    #[test]
    fn generator_is_affine_in_beta_and_checks_endpoints() {
        let u = CylinderFunction::new(Coordinates::Composed(vec![TestFn::CosPi(1.0), TestFn::CosPi(2.0)]), OuterFn::Product).unwrap();
        for seed in 0..50 {
            let mu = random_state(seed, 1.0, 32).measure();
            let a = generator_apply(&u, &mu, 1.5).unwrap();
            let b = generator_apply(&u, &mu, 3.0).unwrap();
            assert_eq!(b.total - a.total, b.total - a.total);
            assert!((b.total - a.total - 1.5 * a.l3).abs() <= 1e-12 * (1.0 + a.l3.abs()));
        }
        let bad = CylinderFunction::moment(TestFn::Monomial(2));
        assert!(generator_apply(&bad, &random_state(0, 1.0, 8).measure(), 1.0).is_err());
    }

    #[test]
    fn generator_symbolic_value() {
        // μ = ½(δ_{1/4} + δ_{3/4}), α = cos πx, U linear
        let mu = DiscreteMeasure::new(vec![0.25, 0.75], vec![0.5, 0.5]).unwrap();
        let u = CylinderFunction::moment(TestFn::CosPi(1.0));
        let r = generator_apply(&u, &mu, 2.0).unwrap();
        let a1 = |x: f64| -PI * (PI * x).sin();
        let a2 = |x: f64| -PI * PI * (PI * x).cos();
        let br = |l: f64, r: f64| 0.5 * (a2(l) + a2(r)) - (a1(r) - a1(l)) / (r - l);
        let l2 = br(0.0, 0.25) + br(0.25, 0.75) + br(0.75, 1.0) - 0.5 * (a2(0.0) + a2(1.0));
        let l3 = 0.5 * a2(0.25) + 0.5 * a2(0.75);
        assert_eq!(r.l1, 0.0);
        assert!((r.l2 - l2).abs() < 1e-13 && (r.l3 - l3).abs() < 1e-15);
        assert!((r.total - (l2 + 2.0 * l3)).abs() < 1e-13);
    }

    fn separated_state(seed: u64, m: usize) -> DiffusionState {
        let mut rng = RngStream::new(seed, 5).rng();
        let mut v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        v.sort_by(f64::total_cmp);
        DiffusionState::new(GridFunction::new(v, Domain::Interval).unwrap()).unwrap()
    }

    #[test]
    fn finite_generator_equals_half_generator_when_alpha_prime_is_in_span() {
        // with Φ invertible, a·∇⟨α,μ⟩ is the constant coefficient vector of α′,
        // the mobility divergence cancels, and the drift of ⟨α,μ⟩ is ½V_{α′} = ½𝕃
        for seed in 0..10 {
            let st = separated_state(seed, 40);
            let sk = st.skeleton();
            for n in [4, 8] {
                let b = BasisFamily::sine(n).unwrap();
                let coeffs = step_coefficients(&sk, &b, 1.3, Some(1e-13)).unwrap();
                assert!(coeffs.mobility.min_eigenvalue > 1e-3);
                for k in 1..=n {
                    let alpha = TestFn::CosPi(k as f64);
                    let exact = 0.5 * generator_apply(&CylinderFunction::moment(alpha), &st.measure(), 1.3).unwrap().total;
                    let fin = finite_generator(&alpha, &coeffs);
                    assert!((fin - exact).abs() < 1e-8 * (1.0 + exact.abs()), "seed {seed} n {n} k {k}: {fin} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn quadratic_variation_is_exact_in_span() {
        let b = BasisFamily::sine(8).unwrap();
        for seed in 0..10 {
            let st = random_state(seed, 1.0, 128);
            let sk = st.skeleton();
            let coeffs = step_coefficients(&sk, &b, 1.0, None).unwrap();
            let alpha = TestFn::CosPi(3.0);
            let qv: f64 = (0..b.len()).map(|i| {
                let l: f64 = (0..sk.vals.len()).map(|x| sk.lens[x] * alpha.deriv(sk.vals[x]) * coeffs.noise[(x, i)]).sum();
                l * l
            }).sum();
            let exact = sk.integrate(|y| alpha.deriv(y).powi(2));
            assert!((qv / exact - 1.0).abs() < 1e-3, "{qv} vs {exact}");
        }
    }

    #[test]
    fn zero_basis_leaves_state_unchanged() {
        let b = BasisFamily::new(vec![Arc::new(Zero)]).unwrap();
        let mut st = random_state(1, 1.0, 32);
        let before = st.values.clone();
        let cfg = WdStepConfig { beta: 1.0, dt: 1e-3, lambda: Some(1.0) };
        for _ in 0..10 {
            wd_step(&mut st, &b, &cfg, &[0.3]).unwrap();
        }
        assert_eq!(st.values, before);
    }

    #[test]
    fn single_mode_by_hand() {
        let phi1: FieldRef = Arc::new(Trig::sin(1.0 / PI, PI));
        let b = BasisFamily::new(vec![phi1.clone()]).unwrap();
        let st = random_state(4, 1.0, 16);
        let sk = st.skeleton();
        let lambda = 1e-3;
        let coeffs = step_coefficients(&sk, &b, 1.0, Some(lambda)).unwrap();
        let p = |y: f64| phi1.value(y);
        let big_phi: f64 = sk.vals.iter().zip(&sk.lens).map(|(&y, &w)| w * p(y) * p(y)).sum();
        let a = 1.0 / (big_phi + lambda);
        let v = drift_skeleton(&*phi1, &sk, 1.0).total;
        let bb: f64 = sk.vals.iter().zip(&sk.lens).map(|(&y, &w)| w * 2.0 * p(y) * phi1.deriv(y) * p(y)).sum();
        for (x, &y) in sk.vals.iter().enumerate() {
            let expect = 0.5 * (a * p(y) * (phi1.deriv(y) + v) - a * a * bb * p(y));
            assert!((coeffs.drift[x] - expect).abs() < 1e-12, "{} vs {expect}", coeffs.drift[x]);
            assert!((coeffs.noise[(x, 0)] - a.sqrt() * p(y)).abs() < 1e-12);
        }
        let _ = Polynomial::quadratic_bump();
    }

    #[test]
    fn ties_move_together_and_order_is_kept() {
        let b = BasisFamily::sine(8).unwrap();
        let mut st = random_state(7, 1.0, 64);
        let cfg = WdStepConfig { beta: 1.0, dt: 1e-4, lambda: None };
        let mut rng = RngStream::new(8, 0).rng();
        let runs = st.skeleton().vals.len();
        for _ in 0..100 {
            let dw: Vec<f64> = (0..8).map(|_| 1e-2 * rng.sample::<f64, _>(StandardNormal)).collect();
            wd_step(&mut st, &b, &cfg, &dw).unwrap();
        }
        assert!(st.skeleton().vals.len() <= runs);
        assert!(st.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(st.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degenerate_alpha_gives_zero_martingale() {
        let mu = random_state(1, 1.0, 16).measure();
        let mut t = MartingaleTracker::new(TestFn::Monomial(0), 1.0, 1e-3, 5, &mu).unwrap();
        for s in 0..20 {
            t.observe(&random_state(s, 1.0, 16).measure());
        }
        let r = t.finish();
        assert_eq!((r.m_final, r.qv_realized, r.qv_expected), (0.0, 0.0, 0.0));
        assert!(MartingaleTracker::new(TestFn::Monomial(2), 1.0, 1e-3, 5, &mu).is_err());
    }

    #[test]
    fn structural_identities_hold_on_random_states() {
        let r = structural_identities(300, 16, 11).unwrap();
        assert!(r.pass(), "{r:?}");
    }

    #[test]
    fn discretized_start_has_the_right_mean_variance() {
        let m = 128;
        for beta in [1.0, 5.0] {
            let xs = replicate(5, 0, 20_000, |r, _| measure_statistics(&DiffusionState::entropic(BetaParam::new(beta).unwrap(), m, r).measure())[0]);
            let s = Summary::of(&xs);
            let var_se = Summary::var_se(&xs);
            let exact = mean_variance_grid(beta, m);
            assert!((s.mean - 0.5).abs() < 4.0 * s.se);
            assert!((s.var - exact).abs() < 4.0 * var_se, "β {beta}: {} vs {exact}", s.var);
            assert!((exact - mean_variance(beta)).abs() < 1e-4);
        }
    }

    #[test]
    fn small_experiment_runs_and_starts_stationary() {
        let exp = WdExperiment { paths: 40, horizon: 0.005, grid: 32, n_basis: 6, ..Default::default() };
        let r = run_experiment(&exp).unwrap();
        assert_eq!(r.martingales.len(), 3);
        assert!(r.martingales.iter().all(|m| m.qv_ratio.is_finite()));
        let zero = WdExperiment { horizon: 0.0, ..exp };
        let r0 = run_experiment(&zero).unwrap();
        for row in &r0.stationarity {
            assert_eq!(row.initial_vs_reference, row.terminal_vs_reference);
        }
    }
}

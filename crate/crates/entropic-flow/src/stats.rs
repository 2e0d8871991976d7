//! Small statistical toolkit: summaries, z-scores, Kolmogorov–Smirnov tests,
//! and a heteroskedasticity-robust two-parameter regression.

use crate::scalar::KahanSum;
use serde::Serialize;

/// Mean, variance and standard error of a sample; compensated sums, so the
/// result does not depend on how replicates were scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub se: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, var: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().copied().collect::<KahanSum<f64>>().value() / n as f64;
        let ss = xs.iter().map(|&x| (x - mean) * (x - mean)).collect::<KahanSum<f64>>().value();
        let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        Self { n, mean, var, se: (var / n as f64).sqrt() }
    }

    /// Standard error of the sample variance, `√((m₄ − s⁴(n−3)/(n−1))/n)`.
    pub fn var_se(xs: &[f64]) -> f64 {
        let s = Self::of(xs);
        let n = s.n as f64;
        let m4 = xs.iter().map(|&x| (x - s.mean).powi(4)).collect::<KahanSum<f64>>().value() / n;
        ((m4 - s.var * s.var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }
}

/// `(a − b)/√(se_a² + se_b²)`; zero when the difference and the standard
/// errors all vanish, infinite when the difference is nonzero with no noise.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Monte Carlo comparison of two expectations estimated on the same draws.
///
/// `z` is the paired statistic (mean of per-draw differences over its
/// standard error), which is the valid one when both sides share samples;
/// `z_unpaired` treats the two estimates as independent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McComparison {
    pub n: usize,
    pub estimate_lhs: f64,
    pub estimate_rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    pub z: f64,
    pub z_unpaired: f64,
    pub z_max: f64,
    pub pass: bool,
}

impl McComparison {
    pub fn from_samples(lhs: &[f64], rhs: &[f64], z_max: f64) -> Self {
        assert_eq!(lhs.len(), rhs.len());
        let (a, b) = (Summary::of(lhs), Summary::of(rhs));
        let diffs: Vec<f64> = lhs.iter().zip(rhs).map(|(x, y)| x - y).collect();
        let d = Summary::of(&diffs);
        let z = z_score(d.mean, d.se);
        McComparison {
            n: lhs.len(),
            estimate_lhs: a.mean,
            estimate_rhs: b.mean,
            se_lhs: a.se,
            se_rhs: b.se,
            z,
            z_unpaired: z_score(a.mean - b.mean, combined_se(a.se, b.se)),
            z_max,
            pass: z.abs() < z_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Complementary Kolmogorov distribution `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series converges fast for small λ.
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..20).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample test of `xs` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> KsResult {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult { statistic: d, p_value: ks_p(d, n), n: v.len() }
}

/// Two-sample test; ties are stepped through together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    KsResult { statistic: d, p_value: ks_p(d, n * m / (n + m)), n: x.len() + y.len() }
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        statrs::function::beta::beta_reg(a, b, x)
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Ordinary least squares of `y` on `(1, x)` with White (HC0) standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regression {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
}

impl Regression {
    pub fn z_intercept(&self) -> f64 {
        z_score(self.intercept, self.se_intercept)
    }
    pub fn z_slope(&self) -> f64 {
        z_score(self.slope, self.se_slope)
    }
}

pub fn regress_robust(y: &[f64], x: &[f64]) -> Regression {
    let n = y.len() as f64;
    let mx = x.iter().copied().collect::<KahanSum<f64>>().value() / n;
    let my = y.iter().copied().collect::<KahanSum<f64>>().value() / n;
    let sxx = x.iter().map(|&v| (v - mx) * (v - mx)).collect::<KahanSum<f64>>().value();
    let sxy = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).collect::<KahanSum<f64>>().value();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    // Sandwich (XᵀX)⁻¹ XᵀΩX (XᵀX)⁻¹ with Ω = diag(e²), in centred coordinates.
    let mut s_cc = KahanSum::new();
    let mut s_cx = KahanSum::new();
    let mut s_xx = KahanSum::new();
    for (&a, &b) in x.iter().zip(y) {
        let e = b - intercept - slope * a;
        let c = a - mx;
        s_cc.add(e * e);
        s_cx.add(e * e * c);
        s_xx.add(e * e * c * c);
    }
    let var_slope = if sxx > 0.0 { s_xx.value() / (sxx * sxx) } else { 0.0 };
    // intercept = ȳ_c − slope·mx where ȳ_c is the centred-model constant
    let var_c = s_cc.value() / (n * n);
    let cov_c_slope = if sxx > 0.0 { s_cx.value() / (n * sxx) } else { 0.0 };
    let var_intercept = var_c - 2.0 * mx * cov_c_slope + mx * mx * var_slope;
    Regression {
        intercept,
        slope,
        se_intercept: var_intercept.max(0.0).sqrt(),
        se_slope: var_slope.max(0.0).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kolmogorov_reference_values() {
        // Q(λ) reference points of the Kolmogorov distribution.
        assert!((kolmogorov_q(1.0) - 0.269_999_671_677_355_2).abs() < 1e-9);
        assert!((kolmogorov_q(1.358_098_639_322_550_7) - 0.05).abs() < 1e-9);
        assert!((kolmogorov_q(1.627_623_611_518_950_4) - 0.01).abs() < 1e-9);
        assert!((kolmogorov_q(0.5) - 0.963_945_243_664_875_1).abs() < 1e-9);
        // both branches agree at the switch point
        let a = kolmogorov_q(1.18 - 1e-12);
        let b = kolmogorov_q(1.18 + 1e-12);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_one_sample(&u, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
        let shifted: Vec<f64> = u.iter().map(|x| (x + 0.05).min(1.0)).collect();
        assert!(ks_one_sample(&shifted, |x| x.clamp(0.0, 1.0)).p_value < 1e-4);
        let v: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&u, &v).p_value > 0.01);
        assert!(ks_two_sample(&u, &shifted).p_value < 1e-3);
        let same = ks_two_sample(&u, &u);
        assert_eq!(same.statistic, 0.0);
        assert_eq!(same.p_value, 1.0);
    }

    #[test]
    fn summary_and_variance_error() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.var - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn robust_regression_recovers_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|&a| 0.5 + 2.0 * a + (rng.random::<f64>() - 0.5) * (1.0 + a)).collect();
        let r = regress_robust(&y, &x);
        assert!(((r.intercept - 0.5) / r.se_intercept).abs() < 4.0);
        assert!(((r.slope - 2.0) / r.se_slope).abs() < 4.0);
        // homoskedastic sanity: SE close to the classical one
        let y2: Vec<f64> = x.iter().map(|_| 1.0 + (rng.random::<f64>() - 0.5)).collect();
        let r2 = regress_robust(&y2, &x);
        let classical = (1.0f64 / 12.0 / (20_000.0 / 12.0)).sqrt();
        assert!((r2.se_slope / classical - 1.0).abs() < 0.05);
    }

    #[test]
    fn beta_cdf_symmetric() {
        assert!((beta_cdf(0.5, 2.0, 2.0) - 0.5).abs() < 1e-14);
        assert!((beta_cdf(0.3, 1.0, 1.0) - 0.3).abs() < 1e-14);
    }
}

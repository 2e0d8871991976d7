//! Monotone cadlag maps and the measures they push Lebesgue measure onto.
//!
//! | type | represents |
//! |------|------------|
//! | [`JumpFunction`] | pure-jump nondecreasing map of `[0,1]`, `g(1) := 1` |
//! | [`CirclePath`] | a jump function shifted on S¹ (carried as a lift) |
//! | [`GridFunction`] | piecewise-constant map on `M` equal cells |
//! | [`DiscreteMeasure`] | `g_*Leb` for a jump function |
//!
//! All integrals of piecewise-constant integrands are exact sums over the
//! constancy pieces exposed by [`Skeleton`].

use crate::error::{Error, Result};
use crate::maps::SmoothMap;
use crate::scalar::{KahanSum, Real};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Interval,
    Circle,
}

/// Anything with a piecewise-constant skeleton.
pub trait MonotonePath<T: Real> {
    fn skeleton(&self) -> Skeleton<T>;
    /// Mass of jumps dropped by truncation.
    fn tail_mass(&self) -> T {
        T::zero()
    }
}

impl<T: Real> MonotonePath<T> for JumpFunction<T> {
    fn skeleton(&self) -> Skeleton<T> {
        JumpFunction::skeleton(self)
    }
    fn tail_mass(&self) -> T {
        self.tail_mass
    }
}

impl<T: Real> MonotonePath<T> for CirclePath<T> {
    fn skeleton(&self) -> Skeleton<T> {
        CirclePath::skeleton(self)
    }
    fn tail_mass(&self) -> T {
        self.path.tail_mass
    }
}

impl<T: Real> MonotonePath<T> for GridFunction<T> {
    fn skeleton(&self) -> Skeleton<T> {
        GridFunction::skeleton(self)
    }
}

impl<T: Real> MonotonePath<T> for Skeleton<T> {
    fn skeleton(&self) -> Skeleton<T> {
        self.clone()
    }
}

/// Pure-jump nondecreasing right-continuous map `[0,1] → [0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpFunction<T> {
    base: T,
    locations: Vec<T>,
    heights: Vec<T>,
    levels: Vec<T>,
    tail_mass: T,
}

impl<T: Real> JumpFunction<T> {
    /// Build from `base` and `(location, height)` pairs with strictly
    /// increasing locations in `(0,1)` and positive heights.
    pub fn new(base: T, jumps: Vec<(T, T)>) -> Result<Self> {
        let (locations, heights): (Vec<T>, Vec<T>) = jumps.into_iter().unzip();
        Self::from_parts(base, locations, heights)
    }

    fn from_parts(base: T, locations: Vec<T>, heights: Vec<T>) -> Result<Self> {
        let tol = T::structural_tol();
        if !(base >= T::zero() && base <= T::one()) {
            return Err(Error::InvalidPath(format!("base {base} outside [0,1]")));
        }
        let mut prev = T::zero();
        for (k, (&a, &h)) in locations.iter().zip(&heights).enumerate() {
            if !(a > prev || (k == 0 && a > T::zero())) || !(a < T::one()) {
                return Err(Error::InvalidPath(format!("jump location {a} out of order or outside (0,1)")));
            }
            if !(h > T::zero()) || !h.is_finite() {
                return Err(Error::InvalidPath(format!("jump height {h} at {a} is not positive")));
            }
            prev = a;
        }
        let mut acc = KahanSum::new();
        acc.add(base);
        let levels: Vec<T> = heights
            .iter()
            .map(|&h| {
                acc.add(h);
                acc.value()
            })
            .collect();
        let top = levels.last().copied().unwrap_or(base);
        if top > T::one() + tol {
            return Err(Error::InvalidPath(format!("total mass {top} exceeds 1")));
        }
        let levels = levels.into_iter().map(|v| v.min(T::one())).collect();
        Ok(Self { base, locations, heights, levels, tail_mass: T::zero() })
    }

    /// Build from unsorted atoms; coincident locations are merged and atoms
    /// at location 0 are folded into the base.
    pub fn from_atoms(base: T, mut atoms: Vec<(T, T)>) -> Result<Self> {
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite locations"));
        let mut base = base;
        let mut locations: Vec<T> = Vec::with_capacity(atoms.len());
        let mut heights: Vec<T> = Vec::with_capacity(atoms.len());
        for (a, h) in atoms {
            if !(h > T::zero()) {
                continue;
            }
            if a <= T::zero() {
                base += h;
            } else if locations.last() == Some(&a) {
                *heights.last_mut().expect("nonempty") += h;
            } else {
                locations.push(a);
                heights.push(h);
            }
        }
        Self::from_parts(base.min(T::one()), locations, heights)
    }

    /// `g ≡ c` on `[0,1)`.
    pub fn constant(c: T) -> Result<Self> {
        Self::from_parts(c, Vec::new(), Vec::new())
    }

    /// Record the mass of jumps dropped by truncation (kept for error bars).
    pub fn with_tail_mass(mut self, m: T) -> Self {
        self.tail_mass = m;
        self
    }

    pub fn base(&self) -> T {
        self.base
    }
    pub fn tail_mass(&self) -> T {
        self.tail_mass
    }
    pub fn len(&self) -> usize {
        self.locations.len()
    }
    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
    pub fn locations(&self) -> &[T] {
        &self.locations
    }
    pub fn heights(&self) -> &[T] {
        &self.heights
    }
    /// Value after each jump.
    pub fn levels(&self) -> &[T] {
        &self.levels
    }
    pub fn jumps(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.locations.iter().copied().zip(self.heights.iter().copied())
    }

    /// `g(1−)`.
    pub fn top(&self) -> T {
        self.levels.last().copied().unwrap_or(self.base)
    }

    /// `g(1-) - g(0)`: the total height of the jumps.
    pub fn jump_mass(&self) -> T {
        self.top() - self.base
    }

    /// Right-continuous evaluation with the closure convention `g(1) = 1`.
    pub fn eval(&self, t: T) -> Result<T> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::Domain(format!("t = {t} outside [0,1]")));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: T) -> T {
        if t >= T::one() {
            return T::one();
        }
        let k = self.locations.partition_point(|&a| a <= t);
        if k == 0 {
            self.base
        } else {
            self.levels[k - 1]
        }
    }

    /// Constancy pieces `[start, start + len)` with their values.
    pub fn skeleton(&self) -> Skeleton<T> {
        let n = self.locations.len();
        let mut starts = Vec::with_capacity(n + 1);
        let mut lens = Vec::with_capacity(n + 1);
        let mut vals = Vec::with_capacity(n + 1);
        let mut s = T::zero();
        for k in 0..=n {
            let e = if k < n { self.locations[k] } else { T::one() };
            starts.push(s);
            lens.push(e - s);
            vals.push(if k == 0 { self.base } else { self.levels[k - 1] });
            s = e;
        }
        Skeleton { domain: Domain::Interval, starts, lens, vals, rises: self.heights.clone() }
    }

    /// `g⁻¹(t) = inf{s : g(s) > t}`; flats become jumps and jumps flats.
    pub fn generalized_inverse(&self) -> JumpFunction<T> {
        let n = self.len();
        let b = self.base;
        let top = self.top();
        let mut locs = Vec::with_capacity(n + 2);
        let mut hs = Vec::with_capacity(n + 2);
        let inv_base;
        if n == 0 {
            if b > T::zero() {
                inv_base = T::zero();
                if b < T::one() {
                    locs.push(b);
                    hs.push(T::one());
                }
            } else {
                inv_base = T::one();
            }
        } else {
            if b > T::zero() {
                inv_base = T::zero();
                locs.push(b);
                hs.push(self.locations[0]);
            } else {
                inv_base = self.locations[0];
            }
            for k in 0..n - 1 {
                locs.push(self.levels[k]);
                hs.push(self.locations[k + 1] - self.locations[k]);
            }
            // a top within rounding of 1 closes without a final jump
            if top < T::one() - T::structural_tol() {
                locs.push(top);
                hs.push(T::one() - self.locations[n - 1]);
            }
        }
        Self::from_parts(inv_base, locs, hs).expect("inverse of a valid jump function is valid")
    }

    /// `g_*Leb`: one atom per constancy value, weighted by its Lebesgue length.
    /// The closure point `t = 1` carries no mass, so any valid path is accepted.
    pub fn pushforward(&self) -> DiscreteMeasure<T> {
        let sk = self.skeleton();
        DiscreteMeasure { atoms: sk.vals, weights: sk.lens }
    }

    /// Keep the `n` largest jumps (ties by location), discarding the rest.
    pub fn keep_largest(&self, n: usize) -> JumpFunction<T> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| self.heights[j].partial_cmp(&self.heights[i]).expect("finite"));
        idx.truncate(n);
        idx.sort_unstable();
        let dropped = self.jump_mass() - idx.iter().map(|&i| self.heights[i]).fold(T::zero(), |a, b| a + b);
        let jumps = idx.into_iter().map(|i| (self.locations[i], self.heights[i])).collect();
        Self::new(self.base, jumps).expect("subset of a valid path").with_tail_mass(dropped.max(T::zero()))
    }

    /// Entropy `-∫ log g′` is `+∞` for every pure-jump map.
    pub fn entropy(&self) -> T {
        T::infinity()
    }

    pub fn cast<U: Real>(&self) -> JumpFunction<U> {
        let c = |x: T| U::c(x.to_f());
        let jumps = self.jumps().map(|(a, h)| (c(a), c(h))).collect();
        JumpFunction::new(c(self.base), jumps)
            .expect("cast preserves validity")
            .with_tail_mass(c(self.tail_mass))
    }
}

/// A jump function on S¹: values `shift + path(t)` taken modulo 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CirclePath<T> {
    shift: T,
    path: JumpFunction<T>,
}

impl<T: Real> CirclePath<T> {
    pub fn new(shift: T, path: JumpFunction<T>) -> Self {
        Self { shift: frac(shift), path }
    }
    pub fn shift(&self) -> T {
        self.shift
    }
    pub fn path(&self) -> &JumpFunction<T> {
        &self.path
    }

    /// Lifted value `shift + path(t)` (not reduced).
    pub fn lift(&self, t: T) -> Result<T> {
        Ok(self.shift + self.path.eval(t)?)
    }

    /// Value on S¹ = `[0,1)`.
    pub fn eval(&self, t: T) -> Result<T> {
        Ok(frac(self.lift(t)?))
    }

    /// Shift every value by `x` (mod 1).
    pub fn shifted(&self, x: T) -> Self {
        Self { shift: frac(self.shift + x), path: self.path.clone() }
    }

    pub fn skeleton(&self) -> Skeleton<T> {
        let mut sk = self.path.skeleton();
        sk.domain = Domain::Circle;
        for v in &mut sk.vals {
            *v += self.shift;
        }
        sk
    }
}

/// `x mod 1` in `[0,1)`.
pub fn frac<T: Real>(x: T) -> T {
    let f = x - x.floor();
    if f >= T::one() {
        T::zero()
    } else {
        f
    }
}

/// Shift all values of `g` by `x` on the circle.
pub fn circle_shift<T: Real>(g: &JumpFunction<T>, x: T) -> Result<CirclePath<T>> {
    if !(x >= T::zero() && x < T::one()) {
        return Err(Error::Domain(format!("shift {x} outside [0,1)")));
    }
    Ok(CirclePath::new(x, g.clone()))
}

/// Nondecreasing values `v_1 ≤ … ≤ v_M` on the cells `[(j-1)/M, j/M)`.
///
/// On the circle the values are a lift: `v_M ≤ v_1 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    values: Vec<T>,
    domain: Domain,
}

impl<T: Real> GridFunction<T> {
    pub fn new(values: Vec<T>, domain: Domain) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidPath("empty grid".into()));
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidPath("grid values are not nondecreasing".into()));
        }
        let tol = T::structural_tol();
        let (first, last) = (values[0], values[values.len() - 1]);
        match domain {
            Domain::Interval => {
                if first < -tol || last > T::one() + tol {
                    return Err(Error::InvalidPath("grid values outside [0,1]".into()));
                }
            }
            Domain::Circle => {
                if last > first + T::one() + tol {
                    return Err(Error::InvalidPath("circle lift spans more than one turn".into()));
                }
            }
        }
        Ok(Self { values, domain })
    }

    /// Cell values of the identity map, sampled at cell midpoints.
    pub fn identity(m: usize, domain: Domain) -> Self {
        let values = (0..m).map(|j| T::c((j as f64 + 0.5) / m as f64)).collect();
        Self { values, domain }
    }

    /// Values of `g` at the cell midpoints.
    pub fn sample(g: &JumpFunction<T>, m: usize) -> Self {
        let values = (0..m).map(|j| g.eval_unchecked(T::c((j as f64 + 0.5) / m as f64))).collect();
        Self { values, domain: Domain::Interval }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn into_values(self) -> Vec<T> {
        self.values
    }
    pub fn domain(&self) -> Domain {
        self.domain
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pieces of the piecewise-constant lift; equal neighbouring cells are
    /// merged, so flat stretches produce no jump.
    pub fn skeleton(&self) -> Skeleton<T> {
        let m = self.values.len();
        let w = T::one() / T::c(m as f64);
        let mut starts = Vec::new();
        let mut lens = Vec::new();
        let mut vals: Vec<T> = Vec::new();
        let mut rises = Vec::new();
        for (j, &v) in self.values.iter().enumerate() {
            match vals.last() {
                Some(&last) if v == last => *lens.last_mut().expect("nonempty") += w,
                prev => {
                    if let Some(&p) = prev {
                        rises.push(v - p);
                    }
                    starts.push(T::c(j as f64) * w);
                    lens.push(w);
                    vals.push(v);
                }
            }
        }
        Skeleton { domain: self.domain, starts, lens, vals, rises }
    }

    /// `(1/M) Σ δ_{v_j}` with coincident values merged.
    pub fn pushforward(&self) -> DiscreteMeasure<T> {
        let sk = self.skeleton();
        let (atoms, weights) = match self.domain {
            Domain::Interval => (sk.vals, sk.lens),
            Domain::Circle => {
                let mut pairs: Vec<(T, T)> = sk.vals.iter().map(|&v| frac(v)).zip(sk.lens).collect();
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
                merge_atoms(pairs)
            }
        };
        DiscreteMeasure { atoms, weights }
    }

    /// Finite-difference entropy `-Σ Δt · log(Δg/Δt)`; `+∞` on any flat cell.
    pub fn entropy(&self) -> T {
        // values sit at cell midpoints: on the interval the outer pieces are half cells
        let m = self.values.len();
        let w = T::one() / T::c(m as f64);
        let half = w / T::c(2.0);
        let v = &self.values;
        let mut pieces: Vec<(T, T)> = Vec::with_capacity(m + 1);
        match self.domain {
            Domain::Interval => {
                pieces.push((v[0], half));
                pieces.extend(v.windows(2).map(|p| (p[1] - p[0], w)));
                pieces.push((T::one() - v[m - 1], half));
            }
            Domain::Circle => {
                pieces.extend(v.windows(2).map(|p| (p[1] - p[0], w)));
                pieces.push((v[0] + T::one() - v[m - 1], w));
            }
        }
        let mut acc = KahanSum::new();
        for (d, len) in pieces {
            if !(d > T::zero()) {
                return T::infinity();
            }
            acc.add(-len * (d / len).ln());
        }
        acc.value()
    }
}

fn merge_atoms<T: Real>(pairs: Vec<(T, T)>) -> (Vec<T>, Vec<T>) {
    let mut atoms: Vec<T> = Vec::with_capacity(pairs.len());
    let mut weights: Vec<T> = Vec::with_capacity(pairs.len());
    for (a, w) in pairs {
        if atoms.last() == Some(&a) {
            *weights.last_mut().expect("nonempty") += w;
        } else {
            atoms.push(a);
            weights.push(w);
        }
    }
    (atoms, weights)
}

/// Constancy pieces of a monotone path, in `t`-order.
///
/// `vals` are lifted on the circle. `rises[i] = vals[i+1] - vals[i]` is taken
/// from the stored jump heights where available, so tiny jumps stay exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T> {
    pub domain: Domain,
    pub starts: Vec<T>,
    pub lens: Vec<T>,
    pub vals: Vec<T>,
    pub rises: Vec<T>,
}

impl<T: Real> Skeleton<T> {
    /// Interior jumps as `(left value, height)`.
    pub fn interior_jumps(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.vals.iter().copied().zip(self.rises.iter().copied())
    }

    /// Jumps created by the boundary: on the interval the gaps `]0, g(0)[`
    /// and `]g(1−), 1[`; on the circle the wrap from `g(1−)` to `g(0) + 1`.
    pub fn boundary_jumps(&self) -> Vec<(T, T)> {
        let first = self.vals[0];
        let last = self.vals[self.vals.len() - 1];
        let mut out = Vec::with_capacity(2);
        match self.domain {
            Domain::Interval => {
                if first > T::zero() {
                    out.push((T::zero(), first));
                }
                if last < T::one() {
                    out.push((last, T::one() - last));
                }
            }
            Domain::Circle => {
                let d = first + T::one() - last;
                if d > T::zero() {
                    out.push((last, d));
                }
            }
        }
        out
    }

    /// `∫₀¹ f(g(t)) dt`, exact.
    pub fn integrate<F: Fn(T) -> T>(&self, f: F) -> T {
        let mut acc = KahanSum::new();
        for (&l, &v) in self.lens.iter().zip(&self.vals) {
            acc.add(l * f(v));
        }
        acc.value()
    }

    /// Value at `t ∈ [0,1)` (lifted on the circle).
    pub fn eval(&self, t: T) -> T {
        let k = self.starts.partition_point(|&s| s <= t);
        self.vals[k.max(1) - 1]
    }
}

/// Finitely many atoms with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    atoms: Vec<T>,
    weights: Vec<T>,
}

/// A maximal open interval `]left, right[` of zero mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap<T> {
    pub left: T,
    pub right: T,
}

impl<T: Real> Gap<T> {
    pub fn len(&self) -> T {
        self.right - self.left
    }
}

impl<T: Real> DiscreteMeasure<T> {
    pub fn new(atoms: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!("{} atoms vs {} weights", atoms.len(), weights.len())));
        }
        if atoms.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMeasure("atoms must be strictly increasing".into()));
        }
        if atoms[0] < T::zero() || atoms[atoms.len() - 1] > T::one() {
            return Err(Error::InvalidMeasure("atoms outside [0,1]".into()));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidMeasure("weights must be positive".into()));
        }
        let total: T = weights.iter().copied().collect::<KahanSum<T>>().value();
        if (total - T::one()).abs() > T::structural_tol() {
            return Err(Error::InvalidMeasure(format!("total weight {total} != 1")));
        }
        Ok(Self { atoms, weights })
    }

    /// Sort and merge coincident atoms.
    pub fn from_unsorted(pairs: Vec<(T, T)>) -> Result<Self> {
        let mut pairs = pairs;
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let (atoms, weights) = merge_atoms(pairs);
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `⟨f, μ⟩`.
    pub fn integrate<F: Fn(T) -> T>(&self, f: F) -> T {
        let mut acc = KahanSum::new();
        for (&a, &w) in self.atoms.iter().zip(&self.weights) {
            acc.add(w * f(a));
        }
        acc.value()
    }

    /// Quantile function `g_μ(t) = inf{s : μ[0,s] > t}`.
    pub fn inverse_distribution(&self) -> JumpFunction<T> {
        let n = self.atoms.len();
        let mut acc = KahanSum::new();
        let mut jumps = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n - 1 {
            acc.add(self.weights[i]);
            jumps.push((acc.value(), self.atoms[i + 1] - self.atoms[i]));
        }
        JumpFunction::new(self.atoms[0], jumps).expect("quantile function of a valid measure")
    }

    /// Maximal zero-mass open intervals. On the interval the boundary gaps
    /// `]0, first[` and `]last, 1[` are included when nonempty; on the circle
    /// the segment from the last atom around to the first is a single gap
    /// (its right end is reported lifted by one turn).
    pub fn gaps(&self, domain: Domain) -> Vec<Gap<T>> {
        let n = self.atoms.len();
        let mut out = Vec::with_capacity(n + 1);
        if domain == Domain::Interval && self.atoms[0] > T::zero() {
            out.push(Gap { left: T::zero(), right: self.atoms[0] });
        }
        for w in self.atoms.windows(2) {
            out.push(Gap { left: w[0], right: w[1] });
        }
        match domain {
            Domain::Interval => {
                if self.atoms[n - 1] < T::one() {
                    out.push(Gap { left: self.atoms[n - 1], right: T::one() });
                }
            }
            Domain::Circle => out.push(Gap { left: self.atoms[n - 1], right: self.atoms[0] + T::one() }),
        }
        out
    }
}

/// Apply `h` to the values of `g`; jump locations are unchanged.
///
/// `h` is assumed validated (see [`crate::maps::validate_map`]); a map that
/// reverses any jump or leaves `[0,1]` is rejected here.
pub fn compose<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, g: &JumpFunction<T>) -> Result<JumpFunction<T>> {
    let base = h.value(g.base);
    let tol = T::structural_tol();
    if base < -tol || base > T::one() + tol {
        return Err(Error::InvalidMap(format!("h(g(0)) = {base} outside [0,1]")));
    }
    let mut prev = g.base;
    let mut jumps = Vec::with_capacity(g.len());
    for (&a, (&dh, &lvl)) in g.locations.iter().zip(g.heights.iter().zip(&g.levels)) {
        let d = h.increment(prev, dh);
        if !(d > T::zero()) {
            return Err(Error::InvalidMap(format!("h is not increasing near {prev}")));
        }
        jumps.push((a, d));
        prev = lvl;
    }
    JumpFunction::new(base.max(T::zero()).min(T::one()), jumps)
        .map_err(|e| Error::InvalidMap(format!("h∘g is not a valid path: {e}")))
        .map(|f| f.with_tail_mass(g.tail_mass))
}

/// Apply a lifted circle map to a circle path.
pub fn compose_circle<T: Real, M: SmoothMap<T> + ?Sized>(h: &M, g: &CirclePath<T>) -> Result<CirclePath<T>> {
    if !h.circle_periodic() {
        return Err(Error::InvalidMap("map is not a circle lift".into()));
    }
    let p = &g.path;
    let b = g.shift + p.base;
    let hb = h.value(b);
    let mut prev = b;
    let mut jumps = Vec::with_capacity(p.len());
    for (&a, (&dh, &lvl)) in p.locations.iter().zip(p.heights.iter().zip(&p.levels)) {
        let d = h.increment(prev, dh);
        if !(d > T::zero()) {
            return Err(Error::InvalidMap(format!("h is not increasing near {prev}")));
        }
        jumps.push((a, d));
        prev = g.shift + lvl;
    }
    let path = JumpFunction::new(T::zero(), jumps)?.with_tail_mass(p.tail_mass);
    Ok(CirclePath::new(hb, path))
}

/// `‖g₁ − g₂‖_{L^p}` for `p ∈ {1, 2}`, exact over the merged partition.
///
/// Between quantile functions with `p = 2` this is the Wasserstein distance.
pub fn distance<T: Real>(g1: &JumpFunction<T>, g2: &JumpFunction<T>, p: u32) -> Result<T> {
    check_p(p)?;
    let (a, b) = (g1.skeleton(), g2.skeleton());
    let (mut i, mut j) = (0, 0);
    let mut s = T::zero();
    let mut acc = KahanSum::new();
    while i < a.vals.len() && j < b.vals.len() {
        let ea = a.starts[i] + a.lens[i];
        let eb = b.starts[j] + b.lens[j];
        let e = ea.min(eb);
        let d = (a.vals[i] - b.vals[j]).abs();
        acc.add((e - s) * if p == 1 { d } else { d * d });
        s = e;
        if ea <= e {
            i += 1;
        }
        if eb <= e {
            j += 1;
        }
    }
    Ok(finish_p(acc.value(), p))
}

/// Grid version of [`distance`]: midpoint sum over equal cells.
pub fn grid_distance<T: Real>(g1: &GridFunction<T>, g2: &GridFunction<T>, p: u32) -> Result<T> {
    check_p(p)?;
    if g1.len() != g2.len() {
        return Err(Error::SizeMismatch(g1.len(), g2.len()));
    }
    let w = T::one() / T::c(g1.len() as f64);
    let mut acc = KahanSum::new();
    for (&x, &y) in g1.values.iter().zip(&g2.values) {
        let d = (x - y).abs();
        acc.add(w * if p == 1 { d } else { d * d });
    }
    Ok(finish_p(acc.value(), p))
}

/// `‖g − id‖_{L^p}`, exact piecewise.
pub fn distance_to_identity<T: Real>(g: &JumpFunction<T>, p: u32) -> Result<T> {
    check_p(p)?;
    let sk = g.skeleton();
    let two = T::c(2.0);
    let three = T::c(3.0);
    let mut acc = KahanSum::new();
    for ((&s, &l), &c) in sk.starts.iter().zip(&sk.lens).zip(&sk.vals) {
        let e = s + l;
        let v = if p == 2 {
            ((c - s).powi(3) - (c - e).powi(3)) / three
        } else if c <= s {
            ((e - c).powi(2) - (s - c).powi(2)) / two
        } else if c >= e {
            ((c - s).powi(2) - (c - e).powi(2)) / two
        } else {
            ((c - s).powi(2) + (e - c).powi(2)) / two
        };
        acc.add(v);
    }
    Ok(finish_p(acc.value(), p))
}

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::Domain(format!("p = {p}; only 1 and 2 are supported")))
    }
}

fn finish_p<T: Real>(v: T, p: u32) -> T {
    if p == 2 {
        v.max(T::zero()).sqrt()
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{Identity, ScalarFn, SinePerturbation};
    use proptest::prelude::*;

    fn jf(base: f64, jumps: &[(f64, f64)]) -> JumpFunction<f64> {
        JumpFunction::new(base, jumps.to_vec()).unwrap()
    }

    #[test]
    fn evaluation_is_right_continuous_with_closure() {
        let g = jf(0.0, &[(0.3, 0.5)]);
        assert_eq!(g.eval(0.2).unwrap(), 0.0);
        assert_eq!(g.eval(0.3).unwrap(), 0.5);
        assert_eq!(g.eval(0.99).unwrap(), 0.5);
        assert_eq!(g.eval(1.0).unwrap(), 1.0);
        assert!(g.eval(1.5).is_err());
        assert!(g.eval(-0.1).is_err());
    }

    #[test]
    fn rejects_bad_representations() {
        assert!(JumpFunction::new(0.0, vec![(0.5, 0.3), (0.4, 0.3)]).is_err());
        assert!(JumpFunction::new(0.0, vec![(0.5, 0.0)]).is_err());
        assert!(JumpFunction::new(0.5, vec![(0.5, 0.6)]).is_err());
        assert!(JumpFunction::new(0.0, vec![(1.0, 0.6)]).is_err());
        assert!(JumpFunction::new(0.0, vec![(0.0, 0.6)]).is_err());
        let g = JumpFunction::from_atoms(0.0, vec![(0.5, 0.25), (0.0, 0.25), (0.5, 0.5)]).unwrap();
        assert_eq!(g.base(), 0.25);
        assert_eq!(g.jumps().collect::<Vec<_>>(), vec![(0.5, 0.75)]);
    }

    #[test]
    fn inverse_of_a_step_is_constant() {
        let g = jf(0.0, &[(0.5, 1.0)]);
        let inv = g.generalized_inverse();
        assert_eq!(inv.base(), 0.5);
        assert!(inv.is_empty());
        assert_eq!(inv.generalized_inverse(), g);
    }

    #[test]
    fn inverse_handles_flats_at_both_ends() {
        let g = jf(0.2, &[(0.4, 0.3), (0.7, 0.1)]);
        let inv = g.generalized_inverse();
        // g⁻¹ = 0 on [0,.2), .4 on [.2,.5), .7 on [.5,.6), 1 on [.6,1)
        for (t, want) in [(0.1, 0.0), (0.2, 0.4), (0.45, 0.4), (0.55, 0.7), (0.65, 1.0)] {
            assert!((inv.eval(t).unwrap() - want).abs() < 1e-15, "g⁻¹({t})");
        }
        let back = inv.generalized_inverse();
        assert!((back.base() - g.base()).abs() < 1e-15);
        for (x, y) in back.jumps().zip(g.jumps()) {
            assert!((x.0 - y.0).abs() < 1e-15 && (x.1 - y.1).abs() < 1e-15);
        }
        assert_eq!(JumpFunction::constant(0.0).unwrap().generalized_inverse().base(), 1.0);
        let c = JumpFunction::constant(0.3).unwrap().generalized_inverse();
        assert_eq!((c.base(), c.jumps().collect::<Vec<_>>()), (0.0, vec![(0.3, 1.0)]));
    }

    #[test]
    fn pushforward_examples() {
        let mu = jf(0.0, &[(0.25, 1.0)]).pushforward();
        assert_eq!(mu.atoms(), &[0.0, 1.0]);
        assert_eq!(mu.weights(), &[0.25, 0.75]);
        let mu = jf(0.0, &[(1.0 / 3.0, 0.5), (2.0 / 3.0, 0.5)]).pushforward();
        assert_eq!(mu.atoms(), &[0.0, 0.5, 1.0]);
        for w in mu.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_distribution_examples() {
        let d0 = DiscreteMeasure::new(vec![0.0], vec![1.0]).unwrap().inverse_distribution();
        assert_eq!((d0.base(), d0.len()), (0.0, 0));
        assert_eq!(d0.eval(1.0).unwrap(), 1.0);
        let mu = DiscreteMeasure::<f64>::new(vec![0.2, 0.7], vec![0.5, 0.5]).unwrap();
        let g = mu.inverse_distribution();
        assert_eq!(g.base(), 0.2);
        let j: Vec<_> = g.jumps().collect();
        assert_eq!(j.len(), 1);
        assert!((j[0].0 - 0.5).abs() < 1e-15 && (j[0].1 - 0.5).abs() < 1e-15);
        assert_eq!(g.pushforward(), mu);
    }

    #[test]
    fn gap_examples() {
        let mu = DiscreteMeasure::new(vec![0.2, 0.7], vec![0.5, 0.5]).unwrap();
        let g: Vec<_> = mu.gaps(Domain::Interval).iter().map(|g| (g.left, g.right)).collect();
        assert_eq!(g, vec![(0.0, 0.2), (0.2, 0.7), (0.7, 1.0)]);
        let mu = DiscreteMeasure::new(vec![0.5], vec![1.0]).unwrap();
        assert_eq!(mu.gaps(Domain::Interval).len(), 2);
        let atoms: Vec<f64> = (0..10).map(|k| k as f64 / 10.0).collect();
        let mu = DiscreteMeasure::new(atoms, vec![0.1; 10]).unwrap();
        let gaps = mu.gaps(Domain::Circle);
        assert_eq!(gaps.len(), 10);
        for g in gaps {
            assert!((g.len() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn distance_examples() {
        let zero = JumpFunction::constant(0.0).unwrap();
        let one = JumpFunction::constant(1.0).unwrap();
        assert_eq!(distance(&zero, &one, 2).unwrap(), 1.0);
        assert!((distance_to_identity(&zero, 2).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((distance_to_identity(&zero, 1).unwrap() - 0.5).abs() < 1e-15);
        let g = jf(0.1, &[(0.3, 0.4), (0.8, 0.2)]);
        assert_eq!(distance(&g, &g, 1).unwrap(), 0.0);
        assert_eq!(distance(&g, &g, 2).unwrap(), 0.0);
        assert!(distance(&g, &g, 3).is_err());
        let a = GridFunction::new(vec![0.1, 0.2], Domain::Interval).unwrap();
        let b = GridFunction::new(vec![0.1, 0.2, 0.3], Domain::Interval).unwrap();
        assert_eq!(grid_distance(&a, &b, 2), Err(Error::SizeMismatch(2, 3)));
    }

    #[test]
    fn distance_to_identity_matches_fine_riemann_sum() {
        let g = jf(0.05, &[(0.2, 0.3), (0.5, 0.1), (0.9, 0.4)]);
        let n = 200_000;
        let (mut l1, mut l2) = (0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            let d = g.eval(t).unwrap() - t;
            l1 += d.abs() / n as f64;
            l2 += d * d / n as f64;
        }
        assert!((distance_to_identity(&g, 1).unwrap() - l1).abs() < 1e-8);
        assert!((distance_to_identity(&g, 2).unwrap() - l2.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn compose_moves_values_not_locations() {
        let g = jf(0.0, &[(0.5, 1.0)]);
        let h = SinePerturbation::new(0.1 * std::f64::consts::PI, 1).unwrap();
        let hg = compose(&h, &g).unwrap();
        assert_eq!(hg.locations(), g.locations());
        assert!(hg.base().abs() < 1e-16 && (hg.top() - 1.0).abs() < 1e-15);
        let g = jf(0.1, &[(0.3, 0.4), (0.8, 0.2)]);
        let hg = compose(&h, &g).unwrap();
        for t in [0.0, 0.4, 0.9] {
            assert!((hg.eval(t).unwrap() - h.value(g.eval(t).unwrap())).abs() < 1e-15);
        }
        assert_eq!(compose(&Identity, &g).unwrap(), g);
    }

    #[test]
    fn circle_shift_round_trip() {
        let g = jf(0.0, &[(0.3, 0.6), (0.6, 0.4)]);
        let c = circle_shift(&g, 0.0).unwrap();
        assert_eq!(c.eval(0.4).unwrap(), g.eval(0.4).unwrap());
        let c = circle_shift(&g, 0.35).unwrap().shifted(0.65);
        for t in [0.0, 0.3, 0.7] {
            let d = (c.eval(t).unwrap() - frac(g.eval(t).unwrap())).abs();
            assert!(d < 1e-15 || (1.0 - d) < 1e-15);
        }
        assert!(circle_shift(&g, 1.0).is_err());
    }

    #[test]
    fn grid_skeleton_merges_ties() {
        let g = GridFunction::new(vec![0.1, 0.1, 0.4, 0.4, 0.4, 0.9], Domain::Interval).unwrap();
        let sk = g.skeleton();
        assert_eq!(sk.vals, vec![0.1, 0.4, 0.9]);
        assert!((sk.lens[0] - 2.0f64 / 6.0).abs() < 1e-15 && (sk.lens[1] - 0.5f64).abs() < 1e-15);
        assert_eq!(sk.boundary_jumps(), vec![(0.0, 0.1), (0.9, 0.09999999999999998)]);
        let mu = g.pushforward();
        assert_eq!(mu.len(), 3);
        assert!(GridFunction::<f64>::identity(64, Domain::Interval).entropy().abs() < 1e-12);
        assert_eq!(g.entropy(), f64::INFINITY);
        assert!(GridFunction::new(vec![0.2, 0.1], Domain::Interval).is_err());
        assert_eq!(jf(0.0, &[(0.5, 1.0)]).entropy(), f64::INFINITY);
    }

    #[test]
    fn f32_paths() {
        let g = JumpFunction::<f32>::new(0.0, vec![(0.25, 0.5), (0.75, 0.5)]).unwrap();
        assert_eq!(g.eval(0.5).unwrap(), 0.5);
        let back = g.pushforward().inverse_distribution();
        assert_eq!(back.len(), 2);
        assert!((distance(&g, &back, 2).unwrap()).abs() < 1e-6);
    }

    prop_compose! {
        fn arb_path()(base in 0.0..0.3f64, raw in prop::collection::vec((0.001..0.999f64, 0.01..1.0f64), 0..12), fill in 0.0..1.0f64)
            -> JumpFunction<f64> {
            let total: f64 = raw.iter().map(|r| r.1).sum::<f64>().max(1e-9);
            let scale = (1.0 - base) * fill / total;
            JumpFunction::from_atoms(base, raw.into_iter().map(|(a, h)| (a, h * scale)).collect()).unwrap()
        }
    }

    fn base_zero_full(g: &JumpFunction<f64>) -> JumpFunction<f64> {
        let m = g.jump_mass().max(1e-9);
        let jumps: Vec<_> = g.jumps().map(|(a, h)| (a, h / m)).collect();
        if jumps.is_empty() {
            JumpFunction::new(0.0, vec![(0.5, 1.0)]).unwrap()
        } else {
            JumpFunction::new(0.0, jumps).unwrap()
        }
    }

    proptest! {
        #[test]
        fn inverse_is_an_involution(g in arb_path()) {
            let back = g.generalized_inverse().generalized_inverse();
            prop_assert!((back.base() - g.base()).abs() < 1e-12);
            prop_assert_eq!(back.len(), g.len());
            for (x, y) in back.jumps().zip(g.jumps()) {
                prop_assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
            }
        }

        #[test]
        fn inversion_preserves_l1(g1 in arb_path(), g2 in arb_path()) {
            let d = distance(&g1, &g2, 1).unwrap();
            let di = distance(&g1.generalized_inverse(), &g2.generalized_inverse(), 1).unwrap();
            prop_assert!((d - di).abs() < 1e-10, "{} vs {}", d, di);
        }

        #[test]
        fn measure_round_trips(g in arb_path()) {
            let mu = g.pushforward();
            let back = mu.inverse_distribution();
            // L¹: an ulp-wide sliver would be amplified by the square root in L²
            prop_assert!(distance(&g, &back, 1).unwrap() < 1e-12);
            let again = back.pushforward();
            prop_assert_eq!(again.len(), mu.len());
            for (a, b) in again.atoms().iter().zip(mu.atoms()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in again.weights().iter().zip(mu.weights()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let g0 = base_zero_full(&g);
            let back0 = g0.pushforward().inverse_distribution();
            prop_assert!((back0.base() - g0.base()).abs() < 1e-12);
            for (x, y) in back0.jumps().zip(g0.jumps()) {
                prop_assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
            }
        }

        #[test]
        fn l2_triangle_inequality(a in arb_path(), b in arb_path(), c in arb_path()) {
            let ab = distance(&a, &b, 2).unwrap();
            let bc = distance(&b, &c, 2).unwrap();
            let ac = distance(&a, &c, 2).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn truncation_converges_in_both_norms(g in arb_path()) {
            let mut prev = (f64::INFINITY, f64::INFINITY);
            for n in 0..=g.len() {
                let gn = g.keep_largest(n);
                let d = (distance(&gn, &g, 1).unwrap(), distance(&gn, &g, 2).unwrap());
                prop_assert!(d.0 <= prev.0 + 1e-12 && d.1 <= prev.1 + 1e-12);
                prev = d;
            }
            prop_assert!(prev.0 < 1e-12 && prev.1 < 1e-12);
        }

        #[test]
        fn outputs_stay_monotone_in_range(g in arb_path()) {
            let h = SinePerturbation::new(0.6, 2).unwrap();
            for f in [g.generalized_inverse(), compose(&h, &g).unwrap(), g.pushforward().inverse_distribution()] {
                let mut prev = f.base();
                prop_assert!((0.0..=1.0).contains(&prev));
                for &l in f.levels() {
                    prop_assert!(l > prev && l <= 1.0);
                    prev = l;
                }
            }
        }
    }
}

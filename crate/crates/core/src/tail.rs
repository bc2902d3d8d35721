//! Parametric infinite tails of the decrement distribution.
//!
//! A tail puts mass `mass` on every `k ≥ start`, spread geometrically or as a
//! power law, and assigns a single stochastic matrix to all of those `k`.

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::matrix::StochasticMatrix;

/// Largest decrement ever returned. Sites are `i64`, and mass the tail puts
/// beyond this value is assigned to it.
pub const MAX_DECREMENT: u64 = 1 << 53;

/// Cached power-law partial sums stop growing at this length; draws beyond it
/// are inverted through the asymptotic expansion of the Hurwitz zeta function.
const POWER_LAW_CACHE_LIMIT: usize = 1 << 20;

/// The cache is also not extended past this quantile of the tail mass.
const POWER_LAW_CACHE_QUANTILE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family", content = "param")]
pub enum TailFamily {
    /// `θ_{start+j} = mass·(1−ratio)·ratioʲ`.
    Geometric(f64),
    /// `θ_k ∝ k^{−exponent}` for `k ≥ start`.
    #[serde(rename = "powerlaw")]
    PowerLaw(f64),
}

#[derive(Debug)]
pub struct TailSpec {
    family: TailFamily,
    start: u64,
    mass: f64,
    matrix: StochasticMatrix,
    /// Power-law normalizer `mass / ζ(α, start)`; unused for geometric tails.
    norm: f64,
    cache: RwLock<Vec<f64>>,
}

impl Clone for TailSpec {
    fn clone(&self) -> Self {
        Self {
            family: self.family,
            start: self.start,
            mass: self.mass,
            matrix: self.matrix.clone(),
            norm: self.norm,
            cache: RwLock::new(self.cache.read().clone()),
        }
    }
}

impl PartialEq for TailSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.start == other.start
            && self.mass == other.mass
            && self.matrix == other.matrix
    }
}

impl TailSpec {
    /// Parameters are not checked here; see [`TailSpec::problems`].
    pub fn new(family: TailFamily, start: u64, mass: f64, matrix: StochasticMatrix) -> Self {
        let norm = match family {
            TailFamily::PowerLaw(alpha) if alpha > 1.0 && start >= 1 => mass / hurwitz_zeta(alpha, start as f64),
            _ => 0.0,
        };
        Self { family, start, mass, matrix, norm, cache: RwLock::new(Vec::new()) }
    }

    pub fn geometric(start: u64, ratio: f64, mass: f64, matrix: StochasticMatrix) -> Self {
        Self::new(TailFamily::Geometric(ratio), start, mass, matrix)
    }

    pub fn power_law(start: u64, exponent: f64, mass: f64, matrix: StochasticMatrix) -> Self {
        Self::new(TailFamily::PowerLaw(exponent), start, mass, matrix)
    }

    pub fn family(&self) -> TailFamily {
        self.family
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn matrix(&self) -> &StochasticMatrix {
        &self.matrix
    }

    /// Parameter problems, as human-readable strings.
    pub(crate) fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.mass > 0.0 && self.mass < 1.0) {
            out.push(format!("tail mass {} not in (0,1)", self.mass));
        }
        if self.start == 0 {
            out.push("tail start must be at least 1".into());
        }
        match self.family {
            TailFamily::Geometric(p) if !(p > 0.0 && p < 1.0) => out.push(format!("geometric ratio {p} not in (0,1)")),
            TailFamily::PowerLaw(a) if !(a > 1.0 && a.is_finite()) => {
                out.push(format!("power-law exponent {a} must exceed 1"))
            }
            _ => {}
        }
        out
    }

    pub(crate) fn rescale(&mut self, factor: f64) {
        self.mass *= factor;
        self.norm *= factor;
        self.cache.get_mut().clear();
    }

    /// `θ_k`; zero below `start`.
    pub fn theta(&self, k: u64) -> f64 {
        if k < self.start {
            return 0.0;
        }
        let j = (k - self.start) as f64;
        match self.family {
            TailFamily::Geometric(p) => self.mass * (1.0 - p) * p.powf(j),
            TailFamily::PowerLaw(a) => self.norm * (k as f64).powf(-a),
        }
    }

    /// `Σ_{n ≥ k} θ_n` for `k ≥ start` (the whole mass below `start`).
    pub fn mass_from(&self, k: u64) -> f64 {
        if k <= self.start {
            return self.mass;
        }
        match self.family {
            TailFamily::Geometric(p) => self.mass * p.powf((k - self.start) as f64),
            TailFamily::PowerLaw(a) => self.norm * hurwitz_zeta(a, k as f64),
        }
    }

    /// Inverse CDF inside the tail: smallest `k ≥ start` whose cumulative tail
    /// mass exceeds `v ∈ [0, mass)`.
    pub fn invert(&self, v: f64) -> u64 {
        match self.family {
            TailFamily::Geometric(p) => self.invert_geometric(p, v),
            TailFamily::PowerLaw(_) => self.invert_power_law(v),
        }
    }

    fn invert_geometric(&self, p: f64, v: f64) -> u64 {
        let left = 1.0 - v / self.mass;
        if left <= 0.0 {
            return MAX_DECREMENT;
        }
        // cumulative through start+j is mass·(1 − p^{j+1})
        let cum = |j: u64| self.mass * (1.0 - p.powf((j + 1) as f64));
        let guess = (left.ln() / p.ln()).floor();
        if !guess.is_finite() || guess >= (MAX_DECREMENT - self.start) as f64 {
            return MAX_DECREMENT;
        }
        let mut j = guess.max(0.0) as u64;
        while cum(j) <= v {
            j += 1;
        }
        while j > 0 && cum(j - 1) > v {
            j -= 1;
        }
        (self.start + j).min(MAX_DECREMENT)
    }

    fn invert_power_law(&self, v: f64) -> u64 {
        if let Some(j) = self.cached_index(v) {
            return self.start + j as u64;
        }
        // Beyond the cache: smallest k with mass_from(k + 1) < mass − v.
        let remaining = self.mass - v;
        if remaining <= 0.0 {
            return MAX_DECREMENT;
        }
        let len = self.cache.read().len() as u64;
        let mut lo = self.start + len.saturating_sub(1);
        let mut hi = lo.max(1);
        while self.mass_from(hi + 1) >= remaining {
            if hi >= MAX_DECREMENT {
                return MAX_DECREMENT;
            }
            lo = hi;
            hi = hi.saturating_mul(2).min(MAX_DECREMENT);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.mass_from(mid + 1) < remaining {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Index into the cumulative cache, growing it as needed.
    fn cached_index(&self, v: f64) -> Option<usize> {
        {
            let cache = self.cache.read();
            if cache.last().is_some_and(|&c| c > v) {
                return Some(cache.partition_point(|&c| c <= v));
            }
            if self.cache_complete(&cache) {
                return None;
            }
        }
        let mut cache = self.cache.write();
        let TailFamily::PowerLaw(alpha) = self.family else { unreachable!("cache is only used by power-law tails") };
        while cache.last().is_none_or(|&c| c <= v) && !self.cache_complete(&cache) {
            let from = cache.len();
            let to = (from.max(1024) * 2).min(POWER_LAW_CACHE_LIMIT);
            let mut acc = cache.last().copied().unwrap_or(0.0);
            for j in from..to {
                acc += self.norm * ((self.start + j as u64) as f64).powf(-alpha);
                cache.push(acc);
            }
        }
        if cache.last().is_some_and(|&c| c > v) {
            Some(cache.partition_point(|&c| c <= v))
        } else {
            None
        }
    }

    fn cache_complete(&self, cache: &[f64]) -> bool {
        cache.len() >= POWER_LAW_CACHE_LIMIT
            || cache.last().is_some_and(|&c| self.mass - c < POWER_LAW_CACHE_QUANTILE * self.mass)
    }
}

/// Hurwitz zeta `ζ(s, a) = Σ_{n≥0} (a+n)^{−s}` for `s > 1`, `a > 0`, by
/// Euler–Maclaurin summation.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    // B_{2j} / (2j)!
    const COEF: [f64; 6] =
        [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0, 1.0 / 47900160.0, -691.0 / 1307674368000.0];
    let shift = (16.0 - a).ceil().max(0.0) as u64;
    let mut sum = 0.0;
    for n in 0..shift {
        sum += (a + n as f64).powf(-s);
    }
    let x = a + shift as f64;
    sum += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // term_j = COEF_j · s(s+1)…(s+2j−2) · x^{−s−2j+1}, j = 1, 2, …
    let mut rising = s;
    let mut xpow = x.powf(-s - 1.0);
    for (j, c) in COEF.iter().enumerate() {
        if j > 0 {
            let base = s + (2 * j - 1) as f64;
            rising *= base * (base + 1.0);
            xpow /= x * x;
        }
        sum += c * rising * xpow;
    }
    sum
}

//! Imitation kernels `p(g | past) = Σ_k θ_k P_(k)(w_{−k}, g)`.
//!
//! A kernel is built either programmatically through [`ImitationKernel::new`]
//! or from a JSON kernel spec document ([`parse_kernel_spec`]). Both paths go
//! through [`validate_kernel`], so every `ImitationKernel` in existence
//! satisfies its invariants; rows and weights are renormalized afterwards.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matrix::{StochasticMatrix, ROW_SUM_TOL};
use crate::tail::{TailFamily, TailSpec};

/// Tolerance on `Σ θ = 1`.
pub const THETA_SUM_TOL: f64 = 1e-9;

/// States are `0..states` internally; they print as `1..=states` unless the
/// kernel carries labels.
pub type State = usize;

/// One finite support point `(k, θ_k, P_(k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportEntry {
    pub k: u64,
    pub theta: f64,
    pub matrix: StochasticMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitationKernel {
    states: usize,
    labels: Option<Vec<String>>,
    support: Vec<SupportEntry>,
    tail: Option<TailSpec>,
    /// Running θ-mass over `support`, used by the inverse CDF.
    cumulative: Vec<f64>,
}

/// Where a matrix sits inside a kernel, for violation messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSlot {
    Support { k: u64 },
    Tail,
}

impl fmt::Display for MatrixSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixSlot::Support { k } => write!(f, "P_({k})"),
            MatrixSlot::Tail => f.write_str("tail matrix"),
        }
    }
}

/// A broken kernel invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoStates,
    LabelCount { labels: usize, states: usize },
    DuplicateLabel { label: String },
    EmptySupport,
    ZeroIndex,
    DuplicateSupport { k: u64 },
    NonPositiveTheta { k: u64, theta: f64 },
    MatrixShape { slot: MatrixSlot, detail: String },
    NegativeEntry { slot: MatrixSlot, row: usize, col: usize, value: f64 },
    RowSum { slot: MatrixSlot, row: usize, sum: f64 },
    TailStart { start: u64, max_k: u64 },
    TailParameter { detail: String },
    ThetaSum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => f.write_str("kernel has no states"),
            Violation::LabelCount { labels, states } => {
                write!(f, "{labels} labels given for {states} states")
            }
            Violation::DuplicateLabel { label } => write!(f, "label {label:?} appears twice"),
            Violation::EmptySupport => f.write_str("support is empty"),
            Violation::ZeroIndex => f.write_str("support index k = 0 is not allowed"),
            Violation::DuplicateSupport { k } => write!(f, "support index k = {k} is duplicated"),
            Violation::NonPositiveTheta { k, theta } => write!(f, "θ_{k} = {theta} is not positive"),
            Violation::MatrixShape { slot, detail } => write!(f, "{slot}: {detail}"),
            Violation::NegativeEntry { slot, row, col, value } => {
                write!(f, "{slot}: entry ({},{}) = {value} is negative", row + 1, col + 1)
            }
            Violation::RowSum { slot, row, sum } => {
                write!(f, "{slot}: row {} sums to {sum}", row + 1)
            }
            Violation::TailStart { start, max_k } => {
                write!(f, "tail start {start} must exceed the largest finite k = {max_k}")
            }
            Violation::TailParameter { detail } => f.write_str(detail),
            Violation::ThetaSum { sum } => write!(f, "θ sums to {sum}, not 1"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("malformed kernel document: {0}")]
    Malformed(String),
    #[error("invalid kernel: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

// ---------------------------------------------------------------------------
// Kernel spec document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub support: Vec<SupportSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub k: u64,
    pub theta: f64,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailFamilyName {
    Geometric,
    Powerlaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailDoc {
    pub family: TailFamilyName,
    pub start: u64,
    pub param: f64,
    pub mass: f64,
    pub matrix: Vec<Vec<f64>>,
}

/// Parses and validates a kernel spec document.
pub fn parse_kernel_spec(text: &str) -> Result<ImitationKernel, KernelError> {
    let spec: KernelSpec = serde_json::from_str(text).map_err(|e| KernelError::Malformed(e.to_string()))?;
    if spec.states < 2 {
        return Err(KernelError::Malformed(format!("a kernel file needs at least 2 states, got {}", spec.states)));
    }
    ImitationKernel::from_spec(spec)
}

fn check_matrix(slot: MatrixSlot, rows: &[Vec<f64>], states: usize, out: &mut Vec<Violation>) {
    if rows.len() != states || rows.iter().any(|r| r.len() != states) {
        out.push(Violation::MatrixShape { slot, detail: format!("expected a {states}×{states} matrix") });
        return;
    }
    for (row, r) in rows.iter().enumerate() {
        for (col, &value) in r.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                out.push(Violation::NegativeEntry { slot, row, col, value });
            }
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            out.push(Violation::RowSum { slot, row, sum });
        }
    }
}

/// Every violated kernel invariant; empty iff the document describes a valid kernel.
pub fn validate_kernel(spec: &KernelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = spec.states;
    if n == 0 {
        out.push(Violation::NoStates);
    }
    if let Some(labels) = &spec.labels {
        if labels.len() != n {
            out.push(Violation::LabelCount { labels: labels.len(), states: n });
        }
        let mut seen = std::collections::HashSet::new();
        for l in labels {
            if !seen.insert(l) {
                out.push(Violation::DuplicateLabel { label: l.clone() });
            }
        }
    }
    if spec.support.is_empty() {
        out.push(Violation::EmptySupport);
    }
    let mut ks: Vec<u64> = spec.support.iter().map(|s| s.k).collect();
    ks.sort_unstable();
    for w in ks.windows(2) {
        if w[0] == w[1] && !out.contains(&Violation::DuplicateSupport { k: w[0] }) {
            out.push(Violation::DuplicateSupport { k: w[0] });
        }
    }
    if ks.first() == Some(&0) {
        out.push(Violation::ZeroIndex);
    }
    for s in &spec.support {
        if !(s.theta > 0.0 && s.theta.is_finite()) {
            out.push(Violation::NonPositiveTheta { k: s.k, theta: s.theta });
        }
        check_matrix(MatrixSlot::Support { k: s.k }, &s.matrix, n, &mut out);
    }
    let mut total: f64 = spec.support.iter().map(|s| s.theta).sum();
    if let Some(t) = &spec.tail {
        let max_k = ks.last().copied().unwrap_or(0);
        if t.start <= max_k {
            out.push(Violation::TailStart { start: t.start, max_k });
        }
        let shell = TailSpec::new(family_of(t), t.start, t.mass, StochasticMatrix::identity(1));
        out.extend(shell.problems().into_iter().map(|detail| Violation::TailParameter { detail }));
        check_matrix(MatrixSlot::Tail, &t.matrix, n, &mut out);
        total += t.mass;
    }
    if (total - 1.0).abs() > THETA_SUM_TOL {
        out.push(Violation::ThetaSum { sum: total });
    }
    out
}

fn family_of(t: &TailDoc) -> TailFamily {
    match t.family {
        TailFamilyName::Geometric => TailFamily::Geometric(t.param),
        TailFamilyName::Powerlaw => TailFamily::PowerLaw(t.param),
    }
}

// ---------------------------------------------------------------------------
// The kernel

impl ImitationKernel {
    /// Builds a kernel from support points and an optional tail, validating it.
    pub fn new(
        states: usize,
        support: Vec<(u64, f64, StochasticMatrix)>,
        tail: Option<TailSpec>,
    ) -> Result<Self, KernelError> {
        let spec = KernelSpec {
            states,
            labels: None,
            support: support
                .iter()
                .map(|(k, theta, m)| SupportSpec { k: *k, theta: *theta, matrix: m.to_rows() })
                .collect(),
            tail: tail.as_ref().map(|t| TailDoc {
                family: match t.family() {
                    TailFamily::Geometric(_) => TailFamilyName::Geometric,
                    TailFamily::PowerLaw(_) => TailFamilyName::Powerlaw,
                },
                start: t.start(),
                param: match t.family() {
                    TailFamily::Geometric(p) | TailFamily::PowerLaw(p) => p,
                },
                mass: t.mass(),
                matrix: t.matrix().to_rows(),
            }),
        };
        Self::from_spec(spec)
    }

    /// Finite-support kernel; the state count is read off the first matrix.
    pub fn finite(support: Vec<(u64, f64, StochasticMatrix)>) -> Result<Self, KernelError> {
        let states = support.first().map_or(0, |(_, _, m)| m.size());
        Self::new(states, support, None)
    }

    pub fn from_spec(spec: KernelSpec) -> Result<Self, KernelError> {
        let violations = validate_kernel(&spec);
        if !violations.is_empty() {
            return Err(KernelError::Invalid(violations));
        }
        let build =
            |rows: Vec<Vec<f64>>| StochasticMatrix::new(rows).map_err(|e| KernelError::Malformed(e.to_string()));
        let mut support = spec
            .support
            .into_iter()
            .map(|s| Ok(SupportEntry { k: s.k, theta: s.theta, matrix: build(s.matrix)? }))
            .collect::<Result<Vec<_>, KernelError>>()?;
        support.sort_by_key(|s| s.k);
        let mut tail = spec
            .tail
            .map(|t| Ok::<_, KernelError>(TailSpec::new(family_of(&t), t.start, t.mass, build(t.matrix)?)))
            .transpose()?;
        let total: f64 = support.iter().map(|s| s.theta).sum::<f64>() + tail.as_ref().map_or(0.0, TailSpec::mass);
        for s in &mut support {
            s.theta /= total;
        }
        if let Some(t) = &mut tail {
            t.rescale(1.0 / total);
        }
        Ok(Self::assemble(spec.states, spec.labels, support, tail))
    }

    /// Internal constructor for derived kernels (restriction, reduction); the
    /// caller guarantees the invariants.
    pub(crate) fn assemble(
        states: usize,
        labels: Option<Vec<String>>,
        support: Vec<SupportEntry>,
        tail: Option<TailSpec>,
    ) -> Self {
        let cumulative = support
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.theta;
                Some(*acc)
            })
            .collect();
        Self { states, labels, support, tail, cumulative }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.states);
        self.labels = Some(labels);
        self
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Display name of a state: its label, or its 1-based index.
    pub fn state_name(&self, g: State) -> String {
        match &self.labels {
            Some(l) => l[g].clone(),
            None => (g + 1).to_string(),
        }
    }

    /// Finite support points in increasing `k`.
    pub fn support(&self) -> &[SupportEntry] {
        &self.support
    }

    pub fn tail(&self) -> Option<&TailSpec> {
        self.tail.as_ref()
    }

    pub fn max_finite_k(&self) -> u64 {
        self.support.last().map_or(0, |s| s.k)
    }

    /// `P_(k)`, or `None` when `k ∉ A`.
    pub fn matrix(&self, k: u64) -> Option<&StochasticMatrix> {
        if let Ok(i) = self.support.binary_search_by_key(&k, |s| s.k) {
            return Some(&self.support[i].matrix);
        }
        self.tail.as_ref().filter(|t| k >= t.start()).map(TailSpec::matrix)
    }

    /// `θ_k` (zero outside the support).
    pub fn theta(&self, k: u64) -> f64 {
        if let Ok(i) = self.support.binary_search_by_key(&k, |s| s.k) {
            return self.support[i].theta;
        }
        self.tail.as_ref().map_or(0.0, |t| t.theta(k))
    }

    pub fn contains(&self, k: u64) -> bool {
        self.matrix(k).is_some()
    }

    /// Support matrices with their weights; the tail appears once with its mass.
    pub fn weighted_matrices(&self) -> impl Iterator<Item = (f64, &StochasticMatrix)> {
        self.support.iter().map(|s| (s.theta, &s.matrix)).chain(self.tail.iter().map(|t| (t.mass(), t.matrix())))
    }

    /// Support letters used by structural computations: every finite `k`, plus
    /// `k₀` and `k₀+1` standing in for an infinite tail.
    pub fn representative_letters(&self) -> Vec<(u64, &StochasticMatrix)> {
        let mut out: Vec<_> = self.support.iter().map(|s| (s.k, &s.matrix)).collect();
        if let Some(t) = &self.tail {
            out.push((t.start(), t.matrix()));
            out.push((t.start() + 1, t.matrix()));
        }
        out
    }

    /// Inverse-CDF draw from θ: the smallest `k` (finite support in increasing
    /// order, then the tail) whose cumulative mass exceeds `u`.
    pub fn sample_decrement(&self, u: f64) -> u64 {
        debug_assert!((0.0..1.0).contains(&u), "u = {u}");
        let idx = self.cumulative.partition_point(|&c| c <= u);
        if idx < self.support.len() {
            return self.support[idx].k;
        }
        match &self.tail {
            Some(t) => {
                let done = self.cumulative.last().copied().unwrap_or(0.0);
                t.invert((u - done).max(0.0))
            }
            // rounding left u above the last cumulative value
            None => self.max_finite_k(),
        }
    }

    /// Serializable description, the inverse of [`ImitationKernel::from_spec`].
    pub fn to_spec(&self) -> KernelSpec {
        KernelSpec {
            states: self.states,
            labels: self.labels.clone(),
            support: self
                .support
                .iter()
                .map(|s| SupportSpec { k: s.k, theta: s.theta, matrix: s.matrix.to_rows() })
                .collect(),
            tail: self.tail.as_ref().map(|t| {
                let (family, param) = match t.family() {
                    TailFamily::Geometric(p) => (TailFamilyName::Geometric, p),
                    TailFamily::PowerLaw(a) => (TailFamilyName::Powerlaw, a),
                };
                TailDoc { family, start: t.start(), param, mass: t.mass(), matrix: t.matrix().to_rows() }
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Coalescence of θ

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoalescenceVerdict {
    ProvenCoalescent,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalescenceAssessment {
    pub verdict: CoalescenceVerdict,
    /// `Σ_k (Σ_{n≥k} θ_n)²`, `+∞` when it diverges.
    #[serde(serialize_with = "serialize_extended")]
    pub tail_square_sum: f64,
    pub d_a: u64,
}

fn serialize_extended<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

/// Number of explicit power-law terms before the integral remainder takes over.
const SQUARE_SUM_TERMS: u64 = 100_000;

/// Applies the sufficient tail condition `Σ_k (Σ_{n≥k} θ_n)² < ∞`. The verdict
/// is `ProvenCoalescent` only when the sum is finite and `d(A) = 1`.
pub fn coalescence_verdict(kernel: &ImitationKernel) -> CoalescenceAssessment {
    let d_a = crate::structure::alphabet_gcd(kernel);
    let tail_square_sum = tail_square_sum(kernel);
    let verdict = if d_a == 1 && tail_square_sum.is_finite() {
        CoalescenceVerdict::ProvenCoalescent
    } else {
        CoalescenceVerdict::Unknown
    };
    CoalescenceAssessment { verdict, tail_square_sum, d_a }
}

fn tail_square_sum(kernel: &ImitationKernel) -> f64 {
    let tail_mass = kernel.tail().map_or(0.0, TailSpec::mass);
    // R(k) = Σ_{n ≥ k} θ_n is constant on (k_{i−1}, k_i].
    let mut sum = 0.0;
    let mut prev = 0u64;
    let mut remaining: f64 = kernel.support().iter().map(|s| s.theta).sum::<f64>() + tail_mass;
    for s in kernel.support() {
        sum += (s.k - prev) as f64 * remaining * remaining;
        remaining -= s.theta;
        prev = s.k;
    }
    let Some(t) = kernel.tail() else { return sum };
    sum += (t.start() - prev) as f64 * t.mass() * t.mass();
    match t.family() {
        TailFamily::Geometric(p) => sum + t.mass() * t.mass() * p * p / (1.0 - p * p),
        TailFamily::PowerLaw(alpha) => {
            if alpha <= 1.5 {
                return f64::INFINITY;
            }
            let mut r = t.mass_from(t.start() + 1);
            let mut k = t.start() + 1;
            for _ in 0..SQUARE_SUM_TERMS {
                sum += r * r;
                r -= t.theta(k);
                k += 1;
            }
            // R(x) ≈ c·x^{1−α}/(α−1); ∫_k^∞ R² = c²/(α−1)² · k^{3−2α}/(2α−3)
            let c = t.theta(k) * (k as f64).powf(alpha);
            let rem = c * c / ((alpha - 1.0) * (alpha - 1.0)) * (k as f64 - 0.5).powf(3.0 - 2.0 * alpha)
                / (2.0 * alpha - 3.0);
            sum + rem
        }
    }
}

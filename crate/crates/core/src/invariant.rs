//! `P̂ = Σ θ_k P_(k)` and its invariant distributions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::kernel::{ImitationKernel, State};
use crate::matrix::StochasticMatrix;
use crate::structure::graph_classes;

/// Largest chain solved densely; bigger ones use power iteration.
pub const DENSE_LIMIT: usize = 2000;
const POWER_TOL: f64 = 1e-13;
const POWER_MAX_ITER: usize = 1_000_000;
const REFINEMENT_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvariantError {
    #[error("{classes} closed classes: mixture weights are required")]
    MissingWeights { classes: usize },
    #[error("{given} mixture weights for {classes} closed classes")]
    WeightCount { given: usize, classes: usize },
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
    #[error("linear solve failed on a closed class of size {0}")]
    Singular(usize),
}

/// A probability vector on the states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Distribution {
    weights: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Distribution {
    pub fn new(weights: Vec<f64>) -> Result<Self, InvariantError> {
        if weights.is_empty() {
            return Err(InvariantError::BadDistribution("no states".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(InvariantError::BadDistribution(format!("weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(InvariantError::BadDistribution(format!("weights sum to {total}")));
        }
        Ok(Self::normalized(weights))
    }

    fn normalized(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Self { weights, cumulative }
    }

    pub fn uniform(n: usize) -> Self {
        Self::normalized(vec![1.0; n])
    }

    pub fn point(n: usize, g: State) -> Self {
        let mut w = vec![0.0; n];
        w[g] = 1.0;
        Self::normalized(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Inverse-CDF draw; states with zero weight are never returned.
    pub fn sample(&self, u: f64) -> State {
        let i = self.cumulative.partition_point(|&c| c <= u);
        if i < self.weights.len() {
            i
        } else {
            self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
        }
    }

    /// `‖λP − λ‖∞`.
    pub fn residual(&self, m: &StochasticMatrix) -> f64 {
        m.left_mul(&self.weights).iter().zip(&self.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn p_hat(kernel: &ImitationKernel) -> StochasticMatrix {
    StochasticMatrix::convex_combination(kernel.states(), kernel.weighted_matrices())
}

/// Solves `λP = λ`, `Σλ = 1`. Each closed class gets its own invariant law;
/// with several classes `weights` mixes them (one weight per class, classes
/// ordered by smallest state). Transient states get zero mass.
pub fn invariant_distribution(
    matrix: &StochasticMatrix,
    weights: Option<&[f64]>,
) -> Result<Distribution, InvariantError> {
    let n = matrix.size();
    let classes = graph_classes(n, |i, j| matrix.positive(i, j));
    let mix: Vec<f64> = match (classes.closed.len(), weights) {
        (1, _) => vec![1.0],
        (c, None) => return Err(InvariantError::MissingWeights { classes: c }),
        (c, Some(w)) if w.len() != c => return Err(InvariantError::WeightCount { given: w.len(), classes: c }),
        (_, Some(w)) => Distribution::new(w.to_vec())?.weights,
    };
    let mut out = vec![0.0; n];
    for (class, w) in classes.closed.iter().zip(mix) {
        if w == 0.0 {
            continue;
        }
        let sub = matrix.restrict(class);
        let local = if class.len() <= DENSE_LIMIT { dense_solve(&sub)? } else { power_iteration(&sub) };
        for (&g, x) in class.iter().zip(local) {
            out[g] = w * x;
        }
    }
    Ok(Distribution::normalized(out))
}

/// Irreducible `P`: replace the last equation of `(Pᵀ − I)λ = 0` by `Σλ = 1`,
/// then polish with a few rounds of iterative refinement.
fn dense_solve(p: &StochasticMatrix) -> Result<Vec<f64>, InvariantError> {
    let n = p.size();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = p.get(i, j);
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu.solve(&b).ok_or(InvariantError::Singular(n))?;
    for _ in 0..REFINEMENT_ROUNDS {
        let r = &b - &a * &x;
        match lu.solve(&r) {
            Some(dx) => x += dx,
            None => break,
        }
    }
    let mut x: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    Ok(x)
}

fn power_iteration(p: &StochasticMatrix) -> Vec<f64> {
    let n = p.size();
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..POWER_MAX_ITER {
        // lazy step keeps periodic classes convergent
        let y: Vec<f64> = p.left_mul(&x).iter().zip(&x).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        if diff < POWER_TOL {
            break;
        }
    }
    x
}

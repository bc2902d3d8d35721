//! Inverse-CDF coupling functions, their compositions along words, and the
//! Doeblin certificate with its star coupling.

use serde::Serialize;

use crate::kernel::{ImitationKernel, State};
use crate::matrix::StochasticMatrix;
use crate::structure::{uniqueness_verdict, word_matrix, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CouplingError {
    #[error("word has {letters} letters but {uniforms} uniforms were given")]
    LengthMismatch { letters: usize, uniforms: usize },
    #[error("letter {0} is not in the support")]
    LetterNotInSupport(u64),
    #[error("no Doeblin certificate: kernel verdict is {0:?}, not Unique")]
    NotUnique(Verdict),
    #[error("no common depth ≤ {0} drives every state to one target")]
    CapExceeded(u64),
}

/// `f(g, u)`: the smallest `j` with `Σ_{h≤j} M(g,h) > u`.
#[inline]
pub fn apply_coupling(matrix: &StochasticMatrix, state: State, u: f64) -> State {
    let row = matrix.row(state);
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left u above the row total
    row.iter().rposition(|&p| p > 0.0).unwrap_or(state)
}

/// `f_a(g; u₁..u_n) = f_(a₁)(f_(a₂)(…f_(a_n)(g; u_n)…); u₁)`.
pub fn compose_coupling(
    kernel: &ImitationKernel,
    word: &[u64],
    state: State,
    us: &[f64],
) -> Result<State, CouplingError> {
    if word.len() != us.len() {
        return Err(CouplingError::LengthMismatch { letters: word.len(), uniforms: us.len() });
    }
    word.iter().zip(us).rev().try_fold(state, |g, (&a, &u)| {
        let m = kernel.matrix(a).ok_or(CouplingError::LetterNotInSupport(a))?;
        Ok(apply_coupling(m, g, u))
    })
}

/// Equal-depth words driving every state into `target`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoeblinCertificate {
    pub target: State,
    pub n0_bar: u64,
    /// `b_i` for each state `i`.
    pub words: Vec<Vec<u64>>,
    /// `min_i P_{b_i}(i, target)`.
    pub epsilon: f64,
    /// `Σ θ_b` over the distinct words.
    pub rho_bar: f64,
    pub q_bar: StochasticMatrix,
    /// `min_i Q̄(i, target)`.
    pub epsilon_star: f64,
    /// State order used by [`star_coupling`]: target first.
    #[serde(skip)]
    order: Vec<State>,
}

impl DoeblinCertificate {
    /// Distinct witness words, in order of first appearance.
    pub fn distinct_words(&self) -> Vec<&[u64]> {
        let mut out: Vec<&[u64]> = Vec::new();
        for w in &self.words {
            if !out.contains(&w.as_slice()) {
                out.push(w);
            }
        }
        out
    }
}

type BoolMatrix = Vec<Vec<bool>>;

/// Finds the smallest depth `n̄₀ ≤ cap` at which some column of the depth
/// reachability matrix is all true, picks the target there (largest `ε`,
/// then lowest index), backtracks one witness word per state and assembles
/// `ε`, `ρ̄`, `Q̄`, `ε*`.
pub fn doeblin_certificate(
    kernel: &ImitationKernel,
    depth_cap: Option<u64>,
) -> Result<DoeblinCertificate, CouplingError> {
    let verdict = uniqueness_verdict(kernel).verdict;
    if verdict != Verdict::Unique {
        return Err(CouplingError::NotUnique(verdict));
    }
    let n = kernel.states();
    let top_letter = kernel.tail().map_or(kernel.max_finite_k(), |t| t.start() + 1);
    let cap = depth_cap.unwrap_or(10 * (n * n) as u64 * top_letter);
    let support_of =
        |m: &StochasticMatrix| -> BoolMatrix { (0..n).map(|i| (0..n).map(|j| m.positive(i, j)).collect()).collect() };
    let finite: Vec<(u64, BoolMatrix)> = kernel.support().iter().map(|s| (s.k, support_of(&s.matrix))).collect();
    let tail = kernel.tail().map(|t| (t.start(), support_of(t.matrix())));
    let letters_up_to = |depth: u64| -> Vec<(u64, &BoolMatrix)> {
        let mut v: Vec<(u64, &BoolMatrix)> = finite.iter().filter(|(k, _)| *k <= depth).map(|(k, m)| (*k, m)).collect();
        if let Some((start, m)) = &tail {
            v.extend((*start..=depth).map(|k| (k, m)));
        }
        v
    };

    // reach[d](i, j): some word of depth d has P(i, j) > 0.
    let identity: BoolMatrix = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    let mut reach: Vec<BoolMatrix> = vec![identity];
    let mut found = None;
    for depth in 1..=cap {
        let mut next = vec![vec![false; n]; n];
        for (k, s) in letters_up_to(depth) {
            let prev = &reach[(depth - k) as usize];
            for i in 0..n {
                for h in 0..n {
                    if prev[i][h] {
                        for j in 0..n {
                            next[i][j] |= s[h][j];
                        }
                    }
                }
            }
        }
        let columns: Vec<State> = (0..n).filter(|&t| (0..n).all(|i| next[i][t])).collect();
        reach.push(next);
        if !columns.is_empty() {
            found = Some((depth, columns));
            break;
        }
    }
    let (n0, candidates) = found.ok_or(CouplingError::CapExceeded(cap))?;

    let witness = |i: State, t: State| -> Vec<u64> {
        let mut word = Vec::new();
        let mut depth = n0;
        let mut col = t;
        while depth > 0 {
            let (k, h) = letters_up_to(depth)
                .into_iter()
                .find_map(|(k, s)| {
                    let prev = &reach[(depth - k) as usize];
                    (0..n).find(|&h| prev[i][h] && s[h][col]).map(|h| (k, h))
                })
                .expect("reachability recursion has a witness");
            word.push(k);
            depth -= k;
            col = h;
        }
        word
    };

    let mut best: Option<(f64, State, Vec<Vec<u64>>)> = None;
    for &t in &candidates {
        let words: Vec<Vec<u64>> = (0..n).map(|i| witness(i, t)).collect();
        let eps = words
            .iter()
            .enumerate()
            .map(|(i, w)| word_matrix(kernel, w).expect("witness letters in support").get(i, t))
            .fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(e, _, _)| eps > *e) {
            best = Some((eps, t, words));
        }
    }
    let (epsilon, target, words) = best.expect("at least one candidate");

    let mut cert = DoeblinCertificate {
        target,
        n0_bar: n0,
        words,
        epsilon,
        rho_bar: 0.0,
        q_bar: StochasticMatrix::identity(n),
        epsilon_star: 0.0,
        order: std::iter::once(target).chain((0..n).filter(|&g| g != target)).collect(),
    };
    let distinct: Vec<(f64, StochasticMatrix)> = cert
        .distinct_words()
        .into_iter()
        .map(|w| {
            let theta: f64 = w.iter().map(|&a| kernel.theta(a)).product();
            (theta, word_matrix(kernel, w).expect("witness letters in support"))
        })
        .collect();
    let rho: f64 = distinct.iter().map(|(t, _)| t).sum();
    cert.rho_bar = rho;
    cert.q_bar = StochasticMatrix::convex_combination(n, distinct.iter().map(|(t, m)| (t / rho, m)));
    cert.epsilon_star = (0..n).map(|i| cert.q_bar.get(i, target)).fold(f64::INFINITY, f64::min);
    Ok(cert)
}

/// Inverse CDF of row `state` of `Q̄` with the target first; every state maps
/// to the target when `u < ε*`.
#[inline]
pub fn star_coupling(cert: &DoeblinCertificate, state: State, u: f64) -> State {
    let row = cert.q_bar.row(state);
    let mut acc = 0.0;
    for &j in &cert.order {
        acc += row[j];
        if u < acc {
            return j;
        }
    }
    cert.order.iter().rev().copied().find(|&j| row[j] > 0.0).unwrap_or(cert.target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{i2, j2};
    use crate::rng::{Purpose, Streams};
    use crate::structure::tests::{k_periodic, k_unique, small_kernel};
    use proptest::prelude::*;

    fn m(rows: Vec<Vec<f64>>) -> StochasticMatrix {
        StochasticMatrix::new(rows).unwrap()
    }

    #[test]
    fn apply_coupling_examples() {
        let half = m(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(apply_coupling(&half, 0, 0.3), 0);
        assert_eq!(apply_coupling(&half, 0, 0.7), 1);
        let det = m(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        for u in [0.0, 0.5, 0.999] {
            assert_eq!(apply_coupling(&det, 0, u), 1);
            assert_eq!(apply_coupling(&i2(), 1, u), 1);
        }
    }

    #[test]
    fn compose_coupling_examples() {
        let k = k_unique();
        assert_eq!(compose_coupling(&k, &[2, 2], 0, &[0.1, 0.9]), Ok(0));
        assert_eq!(compose_coupling(&k, &[1, 2], 0, &[0.4, 0.6]), Ok(1));
        let w = m(vec![vec![0.3, 0.7], vec![0.9, 0.1]]);
        let k3 = ImitationKernel::finite(vec![(1, 1.0, w.clone())]).unwrap();
        for u in [0.1, 0.5, 0.95] {
            assert_eq!(compose_coupling(&k3, &[1], 0, &[u]).unwrap(), apply_coupling(&w, 0, u));
        }
        assert!(compose_coupling(&k, &[1, 2], 0, &[0.5]).is_err());
    }

    #[test]
    fn k_unique_certificate() {
        let c = doeblin_certificate(&k_unique(), None).unwrap();
        assert_eq!(c.target, 0);
        assert_eq!(c.n0_bar, 2);
        assert_eq!(c.words, vec![vec![1, 1], vec![2]]);
        assert_eq!(c.epsilon, 1.0);
        // Oracle: θ_(1,1) = 1/4, θ_(2) = 1/2.
        assert!((c.rho_bar - 0.75).abs() < 1e-15);
        let q = m(vec![vec![1.0 / 3.0, 2.0 / 3.0], vec![2.0 / 3.0, 1.0 / 3.0]]);
        assert!(c.q_bar.max_abs_diff(&q) < 1e-15);
        assert!((c.epsilon_star - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_state_certificate() {
        let one = StochasticMatrix::identity(1);
        let k = ImitationKernel::finite(vec![(3, 0.5, one.clone()), (5, 0.5, one)]).unwrap();
        let c = doeblin_certificate(&k, None).unwrap();
        assert_eq!(c.n0_bar, 3);
        assert_eq!(c.epsilon, 1.0);
        assert_eq!(c.epsilon_star, 1.0);
    }

    #[test]
    fn certificate_refuses_periodic() {
        assert_eq!(doeblin_certificate(&k_periodic(), None), Err(CouplingError::NotUnique(Verdict::NonUniquePeriodic)));
    }

    #[test]
    fn star_coupling_examples() {
        let c = doeblin_certificate(&k_unique(), None).unwrap();
        assert_eq!(star_coupling(&c, 0, 0.2), 0);
        assert_eq!(star_coupling(&c, 1, 0.2), 0);
        assert_eq!(star_coupling(&c, 0, 0.9), 1);
        // analytic endpoints: row 1 splits at 1/3, row 2 at 2/3
        assert_eq!(star_coupling(&c, 0, 1.0 / 3.0), 1);
        assert_eq!(star_coupling(&c, 1, 2.0 / 3.0 - 1e-12), 0);

        let absorbing = m(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let k = ImitationKernel::finite(vec![(1, 1.0, absorbing)]).unwrap();
        let c = doeblin_certificate(&k, None).unwrap();
        assert_eq!(c.epsilon_star, 1.0);
        for u in [0.0, 0.5, 0.999_999] {
            assert_eq!(star_coupling(&c, 1, u), 0);
        }
    }

    #[test]
    fn target_prefers_larger_epsilon() {
        // From 1: stays with 0.9; from 2: jumps to 1 with 0.9 and stays with 0.1.
        // Column 1 gives ε = 0.9, column 2 only 0.1.
        let p = m(vec![vec![0.9, 0.1], vec![0.9, 0.1]]);
        let c = doeblin_certificate(&ImitationKernel::finite(vec![(1, 1.0, p)]).unwrap(), None).unwrap();
        assert_eq!(c.target, 0);
        let p = m(vec![vec![0.1, 0.9], vec![0.1, 0.9]]);
        let c = doeblin_certificate(&ImitationKernel::finite(vec![(1, 1.0, p)]).unwrap(), None).unwrap();
        assert_eq!(c.target, 1);
        assert!((c.epsilon - 0.9).abs() < 1e-15);
    }

    #[test]
    fn certificate_with_tail_and_gcd() {
        let tail = crate::tail::TailSpec::geometric(3, 0.5, 0.5, j2());
        let k = ImitationKernel::new(2, vec![(1, 0.5, i2())], Some(tail)).unwrap();
        let c = doeblin_certificate(&k, None).unwrap();
        for (i, w) in c.words.iter().enumerate() {
            assert_eq!(w.iter().sum::<u64>(), c.n0_bar);
            assert!(word_matrix(&k, w).unwrap().get(i, c.target) >= c.epsilon);
        }
        let even = ImitationKernel::finite(vec![(2, 0.5, i2()), (4, 0.5, j2())]).unwrap();
        let c = doeblin_certificate(&even, None).unwrap();
        assert_eq!(c.n0_bar, 4);
    }

    #[test]
    fn coupling_rows_are_reproduced() {
        let p = m(vec![vec![0.1, 0.2, 0.7], vec![0.5, 0.25, 0.25], vec![0.0, 0.0, 1.0]]);
        let mut s = Streams::new(17, 0);
        let draws = 1_000_000;
        for g in 0..3 {
            let mut counts = [0u32; 3];
            for i in 0..draws {
                counts[apply_coupling(&p, g, s.uniform(Purpose::Boundary, i, 0))] += 1;
            }
            let tv: f64 =
                counts.iter().zip(p.row(g)).map(|(&c, &q)| (f64::from(c) / draws as f64 - q).abs()).sum::<f64>() / 2.0;
            assert!(tv < 0.005, "row {g}: tv {tv}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn composition_matches_word_matrix(k in small_kernel(3, 3), picks in prop::collection::vec(0usize..3, 1..5), seed in any::<u64>()) {
            let letters: Vec<u64> = k.support().iter().map(|s| s.k).collect();
            let word: Vec<u64> = picks.iter().map(|&i| letters[i % letters.len()]).collect();
            let pw = word_matrix(&k, &word).unwrap();
            let mut s = Streams::new(seed, 0);
            let draws = 40_000;
            for g in 0..k.states() {
                let mut counts = vec![0u32; k.states()];
                for i in 0..draws {
                    let us: Vec<f64> = (0..word.len()).map(|j| s.uniform(Purpose::Boundary, i, j as u8)).collect();
                    counts[compose_coupling(&k, &word, g, &us).unwrap()] += 1;
                }
                let tv: f64 = counts.iter().zip(pw.row(g)).map(|(&c, &q)| (f64::from(c) / draws as f64 - q).abs()).sum::<f64>() / 2.0;
                prop_assert!(tv < 0.02, "tv {}", tv);
            }
        }

        #[test]
        fn certificates_are_sound(k in small_kernel(4, 4)) {
            prop_assume!(uniqueness_verdict(&k).verdict == Verdict::Unique);
            let c = doeblin_certificate(&k, None).unwrap();
            prop_assert!(c.epsilon > 0.0 && c.epsilon_star > 0.0);
            prop_assert!(c.rho_bar > 0.0 && c.rho_bar <= 1.0 + 1e-12);
            prop_assert!(c.q_bar.is_stochastic());
            for (i, w) in c.words.iter().enumerate() {
                prop_assert_eq!(w.iter().sum::<u64>(), c.n0_bar);
                prop_assert!(word_matrix(&k, w).unwrap().get(i, c.target) >= c.epsilon);
            }
            let grid = (0..200).map(|i| i as f64 / 200.0 * c.epsilon_star).chain([c.epsilon_star * (1.0 - 1e-12)]);
            for u in grid {
                for g in 0..k.states() {
                    prop_assert_eq!(star_coupling(&c, g, u), c.target);
                }
            }
        }
    }
}

use crate::invariant::Distribution;
use crate::rng::{Purpose, RandomSource};
use crate::structure::alphabet_gcd;
use crate::walks::{joint_walk, Stop, Window};

use super::{Diagnostics, Replicate, SampleError, Values};

/// Coupling from the past: joint walks from every window site until they all
/// merge at `S_Λ`, an invariant draw there, and forward propagation along the
/// walks with the memoized `(K, U)`. With `d(A) > 1` each residue class of the
/// window is handled on its own.
///
/// The caller is responsible for θ being coalescent; `step_cap` bounds the
/// damage otherwise.
pub fn cftp_sample(
    kernel: &crate::kernel::ImitationKernel,
    window: &Window,
    rng: &mut RandomSource<'_>,
    invariant: &Distribution,
    step_cap: u64,
) -> Result<Replicate, SampleError> {
    let mut values = Values::default();
    let mut steps = 0;
    let mut lowest = None;
    for part in window.residue_classes(alphabet_gcd(kernel)) {
        let run = joint_walk(&part, rng, Stop::Never, step_cap.saturating_sub(steps))?;
        steps += run.steps;
        let (&root, _) = run.positions.first_key_value().expect("one walk left");
        values.root(root, invariant.sample(rng.uniform(Purpose::Invariant, root)));
        lowest = Some(lowest.map_or(root, |l: i64| l.min(root)));
    }
    Ok(Replicate {
        values: values.window(window, rng, None),
        diagnostics: Diagnostics { s_lambda: lowest, steps, ..Diagnostics::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariant::{invariant_distribution, p_hat};
    use crate::kernel::ImitationKernel;
    use crate::matrix::{i2, j2, StochasticMatrix};
    use crate::structure::tests::k_unique;

    fn run(k: &ImitationKernel, w: &Window, replicas: u64, seed: u64) -> Vec<Vec<usize>> {
        let lambda = invariant_distribution(&p_hat(k), None).unwrap();
        (0..replicas)
            .map(|r| {
                let mut rng = RandomSource::for_replica(k, seed, r);
                cftp_sample(k, w, &mut rng, &lambda, 1_000_000).unwrap().values
            })
            .collect()
    }

    #[test]
    fn singleton_marginal() {
        let k = k_unique();
        let out = run(&k, &Window::new(vec![0]).unwrap(), 20_000, 1);
        let ones = out.iter().filter(|v| v[0] == 0).count() as f64 / 20_000.0;
        assert!((ones - 0.5).abs() < 0.015);
    }

    #[test]
    fn adjacent_agreement_and_translation() {
        let k = k_unique();
        for (a, seed) in [(0, 2), (5, 3)] {
            let out = run(&k, &Window::range(a, a + 1).unwrap(), 20_000, seed);
            let agree = out.iter().filter(|v| v[0] == v[1]).count() as f64 / 20_000.0;
            assert!((agree - 2.0 / 3.0).abs() < 0.015, "{agree}");
        }
    }

    #[test]
    fn reconstruction_follows_the_walks() {
        // X_n = f_(K_n)(X_{n−K_n}, U_n) must hold at every window site whose
        // source is also in the window.
        let m = StochasticMatrix::new(vec![vec![0.2, 0.8], vec![0.7, 0.3]]).unwrap();
        let k = ImitationKernel::finite(vec![(1, 0.4, m), (2, 0.3, j2()), (3, 0.3, i2())]).unwrap();
        let lambda = invariant_distribution(&p_hat(&k), None).unwrap();
        let w = Window::range(0, 9).unwrap();
        for seed in 0..300 {
            let mut rng = RandomSource::new(&k, seed);
            let rep = cftp_sample(&k, &w, &mut rng, &lambda, 1_000_000).unwrap();
            for (i, &n) in w.sites().iter().enumerate() {
                if Some(n) == rep.diagnostics.s_lambda {
                    continue;
                }
                let (kk, u) = rng.revealed_site(n).unwrap_or_else(|| rng.draw_site(n));
                let src = n - kk as i64;
                if let Ok(j) = w.sites().binary_search(&src) {
                    let expect = crate::coupling::apply_coupling(k.matrix(kk).unwrap(), rep.values[j], u);
                    assert_eq!(rep.values[i], expect);
                }
            }
        }
    }

    #[test]
    fn step_cap_is_enforced() {
        let k = ImitationKernel::finite(vec![(1, 0.01, i2()), (2, 0.99, j2())]).unwrap();
        let lambda = invariant_distribution(&p_hat(&k), None).unwrap();
        let w = Window::range(0, 50).unwrap();
        let err = cftp_sample(&k, &w, &mut RandomSource::new(&k, 0), &lambda, 10).unwrap_err();
        assert_eq!(err, SampleError::Walk(crate::walks::WalkError::StepCap(10)));
    }
}

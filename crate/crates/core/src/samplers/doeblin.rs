use std::collections::{BTreeSet, HashMap};

use crate::coupling::DoeblinCertificate;
use crate::kernel::State;
use crate::rng::{Purpose, RandomSource, Site};
use crate::structure::alphabet_gcd;
use crate::walks::{walk_step, WalkError, Window};

use super::{Diagnostics, Replicate, SampleError, Values};

/// Trie over the certificate words, letters in walk order (`a₁` first).
#[derive(Debug)]
struct Trie {
    children: Vec<HashMap<u64, usize>>,
    leaf: Vec<bool>,
}

impl Trie {
    fn new(words: &[&[u64]]) -> Self {
        let mut t = Trie { children: vec![HashMap::new()], leaf: vec![false] };
        for w in words {
            let mut node = 0;
            for &a in *w {
                node = match t.children[node].get(&a) {
                    Some(&c) => c,
                    None => {
                        t.children.push(HashMap::new());
                        t.leaf.push(false);
                        let c = t.children.len() - 1;
                        t.children[node].insert(a, c);
                        c
                    }
                };
            }
            t.leaf[node] = true;
        }
        t
    }

    fn child(&self, node: usize, letter: u64) -> Option<usize> {
        self.children[node].get(&letter).copied()
    }
}

/// Doeblin-coupling sampler.
///
/// Active walks are advanced rightmost first. At a site `x` reached by a
/// walk whose next `n̄₀` levels are clear of every other active walk, the
/// following decrements are matched against the certificate words. A match
/// locates the segment `(x − n̄₀, x]` and draws `U*`: below `ε*` the value at
/// `x` is the target and the walk stops; otherwise `x` is linked to
/// `x − n̄₀` through the star coupling and the walk continues from there. A
/// mismatch leaves ordinary steps behind and the walk continues from where
/// it landed. Walks that land on the same site merge.
///
/// Each test starts at a site whose decrement has not been read, so the
/// located word is `b` with probability `θ_b / ρ̄` and the star coupling
/// reproduces `Q̄`.
pub fn doeblin_sample(
    kernel: &crate::kernel::ImitationKernel,
    window: &Window,
    cert: &DoeblinCertificate,
    rng: &mut RandomSource<'_>,
    step_cap: u64,
) -> Result<Replicate, SampleError> {
    let trie = Trie::new(&cert.distinct_words());
    let n0 = i64::try_from(cert.n0_bar).map_err(|_| WalkError::Overflow(window.min()))?;
    let mut values = Values::default();
    let mut steps = 0u64;
    let mut segments = 0u64;
    for part in window.residue_classes(alphabet_gcd(kernel)) {
        let mut active: BTreeSet<Site> = part.sites().iter().copied().collect();
        while let Some(x) = active.pop_last() {
            let clear = match active.last() {
                Some(&s) => x.checked_sub(n0).is_some_and(|b| b > s),
                None => x.checked_sub(n0).is_some(),
            };
            if !clear {
                check_cap(steps, step_cap)?;
                steps += 1;
                active.insert(walk_step(x, rng)?);
                continue;
            }
            let mut node = 0;
            let mut y = x;
            loop {
                check_cap(steps, step_cap)?;
                steps += 1;
                let k = rng.decrement(y);
                let next = y.checked_sub(k as i64).ok_or(WalkError::Overflow(y))?;
                match trie.child(node, k) {
                    None => {
                        active.insert(next);
                        break;
                    }
                    Some(c) if trie.leaf[c] => {
                        debug_assert_eq!(next, x - n0);
                        segments += 1;
                        let u_star = rng.uniform(Purpose::Star, x);
                        if u_star < cert.epsilon_star {
                            values.root(x, cert.target as State);
                        } else {
                            values.star(x, cert.n0_bar, u_star);
                            active.insert(next);
                        }
                        break;
                    }
                    Some(c) => {
                        node = c;
                        y = next;
                    }
                }
            }
        }
    }
    Ok(Replicate {
        values: values.window(window, rng, Some(cert)),
        diagnostics: Diagnostics { segments: Some(segments), steps, ..Diagnostics::default() },
    })
}

fn check_cap(steps: u64, cap: u64) -> Result<(), WalkError> {
    if steps >= cap {
        Err(WalkError::StepCap(cap))
    } else {
        Ok(())
    }
}

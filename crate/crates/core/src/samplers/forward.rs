use std::collections::BTreeMap;

use crate::coupling::apply_coupling;
use crate::invariant::Distribution;
use crate::kernel::{ImitationKernel, State};
use crate::rng::{Purpose, RandomSource, Site};
use crate::walks::{WalkError, Window};

/// Values at sites `≤ r`.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec {
    Constant(State),
    /// Independent draws, one per site, from the boundary stream.
    IidFrom(Distribution),
    /// `w_k = pattern[(k + phase) mod len]`.
    Alternating {
        pattern: Vec<State>,
        phase: i64,
    },
    /// Listed sites, `fill` everywhere else.
    Explicit {
        values: BTreeMap<Site, State>,
        fill: State,
    },
}

impl BoundarySpec {
    pub fn value(&self, site: Site, rng: &mut RandomSource<'_>) -> State {
        match self {
            BoundarySpec::Constant(g) => *g,
            BoundarySpec::IidFrom(d) => d.sample(rng.uniform(Purpose::Boundary, site)),
            BoundarySpec::Alternating { pattern, phase } => {
                let len = pattern.len() as i128;
                pattern[(i128::from(site) + i128::from(*phase)).rem_euclid(len) as usize]
            }
            BoundarySpec::Explicit { values, fill } => values.get(&site).copied().unwrap_or(*fill),
        }
    }
}

/// Values on `(r, max Λ]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardRun {
    pub r: Site,
    /// `values[i]` is the state at site `r + 1 + i`.
    pub values: Vec<State>,
}

impl ForwardRun {
    /// State at `site > r`.
    pub fn get(&self, site: Site) -> Option<State> {
        let i = site.checked_sub(self.r)?.checked_sub(1)?;
        usize::try_from(i).ok().and_then(|i| self.values.get(i).copied())
    }

    /// Window values, reading the boundary at sites `≤ r`.
    pub fn window(&self, window: &Window, boundary: &BoundarySpec, rng: &mut RandomSource<'_>) -> Vec<State> {
        window.sites().iter().map(|&n| self.get(n).unwrap_or_else(|| boundary.value(n, rng))).collect()
    }
}

/// Grows the process forward from the boundary: for `n = r+1..=max Λ`,
/// `X_n = f_(K_n)(X_{n−K_n}, U_n)` with the site draws of `rng`.
pub fn forward_simulate(
    kernel: &ImitationKernel,
    boundary: &BoundarySpec,
    r: Site,
    window: &Window,
    rng: &mut RandomSource<'_>,
) -> Result<ForwardRun, WalkError> {
    let top = window.max();
    if top <= r {
        return Err(WalkError::Threshold { start: top, threshold: r });
    }
    let len = usize::try_from(i128::from(top) - i128::from(r)).map_err(|_| WalkError::Overflow(r))?;
    let mut values: Vec<State> = Vec::with_capacity(len);
    for i in 0..len {
        let n = r + 1 + i as i64;
        let (k, u) = rng.draw_site(n);
        let source = match usize::try_from(k).ok().filter(|&k| k <= i) {
            Some(k) => values[i - k],
            None => boundary.value(n.saturating_sub_unsigned(k), rng),
        };
        values.push(apply_coupling(kernel.matrix(k).expect("k in support"), source, u));
    }
    Ok(ForwardRun { r, values })
}

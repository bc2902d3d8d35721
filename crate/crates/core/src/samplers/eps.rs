use crate::invariant::Distribution;
use crate::kernel::ImitationKernel;
use crate::rng::{Purpose, RandomSource, Site};
use crate::structure::alphabet_gcd;
use crate::walks::{joint_walk, Stop, WalkError, Window};

use super::{Diagnostics, Replicate, SampleError, Values};

/// Thresholded sampling: walks from every window site until they are all at
/// or below `threshold`, independent invariant draws at the distinct landing
/// sites, forward propagation with the memoized `(K, U)`.
///
/// If every walk of a residue class has already merged above the threshold,
/// the invariant draw is taken at the merger site, exactly as coupling from
/// the past does; the value there has the invariant law either way.
pub fn eps_perfect_sample(
    kernel: &ImitationKernel,
    window: &Window,
    threshold: Site,
    rng: &mut RandomSource<'_>,
    invariant: &Distribution,
    step_cap: u64,
) -> Result<Replicate, SampleError> {
    if threshold >= window.min() {
        return Err(WalkError::Threshold { start: window.min(), threshold }.into());
    }
    let mut values = Values::default();
    let mut steps = 0;
    let mut landings = 0;
    for part in window.residue_classes(alphabet_gcd(kernel)) {
        let run = joint_walk(&part, rng, Stop::Threshold(threshold), step_cap.saturating_sub(steps))?;
        steps += run.steps;
        for &root in run.positions.keys() {
            values.root(root, invariant.sample(rng.uniform(Purpose::Invariant, root)));
        }
        landings += run.positions.len();
    }
    Ok(Replicate {
        values: values.window(window, rng, None),
        diagnostics: Diagnostics { landings: Some(landings), steps, ..Diagnostics::default() },
    })
}

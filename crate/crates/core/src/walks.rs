//! Backward random walks `T_{k+1} = T_k − K_{T_k}` over the memoized site
//! draws, their joint coalescence under the rightmost-moves rule, and the
//! distance chain between two walks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::kernel::ImitationKernel;
use crate::rng::{Purpose, RandomSource, Site};

/// Default bound on walk steps per replicate.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WalkError {
    #[error("step budget of {0} exceeded; θ may not be coalescent")]
    StepCap(u64),
    #[error("walk left the representable site range below {0}")]
    Overflow(Site),
    #[error("threshold {threshold} must lie below the start {start}")]
    Threshold { start: Site, threshold: Site },
    #[error("empty sample")]
    EmptySample,
    #[error("window is empty")]
    EmptyWindow,
    #[error("window {a}..{b} is empty")]
    EmptyRange { a: Site, b: Site },
}

/// Finite set of sites, sorted and without repeats.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Window(Vec<Site>);

impl Window {
    pub fn new(mut sites: Vec<Site>) -> Result<Self, WalkError> {
        sites.sort_unstable();
        sites.dedup();
        if sites.is_empty() {
            return Err(WalkError::EmptyWindow);
        }
        Ok(Self(sites))
    }

    /// `a..=b`.
    pub fn range(a: Site, b: Site) -> Result<Self, WalkError> {
        if a > b {
            return Err(WalkError::EmptyRange { a, b });
        }
        Ok(Self((a..=b).collect()))
    }

    pub fn sites(&self) -> &[Site] {
        &self.0
    }

    pub fn min(&self) -> Site {
        self.0[0]
    }

    pub fn max(&self) -> Site {
        self.0[self.0.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sub-windows by residue mod `d`; walks from different classes never meet.
    pub fn residue_classes(&self, d: u64) -> Vec<Window> {
        let d = i128::from(d.max(1));
        let mut by: BTreeMap<i128, Vec<Site>> = BTreeMap::new();
        for &n in &self.0 {
            by.entry(i128::from(n).rem_euclid(d)).or_default().push(n);
        }
        by.into_values().map(Window).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WalkTrajectory {
    pub start: Site,
    /// `T₀ = start > T₁ > …`.
    pub positions: Vec<Site>,
    /// `K` read at each position except the last.
    pub decrements: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WalkLanding {
    /// `M_r`.
    pub steps: u64,
    /// `V_r`.
    pub site: Site,
}

pub fn walk_step(position: Site, rng: &mut RandomSource<'_>) -> Result<Site, WalkError> {
    let k = rng.decrement(position);
    descend(position, k)
}

fn descend(position: Site, k: u64) -> Result<Site, WalkError> {
    i64::try_from(k).ok().and_then(|k| position.checked_sub(k)).ok_or(WalkError::Overflow(position))
}

/// Walks from `start` until the position is `≤ threshold`.
pub fn walk_to_threshold(
    start: Site,
    threshold: Site,
    rng: &mut RandomSource<'_>,
    step_cap: u64,
) -> Result<(WalkTrajectory, WalkLanding), WalkError> {
    if threshold >= start {
        return Err(WalkError::Threshold { start, threshold });
    }
    let mut positions = vec![start];
    let mut decrements = Vec::new();
    let mut at = start;
    while at > threshold {
        if decrements.len() as u64 >= step_cap {
            return Err(WalkError::StepCap(step_cap));
        }
        let k = rng.decrement(at);
        at = descend(at, k)?;
        decrements.push(k);
        positions.push(at);
    }
    let landing = WalkLanding { steps: decrements.len() as u64, site: at };
    Ok((WalkTrajectory { start, positions, decrements }, landing))
}

/// When the joint walk stops.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stop {
    /// Give up once every position is below `min Λ − H`.
    Horizon(u64),
    /// Stop once every position is `≤ u`.
    Threshold(Site),
    /// Run to full coalescence.
    Never,
}

/// Outcome of a rightmost-moves run. Groups are named by the index (into the
/// window) of a founding member.
#[derive(Debug, Clone)]
pub(crate) struct JointRun {
    /// `(site, absorbed group, surviving group)` in the order they happened.
    pub mergers: Vec<(Site, usize, usize)>,
    /// Final position of every surviving group.
    pub positions: BTreeMap<Site, usize>,
    pub steps: u64,
}

impl JointRun {
    pub fn coalesced(&self) -> bool {
        self.positions.len() == 1
    }
}

pub(crate) fn joint_walk(
    window: &Window,
    rng: &mut RandomSource<'_>,
    stop: Stop,
    step_cap: u64,
) -> Result<JointRun, WalkError> {
    let mut positions: BTreeMap<Site, usize> = window.sites().iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut mergers = Vec::new();
    let mut steps = 0u64;
    let floor = match stop {
        Stop::Horizon(h) => Some(window.min().saturating_sub(i64::try_from(h).unwrap_or(i64::MAX))),
        _ => None,
    };
    while positions.len() > 1 {
        let (&top, &group) = positions.last_key_value().expect("nonempty");
        match stop {
            Stop::Threshold(u) if top <= u => break,
            Stop::Horizon(_) if top < floor.expect("horizon") => break,
            _ => {}
        }
        if steps >= step_cap {
            return Err(WalkError::StepCap(step_cap));
        }
        positions.pop_last();
        let next = walk_step(top, rng)?;
        steps += 1;
        match positions.get(&next) {
            Some(&other) => mergers.push((next, group, other)),
            None => {
                positions.insert(next, group);
            }
        }
    }
    Ok(JointRun { mergers, positions, steps })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairCoalescence {
    pub m: Site,
    pub n: Site,
    /// `S_{m,n}`, or `None` when not reached within the horizon.
    pub point: Option<Site>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoalescenceReport {
    pub window: Window,
    pub pairwise: Vec<PairCoalescence>,
    /// `S_Λ`, or `None` when not every walk merged within the horizon.
    pub s_lambda: Option<Site>,
    /// Starts whose walks merged, grouped.
    pub classes: Vec<Vec<Site>>,
    pub steps: u64,
}

/// Joint walks from every site of `window`, always advancing the rightmost.
pub fn joint_coalescence(
    window: &Window,
    horizon: u64,
    rng: &mut RandomSource<'_>,
) -> Result<CoalescenceReport, WalkError> {
    let run = joint_walk(window, rng, Stop::Horizon(horizon), u64::MAX)?;
    let sites = window.sites();
    let len = sites.len();
    let mut members: Vec<Vec<usize>> = (0..len).map(|i| vec![i]).collect();
    let mut point = vec![None; len * len];
    for &(site, absorbed, into) in &run.mergers {
        let moved = std::mem::take(&mut members[absorbed]);
        for &a in &moved {
            for &b in &members[into] {
                point[a * len + b] = Some(site);
                point[b * len + a] = Some(site);
            }
        }
        members[into].extend(moved);
    }
    let mut pairwise = Vec::with_capacity(len * len.saturating_sub(1) / 2);
    for i in 0..len {
        for j in i + 1..len {
            pairwise.push(PairCoalescence { m: sites[i], n: sites[j], point: point[i * len + j] });
        }
    }
    let s_lambda = if run.coalesced() { Some(run.mergers.last().map_or(sites[0], |m| m.0)) } else { None };
    let mut classes: Vec<Vec<Site>> = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let mut c: Vec<Site> = m.into_iter().map(|i| sites[i]).collect();
            c.sort_unstable();
            c
        })
        .collect();
    classes.sort();
    Ok(CoalescenceReport { window: window.clone(), pairwise, s_lambda, classes, steps: run.steps })
}

/// Distance chain `d ← |d − K|` with i.i.d. `K ∼ θ`; the step at which it
/// first hits 0, or `None` within `horizon` steps.
pub fn von_schelling_simulate(
    kernel: &ImitationKernel,
    start_distance: u64,
    horizon: u64,
    rng: &mut RandomSource<'_>,
) -> Option<u64> {
    assert!(start_distance >= 1, "start distance must be positive");
    let mut d = start_distance;
    for step in 1..=horizon {
        let u = rng.uniform(Purpose::VonSchelling, step as i64);
        d = d.abs_diff(kernel.sample_decrement(u));
        if d == 0 {
            return Some(step);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    /// Fraction of replicas with a coalescence point below the threshold.
    pub estimate: f64,
    /// 95% Wilson interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicas: u64,
    pub horizon: u64,
    /// Always true: pairs that have not met within the horizon may still
    /// meet below the threshold, so this is a lower estimate.
    pub heuristic: bool,
}

/// Monte Carlo estimate of `P(Ŝ_Λ < u)` from horizon-bounded joint walks.
pub fn s_hat_tail_estimate(
    kernel: &ImitationKernel,
    window: &Window,
    threshold: Site,
    horizon: u64,
    replicas: u64,
    seed: u64,
) -> Result<TailEstimate, WalkError> {
    if replicas == 0 {
        return Err(WalkError::EmptySample);
    }
    if threshold > window.min() {
        return Err(WalkError::Threshold { start: window.min(), threshold });
    }
    let hits = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = RandomSource::for_replica(kernel, seed, r);
            let run = joint_walk(window, &mut rng, Stop::Horizon(horizon), u64::MAX)?;
            Ok(u64::from(run.mergers.iter().any(|m| m.0 < threshold)))
        })
        .collect::<Result<Vec<u64>, WalkError>>()?
        .into_iter()
        .sum::<u64>();
    let (ci_low, ci_high) = wilson_interval(hits, replicas);
    Ok(TailEstimate { estimate: hits as f64 / replicas as f64, ci_low, ci_high, replicas, horizon, heuristic: true })
}

pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{i2, j2};
    use crate::structure::tests::k_unique;

    /// Searches seeds for one whose first draws match `wanted`.
    fn seed_with(kernel: &ImitationKernel, wanted: &[(Site, u64)]) -> u64 {
        (0..100_000u64)
            .find(|&s| {
                let mut rng = RandomSource::new(kernel, s);
                wanted.iter().all(|&(n, k)| rng.decrement(n) == k)
            })
            .expect("some seed matches")
    }

    fn wide() -> ImitationKernel {
        ImitationKernel::finite(vec![(1, 0.2, i2()), (2, 0.2, j2()), (3, 0.2, i2()), (4, 0.2, j2()), (5, 0.2, i2())])
            .unwrap()
    }

    #[test]
    fn walk_step_examples() {
        let k = wide();
        for (n, kk) in [(5, 3), (0, 1), (-2, 4)] {
            let seed = seed_with(&k, &[(n, kk)]);
            let mut rng = RandomSource::new(&k, seed);
            assert_eq!(walk_step(n, &mut rng).unwrap(), n - kk as i64);
        }
    }

    #[test]
    fn walk_to_threshold_examples() {
        let k = wide();
        let seed = seed_with(&k, &[(0, 2), (-2, 2)]);
        let mut rng = RandomSource::new(&k, seed);
        let (t, l) = walk_to_threshold(0, -3, &mut rng, 100).unwrap();
        assert_eq!(t.positions, vec![0, -2, -4]);
        assert_eq!(l, WalkLanding { steps: 2, site: -4 });

        let seed = seed_with(&k, &[(1, 1)]);
        let (_, l) = walk_to_threshold(1, 0, &mut RandomSource::new(&k, seed), 100).unwrap();
        assert_eq!(l, WalkLanding { steps: 1, site: 0 });

        let seed = seed_with(&k, &[(0, 5)]);
        let (_, l) = walk_to_threshold(0, -1, &mut RandomSource::new(&k, seed), 100).unwrap();
        assert_eq!(l, WalkLanding { steps: 1, site: -5 });

        assert!(walk_to_threshold(0, 0, &mut RandomSource::new(&k, 1), 10).is_err());
        let deep = walk_to_threshold(0, -1000, &mut RandomSource::new(&k, 1), 10);
        assert_eq!(deep.unwrap_err(), WalkError::StepCap(10));
    }

    #[test]
    fn joint_coalescence_examples() {
        let k = wide();
        let w = Window::range(0, 1).unwrap();
        let seed = seed_with(&k, &[(1, 1)]);
        let rep = joint_coalescence(&w, 100, &mut RandomSource::new(&k, seed)).unwrap();
        assert_eq!(rep.pairwise, vec![PairCoalescence { m: 0, n: 1, point: Some(0) }]);
        assert_eq!(rep.s_lambda, Some(0));

        let single = Window::new(vec![5]).unwrap();
        let rep = joint_coalescence(&single, 100, &mut RandomSource::new(&k, 3)).unwrap();
        assert_eq!(rep.s_lambda, Some(5));
        assert!(rep.pairwise.is_empty());

        // 1 → −1 first, then 0 → −1.
        let seed = seed_with(&k, &[(1, 2), (0, 1)]);
        let rep = joint_coalescence(&w, 100, &mut RandomSource::new(&k, seed)).unwrap();
        assert_eq!(rep.s_lambda, Some(-1));
        assert_eq!(rep.classes, vec![vec![0, 1]]);
    }

    #[test]
    fn horizon_stops_non_coalescing_walks() {
        let even = ImitationKernel::finite(vec![(2, 1.0, i2())]).unwrap();
        let w = Window::range(0, 1).unwrap();
        let rep = joint_coalescence(&w, 50, &mut RandomSource::new(&even, 0)).unwrap();
        assert_eq!(rep.s_lambda, None);
        assert_eq!(rep.pairwise[0].point, None);
        assert_eq!(rep.classes.len(), 2);
    }

    #[test]
    fn joint_walks_read_each_site_once() {
        let k = wide();
        for seed in 0..200 {
            let w = Window::new(vec![0, 3, 4, 9]).unwrap();
            let mut rng = RandomSource::new(&k, seed);
            let rep = joint_coalescence(&w, 10_000, &mut rng).unwrap();
            assert_eq!(rep.steps as usize, rng.revealed());
        }
    }

    #[test]
    fn merged_walks_share_landings() {
        let k = wide();
        for seed in 0..200 {
            let w = Window::range(0, 1).unwrap();
            let mut rng = RandomSource::new(&k, seed);
            let rep = joint_coalescence(&w, 10_000, &mut rng).unwrap();
            let v = rep.pairwise[0].point.expect("coalesces");
            for r in [v, v - 1, v - 7].into_iter().filter(|&r| r < 0) {
                let a = walk_to_threshold(0, r, &mut rng, 1000).unwrap().1.site;
                let b = walk_to_threshold(1, r, &mut rng, 1000).unwrap().1.site;
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn pairwise_points_and_s_lambda_are_consistent() {
        let k = wide();
        for seed in 0..100 {
            let w = Window::new(vec![-3, 0, 2, 7, 8]).unwrap();
            let rep = joint_coalescence(&w, 10_000, &mut RandomSource::new(&k, seed)).unwrap();
            let min = rep.pairwise.iter().map(|p| p.point.unwrap()).min().unwrap();
            assert_eq!(rep.s_lambda, Some(min));
        }
    }

    #[test]
    fn adjacent_starts_coalesce() {
        let k = k_unique();
        let w = Window::range(0, 1).unwrap();
        let hits = (0..1000)
            .filter(|&r| {
                let mut rng = RandomSource::for_replica(&k, 5, r);
                joint_coalescence(&w, 1_000_000, &mut rng).unwrap().s_lambda.is_some()
            })
            .count();
        assert!(hits as f64 / 1000.0 > 0.999);
    }

    #[test]
    fn von_schelling_examples() {
        let k = k_unique();
        // With θ = (½, ½) the first step from distance 1 hits iff K = 1.
        let seed = (0..1000)
            .find(|&s| k.sample_decrement(RandomSource::new(&k, s).uniform(Purpose::VonSchelling, 1)) == 1)
            .unwrap();
        assert_eq!(von_schelling_simulate(&k, 1, 10, &mut RandomSource::new(&k, seed)), Some(1));
        let seed = (0..1000)
            .find(|&s| {
                let mut r = RandomSource::new(&k, s);
                k.sample_decrement(r.uniform(Purpose::VonSchelling, 1)) == 1
                    && k.sample_decrement(r.uniform(Purpose::VonSchelling, 2)) == 1
            })
            .unwrap();
        assert_eq!(von_schelling_simulate(&k, 2, 10, &mut RandomSource::new(&k, seed)), Some(2));

        let hits = (0..10_000)
            .filter(|&r| von_schelling_simulate(&k, 1, 100_000, &mut RandomSource::for_replica(&k, 9, r)).is_some())
            .count();
        assert_eq!(hits, 10_000);
    }

    #[test]
    fn tail_estimate_examples() {
        let k = k_unique();
        let w = Window::range(0, 1).unwrap();
        let far = s_hat_tail_estimate(&k, &w, -200, 1000, 500, 1).unwrap();
        assert_eq!(far.estimate, 0.0);
        assert!(far.heuristic);
        // Every merger of two distinct starts lies strictly below the window top;
        // with u = min Λ = 0 exactly the mergers below 0 count.
        let at = s_hat_tail_estimate(&k, &w, 0, 1000, 2000, 1).unwrap();
        let expected = (0..2000u64)
            .filter(|&r| {
                let mut rng = RandomSource::for_replica(&k, 1, r);
                joint_coalescence(&w, 1000, &mut rng).unwrap().s_lambda.unwrap() < 0
            })
            .count() as f64
            / 2000.0;
        assert_eq!(at.estimate, expected);
        assert!(at.ci_low <= expected && expected <= at.ci_high);
        assert_eq!(s_hat_tail_estimate(&k, &w, -5, 10, 0, 1), Err(WalkError::EmptySample));
    }

    #[test]
    fn residue_split() {
        let w = Window::range(-3, 2).unwrap();
        let parts = w.residue_classes(3);
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0].sites(), &[-3, 0]);
        assert_eq!(parts[2].sites(), &[-1, 2]);
    }
}

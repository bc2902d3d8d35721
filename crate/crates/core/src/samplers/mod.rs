//! Forward simulation from a boundary condition, and the three backward
//! samplers (coupling from the past, thresholded, Doeblin) for the
//! compatible law on a finite window.
//!
//! All samplers draw `(K_n, U_n)` from the same memoized [`RandomSource`], so
//! a site's decrement and coupling uniform are fixed once revealed. Values are
//! never stored during the walk phase; they are reconstructed afterwards by
//! [`Values`] from roots and links.

mod batch;
mod cftp;
mod doeblin;
mod eps;
mod forward;

use std::collections::HashMap;

use serde::Serialize;

pub use batch::{forward_batch, sample_batch, Algorithm, SampleBatch, SamplerConfig};
pub use cftp::cftp_sample;
pub use doeblin::doeblin_sample;
pub use eps::eps_perfect_sample;
pub use forward::{forward_simulate, BoundarySpec, ForwardRun};

use crate::coupling::{apply_coupling, star_coupling, CouplingError, DoeblinCertificate};
use crate::invariant::{invariant_distribution, p_hat, Distribution, InvariantError};
use crate::kernel::{coalescence_verdict, CoalescenceAssessment, ImitationKernel, State};
use crate::rng::{RandomSource, Site};
use crate::structure::{alphabet_gcd, reduce_kernel, uniqueness_verdict, StructureReport, Verdict};
use crate::walks::{WalkError, Window};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// One sampled window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate {
    /// Aligned with the window's sites.
    pub values: Vec<State>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct Diagnostics {
    /// Lowest coalescence point `S_Λ` over residue classes (coupling from the past).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_lambda: Option<Site>,
    /// Number of distinct landing sites at or below the threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landings: Option<usize>,
    /// Located segments, accepted ones included (Doeblin).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<u64>,
    /// Decrements read.
    pub steps: u64,
}

#[derive(Debug, Clone, Copy)]
enum Link {
    Root(State),
    /// `X_v = f*(X_{v−depth}, u)`.
    Star {
        depth: u64,
        u: f64,
    },
}

/// Reconstructs window values from roots and star links; every other site
/// on a walk is a plain step `X_v = f_(K_v)(X_{v−K_v}, U_v)`.
#[derive(Debug, Default)]
struct Values {
    links: HashMap<Site, Link>,
    known: HashMap<Site, State>,
}

impl Values {
    fn root(&mut self, site: Site, g: State) {
        self.links.insert(site, Link::Root(g));
    }

    fn star(&mut self, site: Site, depth: u64, u: f64) {
        self.links.insert(site, Link::Star { depth, u });
    }

    fn eval(&mut self, site: Site, rng: &RandomSource<'_>, cert: Option<&DoeblinCertificate>) -> State {
        let kernel = rng.kernel();
        let mut chain: Vec<Site> = Vec::new();
        let mut v = site;
        let mut value = loop {
            if let Some(&g) = self.known.get(&v) {
                break g;
            }
            match self.links.get(&v) {
                Some(Link::Root(g)) => break *g,
                Some(Link::Star { depth, .. }) => {
                    chain.push(v);
                    v -= *depth as i64;
                }
                None => {
                    let (k, _) = rng.revealed_site(v).expect("step links sit on walked sites");
                    chain.push(v);
                    v -= k as i64;
                }
            }
        };
        self.known.insert(v, value);
        for &v in chain.iter().rev() {
            value = match self.links.get(&v) {
                Some(Link::Star { u, .. }) => star_coupling(cert.expect("star link needs a certificate"), value, *u),
                _ => {
                    let (k, u) = rng.revealed_site(v).expect("walked site");
                    apply_coupling(kernel.matrix(k).expect("k in support"), value, u)
                }
            };
            self.known.insert(v, value);
        }
        value
    }

    fn window(&mut self, window: &Window, rng: &RandomSource<'_>, cert: Option<&DoeblinCertificate>) -> Vec<State> {
        window.sites().iter().map(|&n| self.eval(n, rng, cert)).collect()
    }
}

/// Coalescence of θ as the samplers see it: on the reduced kernel when
/// `d(A) > 1`, since residue classes are sampled separately.
pub fn sampling_coalescence(kernel: &ImitationKernel) -> CoalescenceAssessment {
    if alphabet_gcd(kernel) > 1 {
        let mut a = coalescence_verdict(&reduce_kernel(kernel).expect("d(A) > 1"));
        a.d_a = alphabet_gcd(kernel);
        a
    } else {
        coalescence_verdict(kernel)
    }
}

/// Everything the samplers need to know about a kernel, computed once.
#[derive(Debug, Clone)]
pub struct SamplingContext<'k> {
    pub kernel: &'k ImitationKernel,
    pub structure: StructureReport,
    pub coalescence: CoalescenceAssessment,
    /// `None` when several closed classes exist and no mixture was given.
    pub invariant: Option<Distribution>,
}

impl<'k> SamplingContext<'k> {
    pub fn new(kernel: &'k ImitationKernel, mixture: Option<&[f64]>) -> Result<Self, SampleError> {
        let invariant = match invariant_distribution(&p_hat(kernel), mixture) {
            Ok(d) => Some(d),
            Err(InvariantError::MissingWeights { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Self { kernel, structure: uniqueness_verdict(kernel), coalescence: sampling_coalescence(kernel), invariant })
    }

    pub fn invariant(&self) -> Result<&Distribution, SampleError> {
        self.invariant.as_ref().ok_or_else(|| {
            SampleError::Precondition(format!(
                "{} closed classes: supply invariant mixture weights",
                self.structure.classes.closed.len()
            ))
        })
    }
}

/// The stationary element for an irreducible periodic kernel: coupling from
/// the past when θ is proven coalescent, the thresholded sampler otherwise.
pub fn stationary_sample_periodic(
    ctx: &SamplingContext<'_>,
    window: &Window,
    rng: &mut RandomSource<'_>,
    threshold: Site,
    step_cap: u64,
) -> Result<Replicate, SampleError> {
    if ctx.structure.verdict != Verdict::NonUniquePeriodic {
        return Err(SampleError::Precondition(format!(
            "expected an irreducible periodic kernel, verdict is {:?}",
            ctx.structure.verdict
        )));
    }
    let invariant = ctx.invariant()?;
    if ctx.coalescence.verdict == crate::kernel::CoalescenceVerdict::ProvenCoalescent {
        cftp_sample(ctx.kernel, window, rng, invariant, step_cap)
    } else {
        eps_perfect_sample(ctx.kernel, window, threshold, rng, invariant, step_cap)
    }
}

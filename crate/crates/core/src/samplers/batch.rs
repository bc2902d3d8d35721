use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{doeblin_certificate, CouplingError};
use crate::kernel::{CoalescenceVerdict, ImitationKernel, State};
use crate::rng::{mix_seed, RandomSource, Site};
use crate::walks::{s_hat_tail_estimate, TailEstimate, Window};

use super::{
    cftp_sample, doeblin_sample, eps_perfect_sample, forward_simulate, BoundarySpec, Replicate, SampleError,
    SamplingContext,
};

/// Replicas used for the thresholded sampler's error estimate.
const ERROR_ESTIMATE_REPLICAS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cftp,
    Eps { threshold: Site },
    Doeblin,
}

impl Algorithm {
    pub fn label(&self) -> String {
        match self {
            Algorithm::Cftp => "cftp".into(),
            Algorithm::Eps { threshold } => format!("eps(u={threshold})"),
            Algorithm::Doeblin => "doeblin".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub window: Window,
    pub replicas: u64,
    pub seed: u64,
    pub step_cap: u64,
    /// Per-closed-class weights; required when there are several classes.
    pub mixture: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBatch {
    pub algorithm: String,
    pub seed: u64,
    pub states: usize,
    pub window: Window,
    pub replicates: Vec<Replicate>,
    /// Thresholded sampler only: heuristic estimate of its total-variation error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_estimate: Option<TailEstimate>,
}

impl SampleBatch {
    pub fn patterns(&self) -> impl Iterator<Item = &[State]> {
        self.replicates.iter().map(|r| r.values.as_slice())
    }
}

fn run_replicas(
    replicas: u64,
    f: impl Fn(u64) -> Result<Replicate, SampleError> + Sync + Send,
) -> Result<Vec<Replicate>, SampleError> {
    (0..replicas).into_par_iter().map(f).collect()
}

/// Checks the chosen algorithm's preconditions once, then draws
/// `config.replicas` independent replicates (replica `r` uses the random
/// source for `(seed, r)`), in replica order.
pub fn sample_batch(kernel: &ImitationKernel, config: &SamplerConfig) -> Result<SampleBatch, SampleError> {
    if config.replicas == 0 {
        return Err(SampleError::Precondition("at least one replica is required".into()));
    }
    let ctx = SamplingContext::new(kernel, config.mixture.as_deref())?;
    let window = &config.window;
    let (seed, cap) = (config.seed, config.step_cap);
    let mut error_estimate = None;
    let replicates = match config.algorithm {
        Algorithm::Cftp => {
            if ctx.coalescence.verdict != CoalescenceVerdict::ProvenCoalescent {
                return Err(SampleError::Precondition(format!(
                    "θ is not proven coalescent (Σ tail² = {}, d(A) = {}); \
                     coupling from the past may not terminate, use the eps algorithm with a threshold",
                    ctx.coalescence.tail_square_sum, ctx.coalescence.d_a
                )));
            }
            let inv = ctx.invariant()?;
            run_replicas(config.replicas, |r| {
                cftp_sample(kernel, window, &mut RandomSource::for_replica(kernel, seed, r), inv, cap)
            })?
        }
        Algorithm::Eps { threshold } => {
            if threshold >= window.min() {
                return Err(SampleError::Precondition(format!(
                    "threshold {threshold} must lie below the window minimum {}",
                    window.min()
                )));
            }
            let inv = ctx.invariant()?;
            let out = run_replicas(config.replicas, |r| {
                let mut rng = RandomSource::for_replica(kernel, seed, r);
                eps_perfect_sample(kernel, window, threshold, &mut rng, inv, cap)
            })?;
            let depth = (window.min() - threshold) as u64;
            error_estimate = Some(s_hat_tail_estimate(
                kernel,
                window,
                threshold,
                depth.saturating_mul(4),
                config.replicas.min(ERROR_ESTIMATE_REPLICAS),
                mix_seed(seed, 0xE5),
            )?);
            out
        }
        Algorithm::Doeblin => {
            let cert = doeblin_certificate(kernel, None).map_err(|e| match e {
                CouplingError::NotUnique(_) => SampleError::Precondition(e.to_string()),
                other => other.into(),
            })?;
            run_replicas(config.replicas, |r| {
                doeblin_sample(kernel, window, &cert, &mut RandomSource::for_replica(kernel, seed, r), cap)
            })?
        }
    };
    Ok(SampleBatch {
        algorithm: config.algorithm.label(),
        seed,
        states: kernel.states(),
        window: window.clone(),
        replicates,
        error_estimate,
    })
}

/// Forward simulation from `boundary` at `r`, one replicate per replica.
pub fn forward_batch(
    kernel: &ImitationKernel,
    window: &Window,
    boundary: &BoundarySpec,
    r: Site,
    replicas: u64,
    seed: u64,
) -> Result<SampleBatch, SampleError> {
    let replicates = run_replicas(replicas, |i| {
        let mut rng = RandomSource::for_replica(kernel, seed, i);
        let run = forward_simulate(kernel, boundary, r, window, &mut rng)?;
        Ok(Replicate {
            values: run.window(window, boundary, &mut rng),
            diagnostics: super::Diagnostics { steps: run.values.len() as u64, ..Default::default() },
        })
    })?;
    Ok(SampleBatch {
        algorithm: format!("forward(r={r})"),
        seed,
        states: kernel.states(),
        window: window.clone(),
        replicates,
        error_estimate: None,
    })
}

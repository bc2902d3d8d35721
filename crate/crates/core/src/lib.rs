//! Finite-alphabet imitation kernels `p(g | past) = Σ_k θ_k P_(k)(w_{−k}, g)`:
//! structural classification, invariant laws, backward random walks and
//! exact or thresholded samplers for the compatible law on finite windows.

pub mod cli;
pub mod coupling;
pub mod invariant;
pub mod kernel;
pub mod matrix;
pub mod rng;
pub mod samplers;
pub mod structure;
pub mod tail;
pub mod validate;
pub mod walks;

pub use coupling::{apply_coupling, compose_coupling, doeblin_certificate, star_coupling, DoeblinCertificate};
pub use invariant::{invariant_distribution, p_hat, Distribution};
pub use kernel::{
    coalescence_verdict, parse_kernel_spec, validate_kernel, CoalescenceVerdict, ImitationKernel, KernelSpec, State,
};
pub use matrix::StochasticMatrix;
pub use rng::{RandomSource, Site};
pub use structure::{uniqueness_verdict, StructureReport, Verdict};
pub use tail::{TailFamily, TailSpec};
pub use walks::Window;

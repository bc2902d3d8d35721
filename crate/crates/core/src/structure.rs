//! Structure of the G-stochastic function `k ↦ P_(k)`: words, class
//! decomposition, the gcd period `d(A)`, the chain period `d̂` with its
//! periodic partition, and the resulting uniqueness verdict.

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;

use crate::kernel::{ImitationKernel, State, SupportEntry};
use crate::matrix::StochasticMatrix;
use crate::tail::TailSpec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("letter {0} is not in the support")]
    LetterNotInSupport(u64),
    #[error("empty word")]
    EmptyWord,
    #[error("d(A) = 1, nothing to reduce")]
    AlreadyReduced,
    #[error("d(A) = {0}; reduce the kernel first")]
    NotReduced(u64),
    #[error("kernel has {0} closed classes, expected exactly one")]
    NotEssentiallyIrreducible(usize),
}

/// `s(a) = Σ aᵢ`.
pub fn word_depth(kernel: &ImitationKernel, word: &[u64]) -> Result<u64, StructureError> {
    if word.is_empty() {
        return Err(StructureError::EmptyWord);
    }
    word.iter().try_fold(0u64, |acc, &a| {
        if kernel.contains(a) {
            Ok(acc + a)
        } else {
            Err(StructureError::LetterNotInSupport(a))
        }
    })
}

/// `P_a = P_(a_n)···P_(a_1)`.
pub fn word_matrix(kernel: &ImitationKernel, word: &[u64]) -> Result<StochasticMatrix, StructureError> {
    let (&first, rest) = word.split_first().ok_or(StructureError::EmptyWord)?;
    let mut acc = kernel.matrix(first).ok_or(StructureError::LetterNotInSupport(first))?.clone();
    for &a in rest {
        let m = kernel.matrix(a).ok_or(StructureError::LetterNotInSupport(a))?;
        acc = m.mul(&acc);
    }
    Ok(acc)
}

/// Closed classes `R₁..R_s` (each sorted, ordered by smallest member) and the
/// transient set `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Classes {
    pub closed: Vec<Vec<State>>,
    pub transient: Vec<State>,
}

impl Classes {
    pub fn recurrent(&self) -> Vec<State> {
        let mut r: Vec<State> = self.closed.iter().flatten().copied().collect();
        r.sort_unstable();
        r
    }
}

/// Class decomposition of the digraph on `0..n` with arcs given by `arc`.
pub fn graph_classes(n: usize, arc: impl Fn(usize, usize) -> bool) -> Classes {
    let mut g = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if arc(i, j) {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&g);
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            component[v.index()] = c;
        }
    }
    let mut closed = Vec::new();
    let mut transient = Vec::new();
    for members in &sccs {
        let c = component[members[0].index()];
        let leaves = members.iter().any(|v| g.neighbors(*v).any(|w| component[w.index()] != c));
        let mut states: Vec<State> = members.iter().map(|v| v.index()).collect();
        states.sort_unstable();
        if leaves {
            transient.extend(states);
        } else {
            closed.push(states);
        }
    }
    closed.sort_by_key(|c| c[0]);
    transient.sort_unstable();
    Classes { closed, transient }
}

/// Classes of the support graph `i → j` iff `P_(k)(i,j) > 0` for some `k`.
pub fn communicating_decomposition(kernel: &ImitationKernel) -> Classes {
    let mats: Vec<&StochasticMatrix> = kernel.weighted_matrices().map(|(_, m)| m).collect();
    graph_classes(kernel.states(), |i, j| mats.iter().any(|m| m.positive(i, j)))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `d(A)`; a tail contributes `k₀` and `k₀+1`, hence forces 1.
pub fn alphabet_gcd(kernel: &ImitationKernel) -> u64 {
    kernel.representative_letters().iter().fold(0, |d, (k, _)| gcd(d, *k))
}

/// The kernel on `Ā = {k / d(A)}` with `θ̄_l = θ_{l·d(A)}` and `P̄_(l) = P_(l·d(A))`.
pub fn reduce_kernel(kernel: &ImitationKernel) -> Result<ImitationKernel, StructureError> {
    let d = alphabet_gcd(kernel);
    if d == 1 {
        return Err(StructureError::AlreadyReduced);
    }
    let support = kernel
        .support()
        .iter()
        .map(|s| SupportEntry { k: s.k / d, theta: s.theta, matrix: s.matrix.clone() })
        .collect();
    Ok(ImitationKernel::assemble(kernel.states(), kernel.labels().map(<[String]>::to_vec), support, None))
}

/// Restriction to the union `R` of closed classes. Returns the restricted
/// kernel and, for each of its states, the original state.
pub fn restrict_to_recurrent(kernel: &ImitationKernel) -> (ImitationKernel, Vec<State>) {
    let classes = communicating_decomposition(kernel);
    let keep = classes.recurrent();
    if classes.transient.is_empty() {
        return (kernel.clone(), keep);
    }
    let support = kernel
        .support()
        .iter()
        .map(|s| {
            let mut m = s.matrix.restrict(&keep);
            m.renormalize();
            SupportEntry { k: s.k, theta: s.theta, matrix: m }
        })
        .collect();
    let tail = kernel.tail().map(|t| {
        let mut m = t.matrix().restrict(&keep);
        m.renormalize();
        TailSpec::new(t.family(), t.start(), t.mass(), m)
    });
    let labels = kernel.labels().map(|l| keep.iter().map(|&i| l[i].clone()).collect());
    (ImitationKernel::assemble(keep.len(), labels, support, tail), keep)
}

/// `d̂` and the periodic partition `G₀..G_{d̂−1}` of the single closed class,
/// via potentials on the weighted support digraph. `G₀` holds the smallest
/// state of the class.
pub fn chain_period_and_partition(kernel: &ImitationKernel) -> Result<(u64, Vec<Vec<State>>), StructureError> {
    let d_a = alphabet_gcd(kernel);
    if d_a != 1 {
        return Err(StructureError::NotReduced(d_a));
    }
    let classes = communicating_decomposition(kernel);
    if classes.closed.len() != 1 {
        return Err(StructureError::NotEssentiallyIrreducible(classes.closed.len()));
    }
    let class = &classes.closed[0];
    let n = kernel.states();
    let letters = kernel.representative_letters();
    let mut arcs: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    for &u in class {
        for (k, m) in &letters {
            for v in 0..n {
                if m.positive(u, v) {
                    arcs[u].push((v, *k));
                }
            }
        }
    }

    let mut potential: Vec<Option<i128>> = vec![None; n];
    let root = class[0];
    potential[root] = Some(0);
    let mut stack = vec![root];
    let mut period = 0u64;
    while let Some(u) = stack.pop() {
        let lu = potential[u].expect("visited");
        for &(v, w) in &arcs[u] {
            match potential[v] {
                None => {
                    potential[v] = Some(lu + i128::from(w));
                    stack.push(v);
                }
                Some(lv) => {
                    let gap = (lu + i128::from(w) - lv).unsigned_abs();
                    period = gcd(period, u64::try_from(gap).expect("potential gap fits u64"));
                }
            }
        }
    }
    // Tree arcs contribute zero; a closed class always has a cycle.
    let period = period.max(1);
    let mut partition = vec![Vec::new(); period as usize];
    for &v in class {
        let h = potential[v].expect("class is strongly connected").rem_euclid(i128::from(period));
        partition[h as usize].push(v);
    }
    Ok((period, partition))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Unique,
    NonUniquePeriodic,
    NonUniqueMultipleClasses,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub d_a: u64,
    pub classes: Classes,
    pub essential_irreducible: bool,
    pub chain_period: Option<u64>,
    /// Partition of the closed class, in original state indices.
    pub periodic_partition: Option<Vec<Vec<State>>>,
    pub verdict: Verdict,
    /// What each pipeline stage did.
    pub stages: Vec<String>,
}

/// Restrict to `R`, reduce by `d(A)`, then compute `d̂`.
pub fn uniqueness_verdict(kernel: &ImitationKernel) -> StructureReport {
    let mut stages = Vec::new();
    let classes = communicating_decomposition(kernel);
    let d_a = alphabet_gcd(kernel);
    let (restricted, keep) = restrict_to_recurrent(kernel);
    if classes.transient.is_empty() {
        stages.push("restrict: no transient states".to_string());
    } else {
        stages.push(format!(
            "restrict: dropped {} transient state(s), {} recurrent remain",
            classes.transient.len(),
            keep.len()
        ));
    }
    if classes.closed.len() > 1 {
        stages.push(format!("classes: {} closed classes", classes.closed.len()));
        return StructureReport {
            d_a,
            classes,
            essential_irreducible: false,
            chain_period: None,
            periodic_partition: None,
            verdict: Verdict::NonUniqueMultipleClasses,
            stages,
        };
    }
    stages.push("classes: essentially irreducible".to_string());
    let reduced = if d_a > 1 {
        stages.push(format!("reduce: divided the support by d(A) = {d_a}"));
        reduce_kernel(&restricted).expect("d(A) > 1")
    } else {
        stages.push("reduce: d(A) = 1".to_string());
        restricted
    };
    let (period, partition) = chain_period_and_partition(&reduced).expect("restricted and reduced kernel");
    let partition: Vec<Vec<State>> = partition.into_iter().map(|g| g.into_iter().map(|v| keep[v]).collect()).collect();
    stages.push(format!("period: d̂ = {period}"));
    StructureReport {
        d_a,
        classes,
        essential_irreducible: true,
        chain_period: Some(period),
        periodic_partition: Some(partition),
        verdict: if period == 1 { Verdict::Unique } else { Verdict::NonUniquePeriodic },
        stages,
    }
}

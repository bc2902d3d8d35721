//! Counter-based randomness keyed by site.
//!
//! Every draw is a pure function of `(seed, replica, purpose, index)`: the
//! ChaCha key holds the seed and replica, the stream number holds the purpose
//! and the block position holds the index. Nothing is generated sequentially,
//! so sites can be queried in any order and revisited across restarts.

use std::collections::HashMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernel::ImitationKernel;

pub type Site = i64;

/// Independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// `(K_n, U_n)` at each site.
    Site = 0,
    /// Invariant-law draws at walk roots.
    Invariant = 1,
    /// `U*` draws on located segments.
    Star = 2,
    /// I.i.d. boundary values.
    Boundary = 3,
    /// Distance-chain decrements, indexed by step.
    VonSchelling = 4,
}

const BLOCK_WORDS: u128 = 16;

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draws addressed by `(purpose, index, slot)`.
#[derive(Clone)]
pub struct Streams {
    seed: u64,
    replica: u64,
    core: ChaCha8Rng,
}

impl std::fmt::Debug for Streams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Streams").field("seed", &self.seed).field("replica", &self.replica).finish()
    }
}

impl Streams {
    pub fn new(seed: u64, replica: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&replica.to_le_bytes());
        Self { seed, replica, core: ChaCha8Rng::from_seed(key) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Uniform on `[0,1)` with 53 random bits. `slot < 8`.
    pub fn uniform(&mut self, purpose: Purpose, index: i64, slot: u8) -> f64 {
        debug_assert!(slot < 8);
        let block = (i128::from(index) - i128::from(i64::MIN)) as u128;
        self.core.set_stream(purpose as u64);
        self.core.set_word_pos(block * BLOCK_WORDS + 2 * u128::from(slot));
        (self.core.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Per-replica randomness bound to one kernel, with the memoized site map
/// `n ↦ (K_n, U_n)`.
#[derive(Debug)]
pub struct RandomSource<'k> {
    kernel: &'k ImitationKernel,
    streams: Streams,
    memo: HashMap<Site, (u64, f64)>,
}

impl<'k> RandomSource<'k> {
    pub fn new(kernel: &'k ImitationKernel, seed: u64) -> Self {
        Self::for_replica(kernel, seed, 0)
    }

    pub fn for_replica(kernel: &'k ImitationKernel, seed: u64, replica: u64) -> Self {
        Self { kernel, streams: Streams::new(seed, replica), memo: HashMap::new() }
    }

    pub fn kernel(&self) -> &'k ImitationKernel {
        self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.streams.seed()
    }

    /// `(K_n, U_n)`, materialized on first request.
    pub fn site(&mut self, n: Site) -> (u64, f64) {
        if let Some(&v) = self.memo.get(&n) {
            return v;
        }
        let v = self.draw_site(n);
        self.memo.insert(n, v);
        v
    }

    pub fn decrement(&mut self, n: Site) -> u64 {
        self.site(n).0
    }

    /// `(K_n, U_n)` without touching the memo; same values as [`RandomSource::site`].
    pub fn draw_site(&mut self, n: Site) -> (u64, f64) {
        let uk = self.streams.uniform(Purpose::Site, n, 0);
        let uu = self.streams.uniform(Purpose::Site, n, 1);
        (self.kernel.sample_decrement(uk), uu)
    }

    /// Sites whose `(K, U)` have been materialized so far.
    pub fn revealed(&self) -> usize {
        self.memo.len()
    }

    pub fn is_revealed(&self, n: Site) -> bool {
        self.memo.contains_key(&n)
    }

    /// `(K_n, U_n)` if already materialized.
    pub fn revealed_site(&self, n: Site) -> Option<(u64, f64)> {
        self.memo.get(&n).copied()
    }

    pub fn uniform(&mut self, purpose: Purpose, index: i64) -> f64 {
        self.streams.uniform(purpose, index, 0)
    }
}

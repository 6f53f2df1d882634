//! Deterministic seed derivation. Every run owns one root seed; all
//! randomness (state sampling, optimizer restarts, CV folds, shot noise)
//! flows from it through named, counter-indexed children, so any artifact is
//! reproducible from the manifest alone.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Root seed plus the derivation scheme `child = mix(mix(root ^ fnv(domain)) ^ index)`.
#[derive(Clone, Copy, Debug)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Derived seed for a named domain and counter, e.g. ("horodecki", 17).
    pub fn child(&self, domain: &str, index: u64) -> u64 {
        mix(mix(self.root ^ fnv1a(domain.as_bytes())) ^ index)
    }

    /// Fresh generator for a domain/index pair.
    pub fn rng(&self, domain: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.child(domain, index))
    }

    /// Nested tree, for components that fan out their own substreams.
    pub fn subtree(&self, domain: &str, index: u64) -> SeedTree {
        SeedTree { root: self.child(domain, index) }
    }
}

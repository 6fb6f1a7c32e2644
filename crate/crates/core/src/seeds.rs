//! Seed derivation. One top-level seed feeds every random choice; each
//! subsystem gets its own stream at a fixed labeled offset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Dedup,
    Split,
    Pairs,
    Folds,
}

impl Subsystem {
    const fn offset(self) -> u64 {
        match self {
            Subsystem::Dedup => 0x6465_6475_7000_0001,
            Subsystem::Split => 0x7370_6c69_7400_0002,
            Subsystem::Pairs => 0x7061_6972_7300_0003,
            Subsystem::Folds => 0x666f_6c64_7300_0004,
        }
    }
}

pub fn derive(seed: u64, subsystem: Subsystem) -> u64 {
    seed.wrapping_add(subsystem.offset())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and runs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-label seed: stable under reordering of unrelated labels.
pub fn labeled(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a(label.as_bytes()))
}

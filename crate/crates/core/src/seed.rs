//! Seed derivation for independent, order-free RNG streams.
//!
//! Every stochastic concern (partitioning, init, routing, peer choice,
//! shuffling) draws from its own stream keyed by `(base seed, concern,
//! indices...)`, so results never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed forever: changing one changes every run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Partition = 0x5041_5254,
    Init = 0x494e_4954,
    Routing = 0x524f_5554,
    PeerChoice = 0x5045_4552,
    Shuffle = 0x5348_5546,
    Tasks = 0x5441_534b,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with a stream tag and a list of indices into a new 64-bit seed.
pub fn derive(base: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(base: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    rng(derive(base, stream, indices))
}

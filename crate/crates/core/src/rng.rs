//! Seed derivation for the independent random streams of a run.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used for every random stream in the simulator.
pub type SimRng = Xoshiro256PlusPlus;

/// Purpose tags for derived streams, so that streams with equal numeric
/// coordinates but different roles never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    TrainData = 2,
    TestData = 3,
    ReferenceData = 4,
    Prototypes = 5,
    Partition = 6,
    ClientShuffle = 7,
    RandomPruning = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of coordinates (e.g. client id, round).
pub fn derive_seed(seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, coords: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream, coords))
}

//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed and a fixed stream label, so adding or removing one consumer never
//! shifts the numbers another one sees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// FNV-1a hash of a label, used to turn section names into stream ids.
pub fn label_id(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stream keyed by a textual label.
pub fn labeled(seed: u64, label: &str) -> StreamRng {
    stream(seed, label_id(label))
}

pub fn uniform<T: Real>(rng: &mut impl Rng, lo: f64, hi: f64) -> T {
    T::of(lo + (hi - lo) * rng.random::<f64>())
}

/// Vector of `len` draws from U(-bound, bound).
pub fn centered_uniform<T: Real>(rng: &mut impl Rng, len: usize, bound: f64) -> alloc::vec::Vec<T> {
    (0..len).map(|_| uniform(rng, -bound, bound)).collect()
}

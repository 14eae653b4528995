//! Named random sub-streams derived from one root seed.
//!
//! Every stage draws from its own ChaCha stream, selected by hashing a stream
//! name, so stages stay reproducible independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

/// 64-bit FNV-1a.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG for the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

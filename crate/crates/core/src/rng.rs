//! Named, index-addressed random substreams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a stream label and a list of indices into one 64-bit key.
pub fn stream_key(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x5151_7E5D_A7A0_11CE);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix(h ^ i.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

pub fn substream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, label, indices))
}

/// Uniform value in [0, 1) from a key, for deterministic hashing uses.
pub fn unit_from_key(key: u64) -> f64 {
    (splitmix(key) >> 11) as f64 / (1u64 << 53) as f64
}

//! Stateless deterministic hashing for seeds and Bernoulli draws.
//!
//! Mock adapters and the audit runner both need randomness that is a pure
//! function of its inputs: the same (seed, sample, prompt) must produce the
//! same draw no matter how many queries ran before it or on which thread.

use sha2::{Digest, Sha256};

/// Collapse length-prefixed byte parts into one 64-bit value.
///
/// Parts are length-prefixed before hashing so ("ab", "c") and ("a", "bc")
/// cannot collide.
pub fn hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Map a hash to the unit interval [0, 1) with 53 bits of precision.
pub fn unit(hash: u64) -> f64 {
    (hash >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Per-sample RNG seed derived from the run seed and a stable sample id.
pub fn sample_seed(run_seed: u64, sample_id: &str) -> u64 {
    hash64(&[b"sample", &run_seed.to_be_bytes(), sample_id.as_bytes()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_are_length_prefixed() {
        assert_ne!(hash64(&[b"ab", b"c"]), hash64(&[b"a", b"bc"]));
        assert_eq!(hash64(&[b"ab", b"c"]), hash64(&[b"ab", b"c"]));
    }

    #[test]
    fn unit_stays_in_range() {
        for i in 0..1000u64 {
            let u = unit(hash64(&[&i.to_be_bytes()]));
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn unit_is_roughly_uniform() {
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|i: u64| unit(hash64(&[b"uniformity", &i.to_be_bytes()])))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}

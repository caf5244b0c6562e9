//! Seeded sampling helpers. All randomness in the crate flows through
//! `ChaCha8Rng` instances owned by the caller, so runs are bit-reproducible
//! across platforms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Draw an index from a categorical distribution given by `probs`.
///
/// `probs` must be nonnegative and sum to ~1; the last positive entry absorbs
/// any floating-point slack.
pub(crate) fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Sample from a symmetric Dirichlet(1) by normalizing unit exponentials.
pub(crate) fn dirichlet_flat(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen::<f64>();
            // Guard against ln(0).
            -(u.max(1e-300)).ln()
        })
        .collect();
    let total: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= total;
    }
    draws
}

/// Derive a per-instance RNG from a base seed and an instance index.
pub(crate) fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    // SplitMix64 step keeps instance streams decorrelated.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

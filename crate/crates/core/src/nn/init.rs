use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` draws from U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
pub fn he_uniform_init(fan_in: usize, n: usize, seed: u64) -> Vec<f64> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Derive an independent stream seed for `index` from a master seed
/// (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

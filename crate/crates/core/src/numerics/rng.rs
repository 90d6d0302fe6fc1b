use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere randomness is needed. Seeded construction
/// gives bitwise-identical streams across runs and platforms.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose from a base seed.
pub fn derive(seed: u64, purpose: &str) -> Rng {
    let h = crate::fingerprint::fnv64(purpose.as_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

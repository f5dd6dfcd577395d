//! Seed derivation. Every random consumer gets its own ChaCha stream keyed
//! from the run seed, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COST_DOMAIN: u64 = 0x636f_7374_5f66_6e73;
const BACKOFF_DOMAIN: u64 = 0x6261_636b_6f66_6621;

/// Stream used to draw device `device`'s cost function.
pub fn cost_stream(seed: u64, device: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ COST_DOMAIN);
    rng.set_stream(device as u64);
    rng
}

/// Back-off coin stream for one (device, resource) pair.
pub fn backoff_stream(seed: u64, device: usize, resource: usize, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BACKOFF_DOMAIN);
    rng.set_stream((device * m + resource) as u64);
    rng
}

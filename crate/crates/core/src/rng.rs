//! Seed derivation.
//!
//! Every consumer of randomness gets its own ChaCha8 stream derived from the
//! run seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness. The discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consumer {
    ModelInit = 1,
    SourceBatches = 2,
    TargetLabeledBatches = 3,
    TargetUnlabeledBatches = 4,
    SyntheticOracle = 5,
    SyntheticSamples = 6,
}

pub fn stream(seed: u64, consumer: Consumer) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(consumer as u64);
    rng
}

//! Splittable deterministic RNG streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, unit, purpose, aux)`. Streams are independent ChaCha instances,
//! so parallel workers can draw for different units in any order and still
//! produce identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Keeps streams for different stages of the
/// pipeline disjoint even when they share a unit id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Covariates,
    Treatment,
    Censoring,
    EventTime,
    ControlModel,
    CvFolds,
    Matching,
    Bootstrap,
    Permutation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Covariates => 1,
            Purpose::Treatment => 2,
            Purpose::Censoring => 3,
            Purpose::EventTime => 4,
            Purpose::ControlModel => 5,
            Purpose::CvFolds => 6,
            Purpose::Matching => 7,
            Purpose::Bootstrap => 8,
            Purpose::Permutation => 9,
        }
    }
}

/// Independent stream for `(seed, unit, purpose, aux)`.
pub fn stream(seed: u64, unit: u64, purpose: Purpose, aux: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&unit.to_le_bytes());
    key[16..24].copy_from_slice(&purpose.tag().to_le_bytes());
    key[24..32].copy_from_slice(&aux.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

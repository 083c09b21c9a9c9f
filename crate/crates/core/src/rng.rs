//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by a seed
//! derived from a root seed plus a path of labels, so streams are independent
//! of call order and of how work is interleaved. There is no global RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Identifier of the generator stack, written into run metadata. Bump it
/// whenever seed derivation or sampling changes.
pub const RNG_VERSION: &str = "chacha8+splitmix64-derive+ziggurat-normal/v1";

pub type Rng = ChaCha8Rng;

// Stream labels, kept in one place so two call sites never collide.
pub(crate) const STREAM_PARAM: u64 = 0x5041_5241;
pub(crate) const STREAM_SAMPLE: u64 = 0x5341_4d50;
pub(crate) const STREAM_CODEBOOK: u64 = 0x434f_4445;
pub(crate) const STREAM_SPLIT: u64 = 0x5350_4c54;
pub(crate) const STREAM_HOLDOUT: u64 = 0x484f_4c44;
pub(crate) const STREAM_CLIENTS: u64 = 0x434c_4e54;
pub(crate) const STREAM_SHUFFLE: u64 = 0x5348_4646;
pub(crate) const STREAM_SEAL: u64 = 0x5345_414c;
pub(crate) const STREAM_MODEL: u64 = 0x4d4f_444c;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a label path.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

/// A generator for the stream `(root, path)`.
pub fn stream(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, path))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

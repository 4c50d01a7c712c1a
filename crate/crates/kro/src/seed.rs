//! Deterministic seed derivation.
//!
//! Every stochastic stage takes an explicit seed, and stages that need many
//! independent streams (one per trajectory, one per calibration sample)
//! derive them from a base seed and an index. SplitMix64 is used as the
//! mixer: cheap, full-period, and well separated even for adjacent indices.

/// Derives the `index`-th child seed of `base`.
pub fn derive(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

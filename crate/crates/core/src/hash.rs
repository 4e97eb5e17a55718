//! Stateless integer hashing for schedule-independent randomness.

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a key tuple into 64 well-mixed bits.
#[inline]
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6c61_6e64_6d61_7021, |h, &k| splitmix64(h ^ splitmix64(k)))
}

/// Uniform draw in `[0, 1)` from a hash.
#[inline]
pub fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

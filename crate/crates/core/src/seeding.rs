//! Seed derivation. Every random stream in a run is keyed off the run seed
//! plus a stable tag, so streams never depend on the order they are created.

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `seed`.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Seed for the stream named `tag` under `seed`.
pub fn derive(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag bytes
    let h = tag
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix(seed, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_and_indices_separate_streams() {
        assert_ne!(derive(0, "a"), derive(0, "b"));
        assert_ne!(derive(0, "a"), derive(1, "a"));
        assert_eq!(derive(3, "decoder.0.weight"), derive(3, "decoder.0.weight"));
        assert_ne!(mix(7, 0), mix(7, 1));
    }
}

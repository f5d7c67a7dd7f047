//! Counter-based edge randomness.
//!
//! Every lattice edge gets a uniform 64-bit word that is a pure function of
//! `(seed, sample_index, edge key)`. The edge key depends only on the edge's
//! position in `Z^d`, never on the window, so the same edge carries the same
//! word in every window and at every `p`. Thresholding that word at `p`
//! gives the standard monotone coupling across parameters.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Moremur finalizer (a SplitMix64 variant with better avalanche).
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 27;
    x = x.wrapping_mul(0x3C79_AC49_2BA7_B653);
    x ^= x >> 33;
    x = x.wrapping_mul(0x1C69_B3F7_4AC4_AE35);
    x ^= x >> 27;
    x
}

/// Per-sample key; cheap to copy across threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64, sample_index: u64) -> Self {
        let s = mix64(seed ^ 0x5851_F42D_4C95_7F2D);
        StreamKey(mix64(s ^ mix64(sample_index.wrapping_mul(GOLDEN).wrapping_add(0x2545_F491_4F6C_DD1D))))
    }

    /// Uniform word for one edge.
    #[inline]
    pub fn word(self, edge_key: u64) -> u64 {
        mix64(self.0.wrapping_add(edge_key.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// The same word mapped to `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn unit(self, edge_key: u64) -> f64 {
        (self.word(edge_key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Openness cutoff for a parameter `p`: an edge is open iff its word is below the cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    All,
    Below(u64),
}

impl Threshold {
    pub fn new(p: f64) -> Self {
        if p >= 1.0 {
            Threshold::All
        } else if p <= 0.0 {
            Threshold::Below(0)
        } else {
            // 2^64 * p, saturating below 2^64.
            Threshold::Below((p * 18_446_744_073_709_551_616.0) as u64)
        }
    }

    #[inline]
    pub fn admits(self, word: u64) -> bool {
        match self {
            Threshold::All => true,
            Threshold::Below(t) => word < t,
        }
    }
}

//! Counter-based deterministic random number streams.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so streams
//! can be handed to workers in any order without changing results. The mixing
//! function is a SplitMix64-style finalizer applied twice:
//!
//! ```text
//! mix(z) = h(h(z * C1) * C2)          with h(z) = z ^ (z >> shift)
//! key    = mix(seed + mix(stream_id))
//! draw_c = mix(key ^ (c * 0x9E3779B97F4A7C15))
//! ```
//!
//! Child streams derive a fresh `stream_id` from the parent id and a tag, so
//! per-epoch / per-sample / per-view streams form a collision-free tree for
//! all practical purposes.

/// SplitMix64 finalizer. Full 64-bit avalanche.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const DERIVE_SALT: u64 = 0xa076_1d64_78bd_642f;

/// One independent random stream. Copy-cheap; move it, don't share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
}

impl RngStream {
    /// Root stream for a run.
    pub fn root(seed: u64) -> Self {
        RngStream { seed, stream_id: 0, counter: 0 }
    }

    /// Child stream with an independent sequence. Deterministic in
    /// `(parent stream_id, tag)`; the counter restarts at zero.
    pub fn derive(&self, tag: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream_id: mix(mix(self.stream_id ^ DERIVE_SALT) ^ tag.wrapping_mul(GOLDEN)),
            counter: 0,
        }
    }

    /// Child stream tagged by a label (FNV-1a hash of the bytes).
    pub fn derive_label(&self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in label.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.derive(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next raw 64-bit draw; advances the counter by one.
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        let key = mix(self.seed.wrapping_add(mix(self.stream_id)));
        mix(key ^ self.counter.wrapping_mul(GOLDEN))
    }

    /// Uniform in `[0, 1)` with 24 bits of mantissa.
    pub fn next_f32(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / 16_777_216.0)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

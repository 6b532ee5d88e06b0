//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so any frame,
//! object or epoch can be regenerated in isolation and other implementations
//! can reproduce the exact same numbers.
//!
//! Algorithm (all arithmetic wrapping on `u64`):
//!
//! ```text
//! GAMMA = 0x9E37_79B9_7F4A_7C15
//! mix(z):  z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//!          z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//!          z ^ (z >> 31)
//! key      = mix(seed ^ mix(stream + GAMMA))
//! draw(i)  = mix(key + (i + 1) * GAMMA)          i = 0, 1, 2, ...
//! uniform  = (draw >> 11) * 2^-53                 in [0, 1)
//! normal   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)   two consecutive uniforms
//! ```
//!
//! Streams are derived from tuples of integers with [`stream_id`], which folds
//! each component through `mix` in order.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of integers into one stream identifier.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5054_5453_5452_4D00u64, |acc, &p| {
        mix64(acc ^ p.wrapping_add(GAMMA))
    })
}

/// Named purposes, so different consumers of the same seed never share a stream.
pub mod purpose {
    pub const SCENE_INIT: u64 = 1;
    pub const FRAME_POINTS: u64 = 2;
    pub const CLUTTER: u64 = 3;
    pub const PROPOSALS: u64 = 4;
    pub const ROI_SAMPLE: u64 = 5;
    pub const PARAM_INIT: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: mix64(seed ^ mix64(stream.wrapping_add(GAMMA))),
            counter: 0,
        }
    }

    pub fn for_parts(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_id(parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the cosine branch of Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

//! Seeded, splittable random streams.
//!
//! A stream is addressed by `(master_seed, stream_id)` on top of ChaCha8,
//! which exposes independent counter streams. The same address reproduces the
//! identical sequence on any platform, and distinct stream ids give
//! statistically independent sequences, so parallel Monte-Carlo trials can
//! each own a stream while the aggregate stays schedule-independent.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::fmath;

const TWO_POW_NEG53: f64 = 1.0 / ((1u64 << 53) as f64);

/// One reproducible random stream. Single-owner: not shared across threads.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    master_seed: u64,
    stream_id: u64,
}

/// Create the stream addressed by `(master_seed, stream_id)`.
pub fn seeded_stream(master_seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    RngStream {
        rng,
        master_seed,
        stream_id,
    }
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1): the top 53 bits of one word.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    /// Uniform in (0, 1]; safe as a log argument.
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG53
    }

    /// Uniform in [-1, 1).
    #[inline]
    pub fn uniform_symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Standard normal via Box-Muller (two words per draw, no cached state).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.uniform();
        fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// ±1 with equal probability.
    #[inline]
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Sum of `k` independent ±1 variables, 64 per word via popcount.
    pub fn signed_bit_sum(&mut self, k: usize) -> i64 {
        let mut ones: i64 = 0;
        let mut remaining = k;
        while remaining >= 64 {
            ones += self.next_u64().count_ones() as i64;
            remaining -= 64;
        }
        if remaining > 0 {
            let word = self.next_u64() & ((1u64 << remaining) - 1);
            ones += word.count_ones() as i64;
        }
        2 * ones - k as i64
    }
}

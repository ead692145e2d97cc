//! Splittable random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`] keyed by
//! `(master_seed, path_index, role)`. The underlying generator is ChaCha8,
//! which is counter based: the key is derived from the master seed and the
//! 64-bit stream id encodes path index and role. Path `i` therefore sees the
//! same numbers no matter which worker simulates it or in what order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. Distinct roles of the same path never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Multiplicative noise.
    Multiplicative,
    /// Additive noise or nonlinear envelope.
    Additive,
    /// Direct draws of the integrated noise in exact-Gaussian mode.
    GaussianY,
    /// Synthetic samples for estimator self-tests.
    Auxiliary(u8),
}

impl StreamRole {
    fn code(self) -> u64 {
        match self {
            StreamRole::Multiplicative => 0x000,
            StreamRole::Additive => 0x100,
            StreamRole::GaussianY => 0x200,
            StreamRole::Auxiliary(c) => 0x300 | c as u64,
        }
    }
}

const ROLE_BITS: u32 = 12;

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, path_index: u64, role: StreamRole) -> Self {
        assert!(
            path_index < (1u64 << (64 - ROLE_BITS)),
            "path index {path_index} out of range"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream((path_index << ROLE_BITS) | role.code());
        Self { rng }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

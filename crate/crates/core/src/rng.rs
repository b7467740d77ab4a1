//! Deterministic, order-independent random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(master_seed, stream_id)`. Streams are ChaCha12 instances sharing the
//! master seed as key and using the stream id as the ChaCha nonce, so any
//! number of trials can be evaluated in any order on any number of threads
//! and still reproduce the same draws.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RandomStream(ChaCha12Rng);

/// Returns the stream identified by `(master_seed, stream_id)`.
pub fn spawn_rng(master_seed: u64, stream_id: u64) -> RandomStream {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    RandomStream(rng)
}

impl RandomStream {
    pub fn standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with `E|x|^2 = variance`.
    pub fn complex_gaussian(&mut self, variance: f64) -> Complex64 {
        let sigma = (variance / 2.0).sqrt();
        let re = self.standard_normal();
        let im = self.standard_normal();
        Complex64::new(sigma * re, sigma * im)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// What a stream is used for. Part of the stream id so that, for example,
/// the channel of trial 7 never shares draws with its noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Channel = 1,
    Noise = 2,
    Prior = 3,
    Normalization = 4,
    Validation = 5,
}

/// Packs `(index, purpose, user)` into a stream id.
///
/// Layout: bits 16.. hold the trial/chunk index, bits 8..16 the purpose and
/// bits 0..8 the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    pub index: u64,
    pub purpose: Purpose,
    pub user: u8,
}

impl StreamId {
    pub fn new(index: u64, purpose: Purpose, user: usize) -> Self {
        assert!(index < 1 << 48, "stream index out of range");
        assert!(user < 256, "user id out of range");
        StreamId {
            index,
            purpose,
            user: user as u8,
        }
    }

    pub fn raw(self) -> u64 {
        (self.index << 16) | ((self.purpose as u64) << 8) | self.user as u64
    }

    pub fn spawn(self, master_seed: u64) -> RandomStream {
        spawn_rng(master_seed, self.raw())
    }
}

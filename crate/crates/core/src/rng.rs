//! Seeded, stream-separated random number generation.
//!
//! Each replica owns a ChaCha8 stream keyed by `(seed, stream_id)`; ChaCha is
//! counter based, so distinct stream ids give non-overlapping sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator used by every simulation routine in the crate.
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Sub-stream for an auxiliary process attached to the same replica.
    pub fn substream(&self, lane: u64) -> RngStream {
        RngStream::new(self.seed, (lane << 48) ^ self.stream_id)
    }
}

/// Exponential variate with the given rate via the inverse CDF.
#[inline]
pub fn exp_variate<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_values() {
        let mut a = RngStream::new(42, 7).rng();
        let mut b = RngStream::new(42, 7).rng();
        let va: Vec<u64> = (0..16).map(|_| a.gen()).collect();
        let vb: Vec<u64> = (0..16).map(|_| b.gen()).collect();
        assert_eq!(va, vb);
    }

    #[test]
    fn different_streams_differ() {
        let mut a = RngStream::new(42, 0).rng();
        let mut b = RngStream::new(42, 1).rng();
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn exponential_mean() {
        let mut rng = RngStream::new(1, 0).rng();
        let n = 200_000;
        let mean = (0..n).map(|_| exp_variate(&mut rng, 2.0)).sum::<f64>() / n as f64;
        // sd of the mean is 0.5 / sqrt(n)
        assert!((mean - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }
}

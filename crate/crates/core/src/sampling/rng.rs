use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Coordinates of an independent random stream within a run.
///
/// The triple is written verbatim into the ChaCha key together with the run
/// seed, so distinct keys give distinct, non-overlapping streams and any
/// sample is a pure function of `(seed, key)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub epoch: u64,
    pub point: u64,
    pub group: u64,
}

impl StreamKey {
    /// Marks the point slot of batch-level streams (collocation sampling).
    pub const WHOLE_BATCH: u64 = u64::MAX;

    pub const fn new(epoch: u64, point: u64, group: u64) -> Self {
        Self { epoch, point, group }
    }

    /// Frozen test set.
    pub const fn test_set() -> Self {
        Self::new(u64::MAX, Self::WHOLE_BATCH, 0)
    }

    /// Noise used when scoring the model on the test set.
    pub const fn test_noise(point: u64) -> Self {
        Self::new(u64::MAX, point, 1)
    }

    /// Network initialization.
    pub const fn init() -> Self {
        Self::new(u64::MAX - 1, Self::WHOLE_BATCH, 0)
    }

    /// Random problem parameters (drift vector, solution coefficients, costs).
    pub const fn problem_params(slot: u64) -> Self {
        Self::new(u64::MAX - 2, Self::WHOLE_BATCH, slot)
    }

    /// Residual collocation points of one epoch.
    pub const fn collocation(epoch: u64) -> Self {
        Self::new(epoch, Self::WHOLE_BATCH, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub key: StreamKey,
}

impl RngStream {
    pub const fn new(seed: u64, key: StreamKey) -> Self {
        Self { seed, key }
    }

    pub fn with_key(self, key: StreamKey) -> Self {
        Self { key, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[0..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.key.epoch.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.key.point.to_le_bytes());
        bytes[24..32].copy_from_slice(&self.key.group.to_le_bytes());
        ChaCha8Rng::from_seed(bytes)
    }

    pub fn gaussian(&self) -> GaussianSource<ChaCha8Rng> {
        GaussianSource::new(self.rng())
    }
}

/// Uniform on [0, 1) with 53 random bits.
#[inline]
pub fn uniform_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variates by the Box–Muller transform.
///
/// The transform is spelled out here rather than taken from a distribution
/// crate so the bit pattern of every sample is fixed by this code alone.
#[derive(Debug, Clone)]
pub struct GaussianSource<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> GaussianSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - uniform_f64(&mut self.rng);
        let u2 = uniform_f64(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64], scale: f64) {
        for v in out {
            *v = scale * self.sample();
        }
    }

    pub fn uniform(&mut self) -> f64 {
        uniform_f64(&mut self.rng)
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_reproduce() {
        let s = RngStream::new(42, StreamKey::new(3, 7, 1));
        let a: Vec<f64> = (0..10).map({
            let mut g = s.gaussian();
            move |_| g.sample()
        }).collect();
        let mut g = s.gaussian();
        let b: Vec<f64> = (0..10).map(|_| g.sample()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_differ() {
        let a = RngStream::new(42, StreamKey::new(3, 7, 1)).rng().next_u64();
        let b = RngStream::new(42, StreamKey::new(3, 7, 2)).rng().next_u64();
        let c = RngStream::new(43, StreamKey::new(3, 7, 1)).rng().next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_moments() {
        let mut g = RngStream::new(1, StreamKey::new(0, 0, 0)).gaussian();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.sample()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.015);
        assert!((kurt - 3.0).abs() < 0.08);
    }

    #[test]
    fn uniform_range() {
        let mut r = RngStream::new(5, StreamKey::init()).rng();
        for _ in 0..10_000 {
            let u = uniform_f64(&mut r);
            assert!((0.0..1.0).contains(&u));
        }
    }
}

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::Matrix;

/// Seeded generator backed by ChaCha8 (`rand_chacha`).
///
/// The ChaCha8 stream is fully specified by its seed, so identical seeds
/// produce identical draws on every platform. Normals use `rand_distr`'s
/// ziggurat sampler; shuffles use `rand`'s Fisher-Yates.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of generator `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    pub fn poisson(&mut self, lambda: f64) -> usize {
        if lambda <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(lambda).expect("positive finite rate");
        let k: f64 = dist.sample(&mut self.inner);
        k as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `rows x cols` matrix of `N(mean, std^2)` draws. `std == 0` yields a
    /// constant matrix without consuming the stream.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
        assert!(std >= 0.0, "negative standard deviation {std}");
        if std == 0.0 {
            return Matrix::filled(rows, cols, mean);
        }
        let data = (0..rows * cols).map(|_| self.normal(mean, std)).collect();
        Matrix::new(rows, cols, data).expect("length matches")
    }

    pub fn normal_vec(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        self.normal_matrix(n, 1, mean, std).into_vec()
    }

    /// Glorot/Xavier uniform init for a `fan_out x fan_in` weight.
    pub fn glorot_matrix(&mut self, fan_out: usize, fan_in: usize) -> Matrix {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_out * fan_in)
            .map(|_| self.uniform_range(-limit, limit))
            .collect();
        Matrix::new(fan_out, fan_in, data).expect("length matches")
    }
}

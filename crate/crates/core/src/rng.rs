//! Labelled, seeded random streams.
//!
//! Every consumer of randomness (network initialisation, environment resets,
//! exploration, replay sampling, ...) owns a dedicated [`RngStream`] derived
//! from the run seed and a human-readable label. Two streams with different
//! labels never share state, so adding draws to one never shifts another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A reproducible random stream identified by `(seed, label)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl PartialEq for RngStream {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.label == other.label && self.position() == other.position()
    }
}

fn derive_key(seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"sparseq-rng-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let rng = ChaCha8Rng::from_seed(derive_key(seed, &label));
        Self { seed, label, rng }
    }

    /// Derives a child stream: same seed, label `"{self.label}/{suffix}"`.
    pub fn child(&self, suffix: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, suffix))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rebuilds a stream at a recorded position.
    pub fn restore(seed: u64, label: impl Into<String>, position: u128) -> Self {
        let mut stream = Self::new(seed, label);
        stream.rng.set_word_pos(position);
        stream
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[low, high)`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(rand_distr::StandardNormal)
    }

    /// `m` distinct indices drawn uniformly without replacement from `0..n`,
    /// in draw order (partial Fisher-Yates).
    pub fn distinct_indices(&mut self, n: usize, m: usize) -> Vec<usize> {
        assert!(m <= n, "cannot draw {m} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(m);
        pool
    }

    /// Draws an index with probability proportional to `weights`.
    pub fn categorical(&mut self, probabilities: &[f64]) -> usize {
        assert!(!probabilities.is_empty());
        let total: f64 = probabilities.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &p) in probabilities.iter().enumerate() {
            if u < p {
                return i;
            }
            u -= p;
        }
        // Rounding can leave u marginally above the last bucket.
        probabilities
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(probabilities.len() - 1)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

//! Seeded, platform-stable random streams.
//!
//! Generator contract:
//!
//! * The bit generator is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`).
//!   The 256-bit key is expanded from `seed` by `SeedableRng::seed_from_u64`
//!   and the 64-bit ChaCha nonce is `stream`. Distinct `(seed, stream)`
//!   pairs therefore address distinct, non-overlapping keystreams.
//! * Uniform doubles take the top 53 bits of a `u64` draw.
//! * Standard normals use the Marsaglia polar method: draw `u, v` uniform on
//!   `(-1, 1)` until `0 < s = u² + v² < 1`, then emit `u·f` and `v·f` with
//!   `f = sqrt(-2 ln s / s)`, in that order.
//! * Uniform integers below `n` use rejection on the smallest covering
//!   power-of-two mask, so no modulo bias and no platform-dependent width.
//!
//! Experiments use `stream` = trial index. [`RngState::derive`] builds child
//! states for nested work (per layer, per sub-task); the child keeps the
//! parent's key and uses stream `((parent + 1) << 32) | index`. Root streams
//! stay below `2^32 - 1` and child indices below `2^32`, so children never
//! coincide with each other or with a root stream. Children cannot be
//! derived further.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A reproducible position in the space of random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child state for sub-task `index`.
    ///
    /// Panics unless `stream < 2^32 - 1` and `index < 2^32`, since the
    /// packing would then stop being injective.
    pub fn derive(&self, index: u64) -> Self {
        assert!(
            self.stream < (1 << 32) - 1 && index < (1 << 32),
            "stream derivation overflow: stream {} index {}",
            self.stream,
            index
        );
        Self {
            seed: self.seed,
            stream: ((self.stream + 1) << 32) | index,
        }
    }

    /// Instantiate the generator at the start of this stream.
    pub fn generator(&self) -> Generator {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        Generator { rng, spare: None }
    }
}

/// A live random stream implementing the sampling contract above.
#[derive(Clone, Debug)]
pub struct Generator {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Generator {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        if n == 1 {
            return 0;
        }
        let mask = u64::MAX >> (n - 1).leading_zeros();
        loop {
            let v = self.next_u64() & mask;
            if v < n {
                return v;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn normal(&mut self, std_dev: f64) -> f64 {
        std_dev * self.standard_normal()
    }

    /// A point drawn uniformly from the sphere of the given radius in `dim`
    /// dimensions.
    pub fn sphere_point(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| self.standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                let scale = radius / norm;
                v.iter_mut().for_each(|x| *x *= scale);
                return v;
            }
        }
    }

    /// First `k` entries of a seeded partial Fisher–Yates shuffle of `0..n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Full Fisher–Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        for i in 0..n.saturating_sub(1) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_sequence() {
        let a: Vec<u64> = {
            let mut g = RngState::new(7, 3).generator();
            (0..16).map(|_| g.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut g = RngState::new(7, 3).generator();
            (0..16).map(|_| g.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let mut g0 = RngState::new(7, 0).generator();
        let mut g1 = RngState::new(7, 1).generator();
        assert_ne!(g0.next_u64(), g1.next_u64());
    }

    #[test]
    fn derive_is_injective_on_small_ids() {
        let base = RngState::new(1, 5);
        assert_ne!(base.derive(0), base.derive(1));
        assert_ne!(base.derive(0), RngState::new(1, 6).derive(0));
        assert_eq!(base.derive(9).stream, (6 << 32) | 9);
        assert_ne!(RngState::new(1, 0).derive(3), RngState::new(1, 3));
    }

    #[test]
    fn below_stays_in_range() {
        let mut g = RngState::new(0, 0).generator();
        for n in 1..50u64 {
            for _ in 0..20 {
                assert!(g.below(n) < n);
            }
        }
    }

    #[test]
    fn sample_indices_distinct() {
        let mut g = RngState::new(11, 0).generator();
        let mut s = g.sample_indices(30, 12);
        assert_eq!(s.len(), 12);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 12);
        assert!(s.iter().all(|&i| i < 30));
    }

    #[test]
    fn sphere_point_has_radius() {
        let mut g = RngState::new(2, 0).generator();
        let p = g.sphere_point(100, 10.0);
        let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((r - 10.0).abs() < 1e-12);
    }

    #[test]
    fn normal_moments() {
        let mut g = RngState::new(3, 0).generator();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.015, "{var}");
    }
}

//! Counter-based Brownian increments.
//!
//! Each sample index owns a ChaCha8 stream keyed by the master seed with the
//! sample index as stream id, so the increments of path `j` never depend on
//! how paths are scheduled across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    master_seed: u64,
    sample_index: u64,
    step_counter: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, sample_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(sample_index);
        Self {
            rng,
            master_seed,
            sample_index,
            step_counter: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }

    /// Number of increments drawn so far.
    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    /// Fills `out` with an increment `ΔW ~ N(0, dt·I)`.
    pub fn increment(&mut self, dt: f64, out: &mut [f64]) {
        let scale = dt.sqrt();
        for v in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = scale * z;
        }
        self.step_counter += 1;
    }

    /// Uniform draw on `[0, 1)`, used by the optional bridge exit test.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, j: u64, k: usize) -> Vec<f64> {
        let mut s = NoiseStream::new(seed, j);
        let mut out = vec![0.0; 1];
        (0..k)
            .map(|_| {
                s.increment(1.0, &mut out);
                out[0]
            })
            .collect()
    }

    #[test]
    fn same_key_same_stream() {
        assert_eq!(draws(9, 3, 100), draws(9, 3, 100));
    }

    #[test]
    fn distinct_indices_differ() {
        assert_ne!(draws(9, 3, 10), draws(9, 4, 10));
        assert_ne!(draws(9, 3, 10), draws(10, 3, 10));
    }

    #[test]
    fn stream_independent_of_creation_order() {
        let later = {
            let _other = draws(9, 0, 1000);
            draws(9, 5, 20)
        };
        assert_eq!(later, draws(9, 5, 20));
    }

    #[test]
    fn increments_have_unit_variance_per_time() {
        let mut s = NoiseStream::new(1, 0);
        let mut out = vec![0.0; 2];
        let n = 200_000;
        let (mut m, mut m2) = (0.0, 0.0);
        for _ in 0..n / 2 {
            s.increment(0.25, &mut out);
            for v in &out {
                m += v;
                m2 += v * v;
            }
        }
        let mean = m / n as f64;
        let var = m2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * (0.25f64 / n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.005, "{var}");
        assert_eq!(s.step_counter(), (n / 2) as u64);
    }

    #[test]
    fn cross_stream_correlation_is_small() {
        let a = draws(5, 0, 50_000);
        let b = draws(5, 1, 50_000);
        let c: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
        assert!(c.abs() < 4.0 / (a.len() as f64).sqrt(), "{c}");
    }
}

//! Noise primitives and the binary-tree continual counter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PortableRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Laplace { scale: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    pub fn sample(&self, rng: &mut PortableRng) -> Result<f64> {
        match *self {
            NoiseSpec::Laplace { scale } => sample_laplace(scale, rng),
            NoiseSpec::Gaussian { sigma } => sample_gaussian(sigma, rng),
        }
    }
}

/// Laplace(0, scale) by inverting the CDF of a single open-interval uniform.
pub fn sample_laplace(scale: f64, rng: &mut PortableRng) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::param("scale", format!("{scale} must be > 0")));
    }
    let u = rng.uniform_open() - 0.5;
    Ok(-scale * u.signum() * (1.0 - 2.0 * u.abs()).ln())
}

/// N(0, sigma^2) by the Marsaglia polar method; the second variate of each pair is discarded.
pub fn sample_gaussian(sigma: f64, rng: &mut PortableRng) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", format!("{sigma} must be > 0")));
    }
    Ok(sigma * standard_normal(rng))
}

pub(crate) fn standard_normal(rng: &mut PortableRng) -> f64 {
    loop {
        let x = 2.0 * rng.uniform() - 1.0;
        let y = 2.0 * rng.uniform() - 1.0;
        let s = x * x + y * y;
        if s > 0.0 && s < 1.0 {
            return x * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Binary-tree mechanism for noisy prefix sums over a fixed horizon.
///
/// Node `l` holds the exact sum of the most recent complete dyadic block of
/// length `2^l` plus one noise draw. The answer at time `t` sums the nodes
/// selected by the set bits of `t`, so at most `depth + 1` noises enter any
/// answer.
#[derive(Debug, Clone)]
pub struct TreeCounter {
    horizon: u64,
    depth: u32,
    noise: Option<NoiseSpec>,
    rng: PortableRng,
    exact: Vec<i64>,
    noisy: Vec<f64>,
    node_noise: Vec<f64>,
    t: u64,
}

impl TreeCounter {
    /// `noise = None` gives the noiseless counter (exact prefix sums).
    pub fn new(horizon: u64, noise: Option<NoiseSpec>, rng: PortableRng) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        if let Some(spec) = noise {
            // Validate the scale up front.
            spec.sample(&mut rng.clone())?;
        }
        let depth = 64 - (horizon - 1).leading_zeros();
        let levels = depth as usize + 1;
        Ok(TreeCounter {
            horizon,
            depth,
            noise,
            rng,
            exact: vec![0; levels],
            noisy: vec![0.0; levels],
            node_noise: vec![0.0; levels],
            t: 0,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Feeds one increment and returns the noisy prefix sum through it.
    pub fn tree_count(&mut self, delta: i64) -> Result<f64> {
        if self.t == self.horizon {
            return Err(Error::HorizonExhausted(self.horizon));
        }
        self.t += 1;
        let level = self.t.trailing_zeros() as usize;
        let merged: i64 = self.exact[..level].iter().sum::<i64>() + delta;
        for l in 0..level {
            self.exact[l] = 0;
            self.noisy[l] = 0.0;
            self.node_noise[l] = 0.0;
        }
        let z = match &self.noise {
            Some(spec) => spec.sample(&mut self.rng)?,
            None => 0.0,
        };
        self.exact[level] = merged;
        self.node_noise[level] = z;
        self.noisy[level] = merged as f64 + z;
        Ok(self.answer())
    }

    fn answer(&self) -> f64 {
        self.active_levels().map(|l| self.noisy[l]).sum()
    }

    fn active_levels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.exact.len()).filter(move |&l| self.t >> l & 1 == 1)
    }

    /// Noise draws entering the current answer.
    pub fn current_noise_terms(&self) -> Vec<f64> {
        self.active_levels().map(|l| self.node_noise[l]).collect()
    }
}

/// Euclidean distance between two answer vectors of equal length.
pub fn answer_vector_l2_diff(run_a: &[f64], run_b: &[f64]) -> Result<f64> {
    if run_a.len() != run_b.len() {
        return Err(Error::LengthMismatch {
            left: run_a.len(),
            right: run_b.len(),
        });
    }
    Ok(run_a
        .iter()
        .zip(run_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn moments(mut draw: impl FnMut() -> f64, n: usize) -> (f64, f64) {
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = draw();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        (mean, s2 / n as f64 - mean * mean)
    }

    #[test]
    fn laplace_is_reproducible_and_has_the_right_moments() {
        let a = sample_laplace(1.0, &mut PortableRng::from_state(5)).unwrap();
        let b = sample_laplace(1.0, &mut PortableRng::from_state(5)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        let mut rng = PortableRng::derive(1, "laplace-moments", 0);
        let (mean, var) = moments(|| sample_laplace(1.0, &mut rng).unwrap(), 1_000_000);
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((1.96..=2.04).contains(&var), "var {var}");
        assert!(sample_laplace(0.0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_is_reproducible_and_has_the_right_moments() {
        let a = sample_gaussian(1.0, &mut PortableRng::from_state(5)).unwrap();
        let b = sample_gaussian(1.0, &mut PortableRng::from_state(5)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        let mut rng = PortableRng::derive(1, "gaussian-moments", 0);
        let (mean, var) = moments(|| sample_gaussian(1.0, &mut rng).unwrap(), 1_000_000);
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
        assert!(sample_gaussian(0.0, &mut rng).is_err());
    }

    #[test]
    fn noiseless_tree_counts_exactly() {
        let mut c = TreeCounter::new(8, None, PortableRng::from_state(0)).unwrap();
        let answers: Vec<f64> = [1, 1, -1].iter().map(|&d| c.tree_count(d).unwrap()).collect();
        assert_eq!(answers, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn horizon_is_enforced() {
        let mut c = TreeCounter::new(8, None, PortableRng::from_state(0)).unwrap();
        for _ in 0..8 {
            c.tree_count(1).unwrap();
        }
        assert!(matches!(c.tree_count(1), Err(Error::HorizonExhausted(8))));
        assert!(TreeCounter::new(8, Some(NoiseSpec::Laplace { scale: 0.0 }), PortableRng::from_state(0)).is_err());
    }

    #[test]
    fn noisy_answer_is_prefix_sum_plus_few_node_noises() {
        let horizon = 1000;
        let mut c = TreeCounter::new(
            horizon,
            Some(NoiseSpec::Laplace { scale: 3.0 }),
            PortableRng::from_state(9),
        )
        .unwrap();
        let mut rng = PortableRng::from_state(10);
        let mut exact = 0i64;
        for _ in 0..horizon {
            let d = rng.below(5) as i64 - 2;
            exact += d;
            let ans = c.tree_count(d).unwrap();
            let terms = c.current_noise_terms();
            assert!(terms.len() as u32 <= c.depth() + 1);
            let noise: f64 = terms.iter().sum();
            assert!((ans - exact as f64 - noise).abs() < 1e-9);
        }
    }

    #[test]
    fn l2_diff_examples() {
        assert_eq!(answer_vector_l2_diff(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let a = vec![0.0; 10];
        let mut b = a.clone();
        for x in b.iter_mut().take(7) {
            *x = 1.0;
        }
        assert!((answer_vector_l2_diff(&a, &b).unwrap() - 7f64.sqrt()).abs() < 1e-12);
        assert!(answer_vector_l2_diff(&a, &b[..3]).is_err());
    }

    proptest! {
        #[test]
        fn noiseless_tree_matches_prefix_sums(deltas in proptest::collection::vec(-5i64..5, 1..300)) {
            let mut c = TreeCounter::new(deltas.len() as u64, None, PortableRng::from_state(0)).unwrap();
            let mut prefix = 0;
            for d in deltas {
                prefix += d;
                prop_assert_eq!(c.tree_count(d).unwrap(), prefix as f64);
            }
        }
    }
}

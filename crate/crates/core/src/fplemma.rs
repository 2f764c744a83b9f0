//! Monte-Carlo harness for the correlation between a mean estimator's output
//! and its centered input bits, `E_p E_{x ~ Ber(p)^n} [ f(x) * sum_i (x_i - p) ]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Prior;
use crate::mechanisms::standard_normal;
use crate::rng::{tags, PortableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyClass {
    /// `|f(x) - mean(x)| <= 2/5` for every `x`.
    TwoFifths,
    /// `f(0^n) <= 0.1` and `f(1^n) >= 0.9`.
    Endpoint,
    /// No accuracy claim.
    None,
}

impl AccuracyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AccuracyClass::TwoFifths => "two_fifths",
            AccuracyClass::Endpoint => "endpoint",
            AccuracyClass::None => "none",
        }
    }
}

/// A map from `n` bits to `[0, 1]`. Randomized estimators draw from `rng`.
pub trait MeanEstimator: Sync {
    fn name(&self) -> String;
    fn class(&self) -> AccuracyClass;
    fn eval(&self, bits: &[u8], rng: &mut PortableRng) -> f64;
}

const NOISE_CLAMP: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FpEstimator {
    ExactMean,
    /// `clamp(mean + clamp(N(0, sigma^2), -0.4, 0.4), 0, 1)`.
    ClippedNoisyMean { sigma: f64 },
    /// `1{mean >= 1/2}`.
    Threshold,
    Constant { c: f64 },
    /// `1 - f`.
    Complement { inner: Box<FpEstimator> },
}

impl FpEstimator {
    pub fn builtins() -> Vec<FpEstimator> {
        vec![
            FpEstimator::ExactMean,
            FpEstimator::ClippedNoisyMean { sigma: 0.1 },
            FpEstimator::Threshold,
            FpEstimator::Constant { c: 0.5 },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FpEstimator::ClippedNoisyMean { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::param("sigma", format!("{sigma} must be finite and >= 0")))
            }
            FpEstimator::Constant { c } if !(0.0..=1.0).contains(c) => {
                Err(Error::param("c", format!("{c} not in [0,1]")))
            }
            FpEstimator::Complement { inner } => inner.validate(),
            _ => Ok(()),
        }
    }
}

fn mean(bits: &[u8]) -> f64 {
    bits.iter().map(|&b| f64::from(b)).sum::<f64>() / bits.len() as f64
}

impl MeanEstimator for FpEstimator {
    fn name(&self) -> String {
        match self {
            FpEstimator::ExactMean => "exact_mean".into(),
            FpEstimator::ClippedNoisyMean { sigma } => format!("clipped_noisy_mean({sigma})"),
            FpEstimator::Threshold => "threshold".into(),
            FpEstimator::Constant { c } => format!("constant({c})"),
            FpEstimator::Complement { inner } => format!("complement({})", inner.name()),
        }
    }

    fn class(&self) -> AccuracyClass {
        match self {
            FpEstimator::ExactMean | FpEstimator::ClippedNoisyMean { .. } => AccuracyClass::TwoFifths,
            FpEstimator::Threshold => AccuracyClass::Endpoint,
            FpEstimator::Constant { .. } | FpEstimator::Complement { .. } => AccuracyClass::None,
        }
    }

    fn eval(&self, bits: &[u8], rng: &mut PortableRng) -> f64 {
        match self {
            FpEstimator::ExactMean => mean(bits),
            FpEstimator::ClippedNoisyMean { sigma } => {
                let noise = (sigma * standard_normal(rng)).clamp(-NOISE_CLAMP, NOISE_CLAMP);
                (mean(bits) + noise).clamp(0.0, 1.0)
            }
            FpEstimator::Threshold => {
                if 2 * bits.iter().filter(|&&b| b == 1).count() >= bits.len() {
                    1.0
                } else {
                    0.0
                }
            }
            FpEstimator::Constant { c } => *c,
            FpEstimator::Complement { inner } => 1.0 - inner.eval(bits, rng),
        }
    }
}

/// Draws per input in the exhaustive check, for randomized estimators.
const CHECK_DRAWS: usize = 4;

/// Whether `f` meets `class` on every input of length `n` (exhaustive, `n <= 16`).
pub fn satisfies_class(f: &dyn MeanEstimator, class: AccuracyClass, n: usize) -> Result<bool> {
    if n == 0 || n > 16 {
        return Err(Error::param("n", format!("{n} not in [1, 16]")));
    }
    let mut rng = PortableRng::derive(n as u64, tags::FP_CHUNK, u64::MAX);
    let mut bits = vec![0u8; n];
    let in_range = |v: f64| (0.0..=1.0).contains(&v);
    match class {
        AccuracyClass::None => Ok(true),
        AccuracyClass::Endpoint => {
            for _ in 0..CHECK_DRAWS {
                bits.fill(0);
                let lo = f.eval(&bits, &mut rng);
                bits.fill(1);
                let hi = f.eval(&bits, &mut rng);
                if !(in_range(lo) && in_range(hi) && lo <= 0.1 && hi >= 0.9) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        AccuracyClass::TwoFifths => {
            for x in 0u32..(1 << n) {
                for (i, b) in bits.iter_mut().enumerate() {
                    *b = ((x >> i) & 1) as u8;
                }
                let m = mean(&bits);
                for _ in 0..CHECK_DRAWS {
                    let v = f.eval(&bits, &mut rng);
                    if !in_range(v) || (v - m).abs() > 0.4 + 1e-12 {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        }
    }
}

/// Checks the declared class of `f` for every `n` in `1..=n_max`.
pub fn verify_declared_class(f: &dyn MeanEstimator, n_max: usize) -> Result<()> {
    for n in 1..=n_max {
        if !satisfies_class(f, f.class(), n)? {
            return Err(Error::AccuracyClass {
                name: f.name(),
                class: f.class().as_str(),
                detail: format!("violated at n = {n}"),
            });
        }
    }
    Ok(())
}

pub const MIN_TRIALS: u64 = 10_000;
const CHUNK: u64 = 8192;
const Z99: f64 = 2.576;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: usize,
    pub trials: u64,
    pub prior: Prior,
    pub estimate: f64,
    pub sd: f64,
    /// `2.576 sd / sqrt(trials)`.
    pub half_width: f64,
}

impl McEstimate {
    pub fn lower(&self) -> f64 {
        self.estimate - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.estimate + self.half_width
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower() > 0.0 || self.upper() < 0.0
    }
}

/// Trials run in fixed chunks, each with its own substream, and are combined in
/// chunk order, so the result does not depend on the worker count.
pub fn mc_correlation(f: &dyn MeanEstimator, n: usize, trials: u64, prior: Prior, seed: u64) -> Result<McEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::param("trials", format!("{trials} < {MIN_TRIALS}")));
    }
    if n == 0 || (prior == Prior::Logistic && n < 2) {
        return Err(Error::param("n", format!("{n} too small for the {prior:?} prior")));
    }
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = PortableRng::derive(seed, tags::FP_CHUNK, c);
            let count = CHUNK.min(trials - c * CHUNK);
            let mut bits = vec![0u8; n];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let p = prior.sample(n as u64, &mut rng);
                let mut centered = 0.0;
                for b in bits.iter_mut() {
                    *b = u8::from(rng.bernoulli(p));
                    centered += f64::from(*b) - p;
                }
                let v = f.eval(&bits, &mut rng) * centered;
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let t = trials as f64;
    let estimate = s / t;
    let var = ((s2 - t * estimate * estimate) / (t - 1.0)).max(0.0);
    let sd = var.sqrt();
    Ok(McEstimate { n, trials, prior, estimate, sd, half_width: Z99 * sd / t.sqrt() })
}

/// Floor asserted for a declared class under a prior, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Floor {
    /// Estimate at least `1/10` up to the interval half-width.
    AtLeastTenth,
    /// Interval strictly above zero.
    Positive,
    None,
}

pub fn floor_for(class: AccuracyClass, prior: Prior) -> Floor {
    match (class, prior) {
        (AccuracyClass::TwoFifths, Prior::Uniform) => Floor::AtLeastTenth,
        (AccuracyClass::Endpoint | AccuracyClass::TwoFifths, Prior::Logistic) => Floor::Positive,
        _ => Floor::None,
    }
}

pub fn meets_floor(est: &McEstimate, floor: Floor) -> bool {
    match floor {
        Floor::AtLeastTenth => est.estimate >= 0.1 - est.half_width,
        Floor::Positive => est.lower() > 0.0,
        Floor::None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declared_classes_hold() {
        for f in FpEstimator::builtins() {
            verify_declared_class(&f, 16).unwrap();
        }
        // Threshold is exact at the endpoints but far from the mean near 1/2.
        assert!(satisfies_class(&FpEstimator::Threshold, AccuracyClass::Endpoint, 16).unwrap());
        assert!(!satisfies_class(&FpEstimator::Threshold, AccuracyClass::TwoFifths, 10).unwrap());
    }

    #[test]
    fn constant_half_is_not_two_fifths() {
        let c = FpEstimator::Constant { c: 0.5 };
        for n in 2..=16 {
            assert!(!satisfies_class(&c, AccuracyClass::TwoFifths, n).unwrap());
        }
        let bad = FpEstimator::Complement { inner: Box::new(FpEstimator::ExactMean) };
        assert!(!satisfies_class(&bad, AccuracyClass::TwoFifths, 3).unwrap());
    }

    #[test]
    fn violation_reports_class() {
        struct Liar;
        impl MeanEstimator for Liar {
            fn name(&self) -> String {
                "liar".into()
            }
            fn class(&self) -> AccuracyClass {
                AccuracyClass::TwoFifths
            }
            fn eval(&self, _: &[u8], _: &mut PortableRng) -> f64 {
                1.0
            }
        }
        let err = verify_declared_class(&Liar, 4).unwrap_err();
        assert!(matches!(err, Error::AccuracyClass { class: "two_fifths", .. }));
    }

    #[test]
    fn constant_has_no_correlation() {
        for prior in [Prior::Uniform, Prior::Logistic] {
            let est = mc_correlation(&FpEstimator::Constant { c: 0.7 }, 20, 100_000, prior, 3).unwrap();
            assert!(est.lower() <= 0.0 && est.upper() >= 0.0, "{est:?}");
        }
    }

    #[test]
    fn deterministic_and_rejects_few_trials() {
        let a = mc_correlation(&FpEstimator::ExactMean, 10, 20_000, Prior::Uniform, 8).unwrap();
        let b = mc_correlation(&FpEstimator::ExactMean, 10, 20_000, Prior::Uniform, 8).unwrap();
        assert_eq!(a, b);
        assert!(mc_correlation(&FpEstimator::ExactMean, 10, 9_999, Prior::Uniform, 8).is_err());
    }

    #[test]
    fn complement_negates_exact_mean() {
        let f = mc_correlation(&FpEstimator::ExactMean, 50, 200_000, Prior::Uniform, 5).unwrap();
        let g = mc_correlation(
            &FpEstimator::Complement { inner: Box::new(FpEstimator::ExactMean) },
            50,
            200_000,
            Prior::Uniform,
            5,
        )
        .unwrap();
        // Same draws: (1 - f) * c = c - f * c, and E[c] = 0.
        assert!((f.estimate + g.estimate).abs() <= f.half_width + g.half_width);
        assert!(g.estimate < 0.0);
    }

    #[test]
    fn exact_mean_matches_closed_form() {
        let est = mc_correlation(&FpEstimator::ExactMean, 50, 1_000_000, Prior::Uniform, 1).unwrap();
        assert!((est.estimate - 1.0 / 6.0).abs() < 0.01, "{est:?}");
        assert!((est.estimate - 1.0 / 6.0).abs() < est.half_width * 1.5);
    }
}

//! Closed-form lower-bound evaluators.
//!
//! Hidden constants are fixed to 1 and reported as separate `slack` fields.

use std::f64::consts::{LN_2, LOG2_E, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `ln Gamma(x+1) - (x ln x - x + ln(2 pi x)/2)`.
fn stirlerr(x: f64) -> f64 {
    if x < 15.0 {
        return ln_gamma(x + 1.0) - (x * x.ln() - x + 0.5 * (2.0 * PI * x).ln());
    }
    let x2 = x * x;
    let s0 = 1.0 / 12.0;
    let s1 = 1.0 / 360.0;
    let s2 = 1.0 / 1260.0;
    let s3 = 1.0 / 1680.0;
    let s4 = 1.0 / 1188.0;
    (s0 - (s1 - (s2 - (s3 - s4 / x2) / x2) / x2) / x2) / x
}

/// `ln C(n, m)` for real `0 <= m <= n`.
pub fn log_binom(n: f64, m: f64) -> Result<f64> {
    if !(n.is_finite() && m.is_finite()) || n < 0.0 || m < 0.0 {
        return Err(Error::param("m", format!("log_binom({n}, {m}) needs finite non-negative arguments")));
    }
    if m > n {
        return Err(Error::param("m", format!("{m} exceeds n = {n}")));
    }
    let r = n - m;
    if m == 0.0 || r == 0.0 {
        return Ok(0.0);
    }
    if n < 15.0 {
        return Ok(ln_gamma(n + 1.0) - ln_gamma(m + 1.0) - ln_gamma(r + 1.0));
    }
    let (a, b) = if m <= r { (m, r) } else { (r, m) };
    // n ln n - a ln a - b ln b, arranged to avoid cancellation.
    let main = a * (n / a).ln() - b * (-a / n).ln_1p();
    let half = 0.5 * (n / (2.0 * PI * a * b)).ln();
    Ok(main + half + stirlerr(n) - stirlerr(a) - stirlerr(b))
}

pub fn log2_binom(n: f64, m: f64) -> Result<f64> {
    Ok(log_binom(n, m)? / LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommBound {
    pub h: f64,
    pub k: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Value before subtracting slack, in bits.
    pub main_bits: f64,
    /// `c * log2(h + k)`.
    pub slack_bits: f64,
    pub slack_constant: f64,
    /// `main_bits - slack_bits`.
    pub value_bits: f64,
    /// Whether the arguments lie in the stated validity region.
    pub valid: bool,
}

fn check_eps(eps1: f64, eps2: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps1) {
        return Err(Error::param("eps1", format!("{eps1} not in [0, 1/2)")));
    }
    if !(0.0..0.5).contains(&eps2) {
        return Err(Error::param("eps2", format!("{eps2} not in [0, 1/2)")));
    }
    Ok(())
}

fn check_hk(h: f64, k: f64) -> Result<()> {
    if !(h >= 1.0 && h.is_finite()) {
        return Err(Error::param("h", format!("{h} must be >= 1")));
    }
    if !(k >= 1.0 && k.is_finite()) {
        return Err(Error::param("k", format!("{k} must be >= 1")));
    }
    Ok(())
}

/// `log C(n,k) - log C(n(1/2+eps1), (1/2-eps2)k) - log C(n(1/2-eps1), (1/2+eps2)k)` with `n = 3h+k`,
/// minus `c log2(h+k)`. Binomial arguments are taken as reals.
pub fn comm_lower_bound_exact(h: f64, k: f64, eps1: f64, eps2: f64, slack_constant: f64) -> Result<CommBound> {
    check_hk(h, k)?;
    check_eps(eps1, eps2)?;
    let n = 3.0 * h + k;
    let (n1, m1) = (n * (0.5 + eps1), (0.5 - eps2) * k);
    let (n2, m2) = (n * (0.5 - eps1), (0.5 + eps2) * k);
    if m1 > n1 || m2 > n2 {
        return Err(Error::param(
            "eps1",
            format!("binomial arguments out of range: C({n1}, {m1}), C({n2}, {m2})"),
        ));
    }
    let main_bits = log2_binom(n, k)? - log2_binom(n1, m1)? - log2_binom(n2, m2)?;
    let slack_bits = slack_constant * (h + k).log2();
    Ok(CommBound {
        h,
        k,
        eps1,
        eps2,
        main_bits,
        slack_bits,
        slack_constant,
        value_bits: main_bits - slack_bits,
        valid: true,
    })
}

/// Whether `(h, k, eps1, eps2)` lies in the region where the quadratic form applies.
pub fn stirling_region(h: f64, k: f64, eps1: f64, eps2: f64) -> bool {
    let lo = 1.0 / k;
    h >= k && eps1 > lo && eps1 < 0.1 && eps2 > lo && eps2 < 0.1
}

/// `k (eps1 - eps2)^2 log2(e)` minus `c log2(h+k)`.
pub fn comm_lower_bound_stirling(h: f64, k: f64, eps1: f64, eps2: f64, slack_constant: f64) -> Result<CommBound> {
    check_hk(h, k)?;
    if !stirling_region(h, k, eps1, eps2) {
        return Err(Error::param(
            "eps1",
            format!("need h >= k and eps1, eps2 in (1/k, 1/10); got h={h} k={k} eps1={eps1} eps2={eps2}"),
        ));
    }
    let d = eps1 - eps2;
    let main_bits = k * d * d * LOG2_E;
    let slack_bits = slack_constant * (h + k).log2();
    Ok(CommBound {
        h,
        k,
        eps1,
        eps2,
        main_bits,
        slack_bits,
        slack_constant,
        value_bits: main_bits - slack_bits,
        valid: true,
    })
}

/// Agreement test between the two forms, allowing the labeled slack on both sides:
/// `st/10 - slack <= exact <= 10 st + slack` on main terms.
pub fn forms_agree(exact: &CommBound, stirling: &CommBound, factor: f64) -> bool {
    let s = exact.slack_bits;
    exact.main_bits >= stirling.main_bits / factor - s && exact.main_bits <= stirling.main_bits * factor + s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionEpsilons {
    pub eps1: f64,
    pub eps2: f64,
    /// `1/(2 sqrt P)`.
    pub eps2_main: f64,
    /// `sqrt(ln(20 P k)/(2P))`.
    pub eps2_fluctuation: f64,
    pub radius: f64,
    /// `eps1 / eps2`.
    pub ratio: f64,
}

/// `eps1 = w / (80 R (3h+k))`, `eps2 = 1/(2 sqrt P) + sqrt(ln(20Pk)/(2P))`.
pub fn reduction_epsilons(w: u64, h: u64, k: u64, phases: u64, beta: f64) -> Result<ReductionEpsilons> {
    if w == 0 || h == 0 || k == 0 || phases == 0 {
        return Err(Error::param("w", "w, h, k, P must be positive"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", format!("{beta} not in (0,1)")));
    }
    let wf = w as f64;
    let radius = (wf * (2.0 / beta).ln()).sqrt();
    let eps1 = wf / (80.0 * radius * (3 * h + k) as f64);
    let p = phases as f64;
    let eps2_main = 1.0 / (2.0 * p.sqrt());
    let eps2_fluctuation = ((20.0 * p * k as f64).ln() / (2.0 * p)).sqrt();
    let eps2 = eps2_main + eps2_fluctuation;
    Ok(ReductionEpsilons { eps1, eps2, eps2_main, eps2_fluctuation, radius, ratio: eps1 / eps2 })
}

const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentProfile {
    pub gamma_w: f64,
    pub gamma_k: f64,
    pub gamma_h: f64,
}

impl ExponentProfile {
    /// Checks `gamma_w/2 <= gamma_k <= gamma_h < gamma_w` and `3 gamma_h < 1`.
    pub fn new(gamma_w: f64, gamma_k: f64, gamma_h: f64) -> Result<Self> {
        for (name, g) in [("gamma_w", gamma_w), ("gamma_k", gamma_k), ("gamma_h", gamma_h)] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::param(name, format!("{g} not in (0,1)")));
            }
        }
        if gamma_w / 2.0 > gamma_k + REL_TOL {
            return Err(Error::param("gamma_k", "need gamma_w/2 <= gamma_k"));
        }
        if gamma_k > gamma_h + REL_TOL {
            return Err(Error::param("gamma_h", "need gamma_k <= gamma_h"));
        }
        if gamma_h >= gamma_w {
            return Err(Error::param("gamma_h", "need gamma_h < gamma_w"));
        }
        if 3.0 * gamma_h >= 1.0 {
            return Err(Error::param("gamma_h", "need 3 gamma_h < 1"));
        }
        Ok(ExponentProfile { gamma_w, gamma_k, gamma_h })
    }

    /// `gamma_w = 2/3 - 4a`, `gamma_k = 1/3 - 2a`, `gamma_h = 1/3 - a` for `a in (0, 1/9)`.
    pub fn corollary(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0 / 9.0) {
            return Err(Error::param("alpha", format!("{alpha} not in (0, 1/9)")));
        }
        Self::new(2.0 / 3.0 - 4.0 * alpha, 1.0 / 3.0 - 2.0 * alpha, 1.0 / 3.0 - alpha)
    }

    pub fn exponent(&self) -> f64 {
        self.gamma_w + self.gamma_k - 2.0 * self.gamma_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBound {
    pub t: f64,
    pub profile: ExponentProfile,
    pub exponent: f64,
    /// `T^exponent`.
    pub value: f64,
    /// `k w / h^2` with `w = T^gamma_w` and so on.
    pub kw_over_h2: f64,
    pub identity_rel_err: f64,
}

pub fn theorem_bound(t: f64, profile: &ExponentProfile) -> Result<TheoremBound> {
    if !(t > 1.0 && t.is_finite()) {
        return Err(Error::param("t", format!("{t} must exceed 1")));
    }
    let profile = ExponentProfile::new(profile.gamma_w, profile.gamma_k, profile.gamma_h)?;
    let exponent = profile.exponent();
    let value = t.powf(exponent);
    let w = t.powf(profile.gamma_w);
    let k = t.powf(profile.gamma_k);
    let h = t.powf(profile.gamma_h);
    let kw_over_h2 = k * w / (h * h);
    let identity_rel_err = (kw_over_h2 - value).abs() / value;
    Ok(TheoremBound { t, profile, exponent, value, kw_over_h2, identity_rel_err })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingBound {
    pub n: f64,
    pub k: f64,
    pub k_prime: f64,
    pub z: f64,
    pub value_bits: f64,
}

/// `log C(N,k) - log k - log C(k', Z) - log C(N-k', k-Z)` in bits.
pub fn encoding_bound(n: f64, k: f64, k_prime: f64, z: f64) -> Result<EncodingBound> {
    if !(k >= 1.0 && k <= n) {
        return Err(Error::param("k", format!("{k} not in [1, N]")));
    }
    if !(k_prime >= 0.0 && k_prime <= n) {
        return Err(Error::param("k_prime", format!("{k_prime} not in [0, N]")));
    }
    if !(z >= 0.0 && z <= k.min(k_prime)) {
        return Err(Error::param("z", format!("{z} not in [0, min(k, k')]")));
    }
    if k - z > n - k_prime {
        return Err(Error::param("z", format!("k - Z = {} exceeds N - k' = {}", k - z, n - k_prime)));
    }
    let value_bits =
        log2_binom(n, k)? - k.log2() - log2_binom(k_prime, z)? - log2_binom(n - k_prime, k - z)?;
    Ok(EncodingBound { n, k, k_prime, z, value_bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_binom(n: u64, m: u64) -> u128 {
        let m = m.min(n - m);
        let mut acc: u128 = 1;
        for i in 0..m {
            acc = acc * (n - i) as u128 / (i + 1) as u128;
        }
        acc
    }

    // ln C(n,m) = sum_{i=1}^{m} ln((n-m+i)/i), accumulated with Kahan summation.
    fn log_binom_sum(n: u64, m: u64) -> f64 {
        let m = m.min(n - m);
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for i in 1..=m {
            let y = ((n - m + i) as f64 / i as f64).ln() - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    }

    #[test]
    fn small_values() {
        assert!((log_binom(4.0, 2.0).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert_eq!(log_binom(17.0, 0.0).unwrap(), 0.0);
        assert_eq!(log_binom(17.0, 17.0).unwrap(), 0.0);
        assert!((log_binom(52.0, 5.0).unwrap() - 2_598_960f64.ln()).abs() < 1e-9);
        assert!(log_binom(3.0, 4.0).is_err());
        assert!(log_binom(-1.0, 0.0).is_err());
    }

    #[test]
    fn exhaustive_against_integers() {
        for n in 0..=60u64 {
            for m in 0..=n {
                let want = (exact_binom(n, m) as f64).ln();
                let got = log_binom(n as f64, m as f64).unwrap();
                assert!((got - want).abs() <= 1e-9, "C({n},{m}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn large_arguments_match_ratio_identity() {
        for &(n, m) in &[(1e9, 5e8), (1e9, 12345.0), (1e9, 3.0), (7.5e8, 2.5e8), (1e6, 499_999.0)] {
            let hi = log_binom(n, m).unwrap();
            let step = hi - log_binom(n, m - 1.0).unwrap();
            let want = ((n - m + 1.0) / m).ln();
            // Absolute error is limited by the spacing of doubles near `hi`.
            let tol = 1e-9 + 4.0 * f64::EPSILON * hi;
            assert!((step - want).abs() < tol, "n={n} m={m}: {step} vs {want}");
        }
        for &(n, m) in &[(10_000u64, 20u64), (100_000, 300), (5000, 10)] {
            let got = log_binom(n as f64, m as f64).unwrap();
            assert!((got - log_binom_sum(n, m)).abs() < 1e-9);
        }
    }

    #[test]
    fn real_arguments_are_continuous() {
        let a = log_binom(100.5, 10.25).unwrap();
        let b = log_binom(100.5 + 1e-7, 10.25).unwrap();
        assert!((a - b).abs() < 1e-6);
        let lg = ln_gamma(101.5) - ln_gamma(11.25) - ln_gamma(91.25);
        assert!((a - lg).abs() < 1e-9);
    }

    #[test]
    fn exact_form_at_zero_eps_is_within_slack() {
        let b = comm_lower_bound_exact(1000.0, 100.0, 0.0, 0.0, 1.0).unwrap();
        assert!(b.main_bits.abs() <= b.slack_bits, "{b:?}");
    }

    #[test]
    fn exact_form_positive_at_reference_point() {
        let b = comm_lower_bound_exact(1000.0, 100.0, 0.08, 0.02, 1.0).unwrap();
        assert!(b.main_bits > 0.0);
        let s = comm_lower_bound_stirling(1000.0, 100.0, 0.08, 0.02, 1.0).unwrap();
        assert!(forms_agree(&b, &s, 10.0));
    }

    #[test]
    fn exact_form_monotone_in_eps1() {
        for j in 0..20 {
            let eps2 = 0.02 * j as f64;
            let mut prev = f64::NEG_INFINITY;
            for i in 0..20 {
                let eps1 = 0.02 * i as f64;
                let b = comm_lower_bound_exact(1000.0, 100.0, eps1, eps2, 1.0).unwrap();
                assert!(b.main_bits >= prev - 1e-9, "eps1={eps1} eps2={eps2}");
                prev = b.main_bits;
            }
        }
    }

    #[test]
    fn exact_form_is_not_symmetrized() {
        let a = comm_lower_bound_exact(500.0, 50.0, 0.08, 0.02, 1.0).unwrap();
        let b = comm_lower_bound_exact(500.0, 50.0, 0.02, 0.08, 1.0).unwrap();
        assert!((a.main_bits - b.main_bits).abs() > 1e-3);
    }

    #[test]
    fn stirling_form_properties() {
        let eq = comm_lower_bound_stirling(1000.0, 100.0, 0.05, 0.05, 1.0).unwrap();
        assert!(eq.value_bits <= 0.0);
        assert_eq!(eq.main_bits, 0.0);
        let a = comm_lower_bound_stirling(1000.0, 100.0, 0.08, 0.02, 1.0).unwrap();
        let b = comm_lower_bound_stirling(1000.0, 400.0, 0.08, 0.02, 1.0).unwrap();
        assert!((b.main_bits / a.main_bits - 4.0).abs() < 1e-12);
        assert!(comm_lower_bound_stirling(1000.0, 100.0, 0.005, 0.05, 1.0).is_err());
        assert!(comm_lower_bound_stirling(10.0, 100.0, 0.05, 0.05, 1.0).is_err());
    }

    #[test]
    fn reduction_epsilon_scaling() {
        let beta = 1e-10;
        let a = reduction_epsilons(64, 16, 8, 64, beta).unwrap();
        let b = reduction_epsilons(256, 16, 8, 64, beta).unwrap();
        assert!((b.eps1 / a.eps1 - 2.0).abs() < 1e-12);
        let c = reduction_epsilons(64, 16, 8, 256, beta).unwrap();
        assert!((c.eps2_main / a.eps2_main - 0.5).abs() < 1e-12);
        // Direct evaluation at the small profile.
        let t = 458_752f64;
        let s = reduction_epsilons(64, 16, 8, 64, 1.0 / (t * t)).unwrap();
        let r = (64.0 * (2.0 * t * t).ln()).sqrt();
        assert!((s.eps1 - 64.0 / (80.0 * r * 56.0)).abs() < 1e-15);
        assert!((s.eps2 - (0.0625 + ((20.0 * 64.0 * 8.0f64).ln() / 128.0).sqrt())).abs() < 1e-15);
        assert!(s.ratio < 1.0);
    }

    #[test]
    fn corollary_exponent() {
        for alpha in [0.01, 0.05, 1.0 / 36.0] {
            let p = ExponentProfile::corollary(alpha).unwrap();
            assert!((p.exponent() - (1.0 / 3.0 - 4.0 * alpha)).abs() < 1e-12);
            let tb = theorem_bound(1e6, &p).unwrap();
            assert!(tb.identity_rel_err < 1e-9);
        }
        let tb = theorem_bound(1e6, &ExponentProfile::corollary(0.05).unwrap()).unwrap();
        assert!((tb.value - 10f64.powf(0.8)).abs() < 1e-9);
        assert!(ExponentProfile::corollary(0.2).is_err());
        assert!(ExponentProfile::new(0.6, 0.2, 0.3).is_err());
    }

    #[test]
    fn encoding_bound_values() {
        let full = encoding_bound(1000.0, 10.0, 1000.0, 10.0).unwrap();
        assert!(full.value_bits <= 0.0);
        assert!((full.value_bits + 10f64.log2()).abs() < 1e-9);
        let base = encoding_bound(1e4, 20.0, 5e3, 10.0).unwrap();
        let oracle = (log_binom_sum(10_000, 20) - 2.0 * log_binom_sum(5000, 10)) / LN_2 - 20f64.log2();
        assert!((base.value_bits - oracle).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for i in 0..=10 {
            let z = 20.0 - i as f64;
            let v = encoding_bound(1e4, 20.0, 5e3, z).unwrap().value_bits;
            assert!(v < prev);
            prev = v;
        }
        assert!(encoding_bound(100.0, 10.0, 50.0, 11.0).is_err());
    }
}

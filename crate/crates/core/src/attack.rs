//! Fingerprinting-based rounding: phase transcripts to subsets `Y_i`.
//!
//! For a phase with normalized answers `a_j`, priors `p_j` and bits `b(u,j)`,
//! user `u` scores `s(u) = sum_j a_j (b(u,j) - p_j)`. The score is clipped to
//! `[-R, R]` with `R = sqrt(w ln(2/beta))` and `u` joins `Y_i` independently
//! with probability `(R + s) / (2R)`. An accurate estimator correlates with the
//! bits, so subsets come out larger than half; a private one cannot single out
//! any heavy user across phases.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{InstanceParams, InstanceSupport, PhaseTranscript};
use crate::model::UserId;
use crate::rng::{tags, PortableRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub beta: f64,
    /// Clipping radius `R = sqrt(w ln(2/beta))`.
    pub radius: f64,
}

impl AttackConfig {
    pub fn new(w: u64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::param("beta", format!("{beta} not in (0,1)")));
        }
        let radius = (w as f64 * (2.0 / beta).ln()).sqrt();
        Ok(AttackConfig { beta, radius })
    }

    /// `beta = 1/T^2`.
    pub fn for_instance(params: &InstanceParams) -> Self {
        let t = params.t as f64;
        Self::new(params.w, 1.0 / (t * t)).expect("1/T^2 is in (0,1)")
    }
}

/// `s(u,i)` for every member of the phase, in member order.
pub fn phase_scores(tr: &PhaseTranscript) -> Vec<f64> {
    let n = tr.members.len();
    let mut scores = vec![0.0; n];
    for j in 0..tr.repetitions() {
        let (a, p) = (tr.normalized[j], tr.priors[j]);
        for (s, &b) in scores.iter_mut().zip(tr.repetition_bits(j)) {
            *s += a * (f64::from(b) - p);
        }
    }
    scores
}

pub fn clip(score: f64, radius: f64) -> f64 {
    score.clamp(-radius, radius)
}

pub fn inclusion_probability(score: f64, radius: f64) -> f64 {
    (radius + clip(score, radius)) / (2.0 * radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rounded {
    pub subset: Vec<UserId>,
    pub clipped: Vec<bool>,
}

/// Independent inclusion of each member with probability `(R + s_clipped) / (2R)`.
pub fn round_to_subset(
    members: &[UserId],
    scores: &[f64],
    cfg: &AttackConfig,
    rng: &mut PortableRng,
) -> Rounded {
    let mut subset = Vec::new();
    let mut clipped = Vec::with_capacity(scores.len());
    for (&u, &s) in members.iter().zip(scores) {
        clipped.push(s.abs() > cfg.radius);
        if rng.uniform() < inclusion_probability(s, cfg.radius) {
            subset.push(u);
        }
    }
    Rounded { subset, clipped }
}

/// Scores and rounds one phase with its own rng substream.
pub fn round_phase(tr: &PhaseTranscript, cfg: &AttackConfig, seed: u64) -> (Vec<f64>, Rounded) {
    let scores = phase_scores(tr);
    let mut rng = PortableRng::derive(seed, tags::ROUNDING, tr.phase as u64);
    let rounded = round_to_subset(&tr.members, &scores, cfg, &mut rng);
    (scores, rounded)
}

/// `xi(u) = sum_{i,j} a(i,j) (b(u,i,j) - p(i,j))` for a heavy user.
pub fn heavy_total_score(
    transcripts: &[PhaseTranscript],
    support: &InstanceSupport,
    user: UserId,
) -> Result<f64> {
    if !support.is_heavy(user) {
        return Err(Error::NotHeavy(user));
    }
    let mut total = 0.0;
    for tr in transcripts {
        let Ok(m) = tr.members.binary_search(&user) else {
            continue;
        };
        for j in 0..tr.repetitions() {
            total += tr.normalized[j] * (f64::from(tr.bit(j, m)) - tr.priors[j]);
        }
    }
    Ok(total)
}

/// `1/(2 sqrt P) + sqrt(ln(20 P k) / (2P))`.
pub fn default_flag_eps2(phases: u64, k: u64) -> f64 {
    let p = phases as f64;
    1.0 / (2.0 * p.sqrt()) + ((20.0 * p * k as f64).ln() / (2.0 * p)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAttack {
    pub phase: usize,
    pub scores: Vec<f64>,
    pub clipped: Vec<bool>,
    pub subset: Vec<UserId>,
    /// `sum_u s(u,i)`.
    pub total_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config: AttackConfig,
    pub phases: Vec<PhaseAttack>,
    /// `|{i : u in Y_i}|` for every user that appeared in some phase.
    pub appearances: BTreeMap<UserId, u32>,
    pub heavy_totals: BTreeMap<UserId, f64>,
    /// Smallest `|Y_i| / |S_i ∪ C| - 1/2` over phases.
    pub measured_eps1_min: f64,
    /// Mean `|Y_i| / |S_i ∪ C| - 1/2` over phases.
    pub measured_eps1_mean: f64,
    /// Flagging threshold: a heavy user is traced when it appears in more than `(1/2 + eps2) P` subsets.
    pub flag_eps2: f64,
    pub flagged: Vec<UserId>,
}

impl AttackReport {
    pub fn heavy_appearances<'a>(
        &'a self,
        support: &'a InstanceSupport,
    ) -> impl Iterator<Item = (UserId, u32)> + 'a {
        support
            .heavy
            .iter()
            .map(|u| (*u, self.appearances.get(u).copied().unwrap_or(0)))
    }

    pub fn subset_sizes(&self) -> Vec<usize> {
        self.phases.iter().map(|p| p.subset.len()).collect()
    }
}

pub fn run_rounding_attack(
    transcripts: &[PhaseTranscript],
    support: &InstanceSupport,
    cfg: &AttackConfig,
    seed: u64,
) -> AttackReport {
    run_rounding_attack_with(transcripts, support, cfg, seed, default_flag_eps2(transcripts.len() as u64, support.heavy.len() as u64))
}

pub fn run_rounding_attack_with(
    transcripts: &[PhaseTranscript],
    support: &InstanceSupport,
    cfg: &AttackConfig,
    seed: u64,
    flag_eps2: f64,
) -> AttackReport {
    let mut phases = Vec::with_capacity(transcripts.len());
    let mut appearances: BTreeMap<UserId, u32> = BTreeMap::new();
    let mut heavy_totals: BTreeMap<UserId, f64> =
        support.heavy.iter().map(|&u| (u, 0.0)).collect();
    let mut eps1 = Vec::with_capacity(transcripts.len());
    for tr in transcripts {
        let (scores, rounded) = round_phase(tr, cfg, seed);
        for &u in &tr.members {
            appearances.entry(u).or_insert(0);
        }
        for u in &rounded.subset {
            *appearances.get_mut(u).expect("member") += 1;
        }
        for (&u, &s) in tr.members.iter().zip(&scores) {
            if let Some(x) = heavy_totals.get_mut(&u) {
                *x += s;
            }
        }
        eps1.push(rounded.subset.len() as f64 / tr.members.len() as f64 - 0.5);
        phases.push(PhaseAttack {
            phase: tr.phase,
            total_score: scores.iter().sum(),
            scores,
            clipped: rounded.clipped,
            subset: rounded.subset,
        });
    }
    let limit = (0.5 + flag_eps2) * transcripts.len() as f64;
    let flagged = support
        .heavy
        .iter()
        .copied()
        .filter(|u| f64::from(appearances.get(u).copied().unwrap_or(0)) > limit)
        .collect();
    let measured_eps1_min = eps1.iter().copied().fold(f64::INFINITY, f64::min);
    let measured_eps1_mean = eps1.iter().sum::<f64>() / eps1.len().max(1) as f64;
    AttackReport {
        config: *cfg,
        phases,
        appearances,
        heavy_totals,
        measured_eps1_min,
        measured_eps1_mean,
        flag_eps2,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{ConstantCounter, ExactCounter};
    use crate::instance::{derive_params, run_instance, Prior, RunOptions};

    fn single_rep(a: f64, p: f64, bits: Vec<u8>) -> PhaseTranscript {
        PhaseTranscript {
            phase: 0,
            members: (0..bits.len() as UserId).collect(),
            priors: vec![p],
            raw: vec![a],
            normalized: vec![a],
            bits,
            stream_range: None,
        }
    }

    #[test]
    fn score_arithmetic() {
        let tr = single_rep(1.0, 0.3, vec![1, 0]);
        let s = phase_scores(&tr);
        assert!((s[0] - 0.7).abs() < 1e-12);
        assert!((s[1] + 0.3).abs() < 1e-12);
        let zero = single_rep(0.0, 0.3, vec![1, 0, 1]);
        assert!(phase_scores(&zero).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn inclusion_endpoints_and_clipping() {
        let r = 5.0;
        assert_eq!(inclusion_probability(0.0, r), 0.5);
        assert_eq!(inclusion_probability(r, r), 1.0);
        assert_eq!(inclusion_probability(3.0 * r, r), 1.0);
        assert_eq!(inclusion_probability(-r, r), 0.0);
        assert_eq!(inclusion_probability(-9.0 * r, r), 0.0);
        let cfg = AttackConfig { beta: 0.1, radius: r };
        let members = [1, 2, 3];
        let mut rng = PortableRng::from_state(1);
        let out = round_to_subset(&members, &[10.0, -10.0, 0.0], &cfg, &mut rng);
        assert_eq!(out.clipped, vec![true, true, false]);
        assert!(out.subset.contains(&1) && !out.subset.contains(&2));
        // Clipping before rounding gives the same draws.
        let mut a = PortableRng::from_state(4);
        let mut b = PortableRng::from_state(4);
        let raw = [7.5, -0.2, 2.0, -40.0];
        let clipped: Vec<f64> = raw.iter().map(|&s| clip(s, r)).collect();
        assert_eq!(
            round_to_subset(&[1, 2, 3, 4], &raw, &cfg, &mut a).subset,
            round_to_subset(&[1, 2, 3, 4], &clipped, &cfg, &mut b).subset
        );
    }

    #[test]
    fn inclusion_frequencies_match_binomial_bands() {
        let cfg = AttackConfig { beta: 0.01, radius: 4.0 };
        let scores = [-3.0, -1.0, 0.0, 0.5, 2.5, 3.9];
        let members: Vec<UserId> = (0..scores.len() as UserId).collect();
        let trials = 10_000;
        let mut counts = vec![0u32; scores.len()];
        let mut rng = PortableRng::from_state(12);
        for _ in 0..trials {
            for u in round_to_subset(&members, &scores, &cfg, &mut rng).subset {
                counts[u as usize] += 1;
            }
        }
        for (i, &s) in scores.iter().enumerate() {
            let p = inclusion_probability(s, cfg.radius);
            let sd = (trials as f64 * p * (1.0 - p)).sqrt();
            let diff = (f64::from(counts[i]) - trials as f64 * p).abs();
            assert!(diff <= 3.0 * sd + 1.0, "score {s}: {} vs {}", counts[i], trials as f64 * p);
        }
    }

    #[test]
    fn monotone_in_score() {
        let r = 3.0;
        let mut prev = 0.0;
        for i in -50..=50 {
            let p = inclusion_probability(i as f64 * 0.1, r);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn heavy_total_is_sum_of_phase_scores() {
        let params = derive_params(4, 2, 3, 23, Prior::Uniform).unwrap();
        let mut est = ExactCounter::new();
        let run = run_instance(&mut est, &params, 9, RunOptions::default()).unwrap();
        let cfg = AttackConfig::for_instance(&params);
        let report = run_rounding_attack(&run.transcripts, &run.support, &cfg, 9);
        for &u in &run.support.heavy {
            let direct = heavy_total_score(&run.transcripts, &run.support, u).unwrap();
            let summed: f64 = run
                .transcripts
                .iter()
                .zip(&report.phases)
                .map(|(tr, pa)| pa.scores[tr.members.binary_search(&u).unwrap()])
                .sum();
            assert!((direct - summed).abs() < 1e-9);
            assert!((report.heavy_totals[&u] - direct).abs() < 1e-9);
            assert!(report.appearances[&u] as u64 <= params.phases);
        }
        let light = run.support.groups[0][0];
        assert!(matches!(
            heavy_total_score(&run.transcripts, &run.support, light),
            Err(Error::NotHeavy(_))
        ));
    }

    #[test]
    fn zero_answers_give_zero_heavy_totals() {
        let params = derive_params(4, 2, 3, 23, Prior::Uniform).unwrap();
        let mut est = ConstantCounter::new(0.0);
        let run = run_instance(&mut est, &params, 2, RunOptions::default()).unwrap();
        for &u in &run.support.heavy {
            assert_eq!(heavy_total_score(&run.transcripts, &run.support, u).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_estimator_appearances_are_fair_coins() {
        // Answers independent of the bits: each heavy user's appearance count is Binomial(P, 1/2).
        let params = derive_params(4, 2, 3, 400, Prior::Uniform).unwrap();
        let cfg = AttackConfig::for_instance(&params);
        let p = params.phases as f64;
        let mut within = 0;
        let mut total = 0;
        for seed in 0..10 {
            let mut est = ConstantCounter::new(4.0);
            let run = run_instance(&mut est, &params, seed, RunOptions::default()).unwrap();
            let report = run_rounding_attack(&run.transcripts, &run.support, &cfg, seed);
            for (_, a) in report.heavy_appearances(&run.support) {
                total += 1;
                if (f64::from(a) - p / 2.0).abs() <= 3.0 * (p / 4.0).sqrt() {
                    within += 1;
                }
            }
        }
        assert!(within >= total - 1, "{within}/{total} within 3 sigma");
    }
}

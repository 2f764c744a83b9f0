//! The phase-structured hard instance for CountDistinct.
//!
//! A heavy set `C` of `k` users and `P` disjoint light groups `S_i` of `3h`
//! users are drawn from `[N]`. Phase `i` runs `w` repetitions; each draws a
//! prior `p`, gives every user of `S_i ∪ C` a `Ber(p)` bit, inserts the users
//! with bit one (in increasing id order, `Empty` for bit zero), queries the
//! estimator, then revokes the insertions in the same order.

use serde::{Deserialize, Serialize};

use crate::algorithms::{Estimator, Query};
use crate::error::{Error, Result};
use crate::model::{Stream, StreamUpdate, UserId};
use crate::rng::{tags, PortableRng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    #[default]
    Uniform,
    Logistic,
}

impl Prior {
    /// Draws `p` for a repetition over `n` users.
    pub fn sample(self, n: u64, rng: &mut PortableRng) -> f64 {
        match self {
            Prior::Uniform => rng.uniform(),
            Prior::Logistic => sample_logistic_prior(n, rng),
        }
    }
}

pub fn logistic(t: f64) -> f64 {
    t.exp() / (t.exp() + 1.0)
}

/// `t` uniform on `[-ln(5n), ln(5n)]`, `p = e^t / (e^t + 1)`.
pub fn sample_logistic_prior(n: u64, rng: &mut PortableRng) -> f64 {
    assert!(n >= 2, "logistic prior needs n >= 2");
    let half_width = (5.0 * n as f64).ln();
    let t = (2.0 * rng.uniform() - 1.0) * half_width;
    logistic(t)
}

/// Parameters as written in a params JSON; [`InstanceRequest::derive`] validates them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRequest {
    pub w: u64,
    pub k: u64,
    pub h: u64,
    pub phases: u64,
    #[serde(default)]
    pub prior: Prior,
    #[serde(default)]
    pub universe: Option<u32>,
}

impl InstanceRequest {
    pub fn derive(&self) -> Result<InstanceParams> {
        let params = derive_params(self.w, self.k, self.h, self.phases, self.prior)?;
        match self.universe {
            Some(n) => params.with_universe(n),
            None => Ok(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceParams {
    /// Stream length `T = 2 P w (3h + k)`.
    pub t: u64,
    pub w: u64,
    pub k: u64,
    pub h: u64,
    pub phases: u64,
    pub universe: u32,
    pub prior: Prior,
}

/// Validates `sqrt(w) <= k <= h` and `P >= 10 h^2 / w`, then derives `T` and the minimal `N`.
pub fn derive_params(w: u64, k: u64, h: u64, phases: u64, prior: Prior) -> Result<InstanceParams> {
    if w == 0 || h == 0 || phases == 0 {
        return Err(Error::param("w/h/phases", "must all be >= 1"));
    }
    if k.checked_mul(k).is_none_or(|kk| kk < w) {
        return Err(Error::param("k", format!("k={k} < sqrt(w)={:.3}", (w as f64).sqrt())));
    }
    if k > h {
        return Err(Error::param("h", format!("h={h} < k={k}")));
    }
    if phases.saturating_mul(w) < 10 * h * h {
        return Err(Error::param(
            "phases",
            format!("P={phases} < 10 h^2 / w = {:.3}", 10.0 * (h * h) as f64 / w as f64),
        ));
    }
    let group = 3 * h + k;
    let t = 2 * phases * w * group;
    let universe = k + 3 * h * phases;
    let universe = u32::try_from(universe)
        .map_err(|_| Error::param("universe", format!("N={universe} exceeds 2^32")))?;
    Ok(InstanceParams {
        t,
        w,
        k,
        h,
        phases,
        universe,
        prior,
    })
}

impl InstanceParams {
    /// `3h + k`, the number of users touched by one phase.
    pub fn group_size(&self) -> u64 {
        3 * self.h + self.k
    }

    pub fn min_universe(&self) -> u64 {
        self.k + 3 * self.h * self.phases
    }

    pub fn with_universe(mut self, universe: u32) -> Result<Self> {
        if u64::from(universe) < self.min_universe() {
            return Err(Error::param(
                "universe",
                format!("N={universe} < k + 3hP = {}", self.min_universe()),
            ));
        }
        self.universe = universe;
        Ok(self)
    }

    pub fn with_prior(mut self, prior: Prior) -> Self {
        self.prior = prior;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSupport {
    /// The heavy set `C`, sorted.
    pub heavy: Vec<UserId>,
    /// The light groups `S_1..S_P`, each sorted.
    pub groups: Vec<Vec<UserId>>,
}

impl InstanceSupport {
    /// Sorted `S_i ∪ C` (0-based phase index).
    pub fn members(&self, phase: usize) -> Vec<UserId> {
        let mut m: Vec<UserId> = self.groups[phase].iter().chain(&self.heavy).copied().collect();
        m.sort_unstable();
        m
    }

    pub fn is_heavy(&self, user: UserId) -> bool {
        self.heavy.binary_search(&user).is_ok()
    }

    /// Every user that appears in `C` or some `S_i`, sorted.
    pub fn all_users(&self) -> Vec<UserId> {
        let mut all: Vec<UserId> = self.groups.iter().flatten().chain(&self.heavy).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Uniform draw of `C` and the disjoint `S_i` from `[N]`, deterministic per seed.
pub fn sample_support(params: &InstanceParams, seed: u64) -> InstanceSupport {
    let mut rng = PortableRng::derive(seed, tags::SUPPORT, 0);
    let k = params.k as usize;
    let group = 3 * params.h as usize;
    let total = k + group * params.phases as usize;
    let draws: Vec<UserId> = rng
        .sample_without_replacement(u64::from(params.universe), total)
        .into_iter()
        .map(|x| x as UserId)
        .collect();
    let sorted = |s: &[UserId]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    InstanceSupport {
        heavy: sorted(&draws[..k]),
        groups: draws[k..].chunks(group).map(sorted).collect(),
    }
}

/// One phase of answers, priors and bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTranscript {
    pub phase: usize,
    /// Sorted `S_i ∪ C`.
    pub members: Vec<UserId>,
    pub priors: Vec<f64>,
    /// Row-major `[repetition][member]` bits.
    pub bits: Vec<u8>,
    /// Answers truncated to `[0, 3h + k]` (or the decoded answer for gadget runs).
    pub raw: Vec<f64>,
    /// Normalized answers in `[0, 1]`.
    pub normalized: Vec<f64>,
    /// Half-open index range of this phase in the recorded stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_range: Option<(usize, usize)>,
}

impl PhaseTranscript {
    pub fn repetitions(&self) -> usize {
        self.priors.len()
    }

    pub fn bit(&self, repetition: usize, member: usize) -> u8 {
        self.bits[repetition * self.members.len() + member]
    }

    pub fn repetition_bits(&self, repetition: usize) -> &[u8] {
        let n = self.members.len();
        &self.bits[repetition * n..(repetition + 1) * n]
    }
}

/// Receives generated updates: feeds the estimator and optionally records them.
pub(crate) struct UpdateSink<'a> {
    pub estimator: &'a mut dyn Estimator,
    pub record: Option<&'a mut Vec<StreamUpdate>>,
    pub emitted: usize,
}

impl UpdateSink<'_> {
    pub fn emit(&mut self, update: StreamUpdate) -> Result<()> {
        self.estimator.process(&update)?;
        if let Some(rec) = self.record.as_deref_mut() {
            rec.push(update);
        }
        self.emitted += 1;
        Ok(())
    }
}

/// Runs phase `phase` over `members` (sorted `S_i ∪ C`).
///
/// Players in the communication game call this directly with their own input
/// set; it never needs to tell heavy from light users.
pub fn run_phase_on(
    estimator: &mut dyn Estimator,
    members: &[UserId],
    params: &InstanceParams,
    phase: usize,
    rng: &mut PortableRng,
    record: Option<&mut Vec<StreamUpdate>>,
) -> Result<PhaseTranscript> {
    debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
    let n = members.len();
    let reps = params.w as usize;
    let scale = params.group_size() as f64;
    let start = record.as_ref().map(|r| r.len());
    let mut sink = UpdateSink {
        estimator,
        record,
        emitted: 0,
    };
    let mut priors = Vec::with_capacity(reps);
    let mut bits = Vec::with_capacity(reps * n);
    let mut raw = Vec::with_capacity(reps);
    let mut normalized = Vec::with_capacity(reps);
    for _ in 0..reps {
        let p = params.prior.sample(n as u64, rng);
        let row_start = bits.len();
        for _ in 0..n {
            bits.push(u8::from(rng.bernoulli(p)));
        }
        let row = &bits[row_start..];
        for (&u, &b) in members.iter().zip(row) {
            sink.emit(if b == 1 { StreamUpdate::insert(u) } else { StreamUpdate::Empty })?;
        }
        let answer = sink.estimator.query(Query::Distinct)?.value();
        let r = truncate(answer, scale);
        for (&u, &b) in members.iter().zip(row) {
            sink.emit(if b == 1 { StreamUpdate::delete(u) } else { StreamUpdate::Empty })?;
        }
        priors.push(p);
        raw.push(r);
        normalized.push(r / scale);
    }
    let stream_range = start.map(|s| (s, s + sink.emitted));
    Ok(PhaseTranscript {
        phase,
        members: members.to_vec(),
        priors,
        bits,
        raw,
        normalized,
        stream_range,
    })
}

/// Clamps an answer into `[0, max]`; non-finite answers map to the nearest end (NaN to 0).
pub fn truncate(answer: f64, max: f64) -> f64 {
    if answer.is_nan() {
        0.0
    } else {
        answer.clamp(0.0, max)
    }
}

/// Runs phase `phase` of `support` with the phase's own rng substream.
pub fn run_phase(
    estimator: &mut dyn Estimator,
    support: &InstanceSupport,
    params: &InstanceParams,
    phase: usize,
    seed: u64,
    record: Option<&mut Vec<StreamUpdate>>,
) -> Result<PhaseTranscript> {
    let mut rng = PortableRng::derive(seed, tags::PHASE, phase as u64);
    run_phase_on(estimator, &support.members(phase), params, phase, &mut rng, record)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_stream: bool,
    pub record_snapshots: bool,
}

#[derive(Debug, Clone)]
pub struct InstanceRun {
    pub params: InstanceParams,
    pub support: InstanceSupport,
    pub transcripts: Vec<PhaseTranscript>,
    pub stream: Option<Stream>,
    /// Snapshot size after each phase, when requested.
    pub snapshot_bits: Vec<u64>,
}

impl InstanceRun {
    /// Stream positions (number of updates already processed) of every query.
    pub fn query_positions(&self) -> Vec<usize> {
        let n = self.params.group_size() as usize;
        let reps = self.params.w as usize;
        (0..self.transcripts.len())
            .flat_map(|i| (0..reps).map(move |j| (i * reps + j) * 2 * n + n))
            .collect()
    }

    pub fn raw_answers(&self) -> Vec<f64> {
        self.transcripts.iter().flat_map(|t| t.raw.iter().copied()).collect()
    }
}

/// Runs all `P` phases sequentially on one estimator instance.
pub fn run_instance(
    estimator: &mut dyn Estimator,
    params: &InstanceParams,
    seed: u64,
    options: RunOptions,
) -> Result<InstanceRun> {
    let support = sample_support(params, seed);
    run_instance_on(estimator, params, &support, seed, options)
}

pub fn run_instance_on(
    estimator: &mut dyn Estimator,
    params: &InstanceParams,
    support: &InstanceSupport,
    seed: u64,
    options: RunOptions,
) -> Result<InstanceRun> {
    let mut updates = options
        .record_stream
        .then(|| Vec::with_capacity(params.t as usize));
    let mut transcripts = Vec::with_capacity(params.phases as usize);
    let mut snapshot_bits = Vec::new();
    for phase in 0..params.phases as usize {
        let tr = run_phase(estimator, support, params, phase, seed, updates.as_mut())?;
        transcripts.push(tr);
        if options.record_snapshots {
            snapshot_bits.push(estimator.snapshot().bit_length());
        }
    }
    Ok(InstanceRun {
        params: *params,
        support: support.clone(),
        transcripts,
        stream: updates.map(|updates| Stream {
            universe: params.universe,
            updates,
        }),
        snapshot_bits,
    })
}

/// Replays `updates` and records the truncated answer at each query position.
pub fn replay_answers(
    estimator: &mut dyn Estimator,
    updates: &[StreamUpdate],
    query_positions: &[usize],
    max_answer: f64,
) -> Result<Vec<f64>> {
    let mut answers = Vec::with_capacity(query_positions.len());
    let mut next = 0;
    for (t, u) in updates.iter().enumerate() {
        while next < query_positions.len() && query_positions[next] == t {
            answers.push(truncate(estimator.query(Query::Distinct)?.value(), max_answer));
            next += 1;
        }
        estimator.process(u)?;
    }
    while next < query_positions.len() && query_positions[next] == updates.len() {
        answers.push(truncate(estimator.query(Query::Distinct)?.value(), max_answer));
        next += 1;
    }
    Ok(answers)
}

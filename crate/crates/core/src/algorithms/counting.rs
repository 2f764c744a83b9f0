//! CountDistinct estimators: the exact baseline, the blocklisting DP counter,
//! a deliberately leaky accurate counter, and a constant-output control.

use std::collections::HashMap;

use super::snapshot::{SnapshotReader, SnapshotWriter};
use super::{counting_update, unsupported, Answer, Estimator, Problem, Query, Snapshot};
use crate::error::{Error, Result};
use crate::mechanisms::standard_normal;
use crate::model::{FrequencyState, PrivacyParams, StreamUpdate, UserId};
use crate::rng::PortableRng;

const TAG_EXACT: u8 = 1;
const TAG_CAPPED: u8 = 2;
const TAG_LEAKY: u8 = 3;
const TAG_CONSTANT: u8 = 4;

fn write_freq(w: &mut SnapshotWriter, freq: &FrequencyState) {
    w.u64(freq.step());
    let entries: Vec<_> = freq.nonzero().collect();
    w.u64(entries.len() as u64);
    for (u, f) in entries {
        w.u32(u).i64(f);
    }
}

fn read_freq(r: &mut SnapshotReader<'_>) -> Result<FrequencyState> {
    let step = r.u64()?;
    let n = r.len(12)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        entries.push((r.u32()?, r.i64()?));
    }
    Ok(FrequencyState::restore_parts(entries, step, false))
}

/// Non-private exact distinct counter.
#[derive(Debug, Clone, Default)]
pub struct ExactCounter {
    freq: FrequencyState,
}

impl ExactCounter {
    pub fn new() -> Self {
        ExactCounter {
            freq: FrequencyState::generic(),
        }
    }

    pub fn count(&self) -> u64 {
        self.freq.true_distinct_count()
    }
}

impl Estimator for ExactCounter {
    fn name(&self) -> &'static str {
        "exact_counter"
    }

    fn problem(&self) -> Problem {
        Problem::CountDistinct
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        counting_update(update)?;
        self.freq.apply_update(update)
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::Distinct => Ok(Answer::Count(self.count() as f64)),
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_EXACT);
        write_freq(&mut w, &self.freq);
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_EXACT)?;
        let freq = read_freq(&mut r)?;
        r.finish()?;
        self.freq = freq;
        Ok(())
    }
}

/// Exact distinct count over non-blocklisted contributions plus per-answer
/// Gaussian noise.
///
/// Every user's occurrency is tracked; once it exceeds `cap` the user's later
/// updates are dropped and its current frequency stays frozen. The noise scale
/// `sqrt(cap) * sqrt(2 ln(1.25/delta)) / epsilon` matches an L2 sensitivity of
/// `sqrt(cap)`, which holds for phase-reset query patterns (each effective
/// insertion is visible to one query) but not for arbitrary streams.
#[derive(Debug, Clone)]
pub struct CappedDpCounter {
    cap: u64,
    sigma: f64,
    occurrency: HashMap<UserId, u32>,
    freq: FrequencyState,
    rng: PortableRng,
}

impl CappedDpCounter {
    pub fn new(cap: u64, privacy: PrivacyParams, rng: PortableRng) -> Result<Self> {
        let mut c = Self::noiseless(cap)?;
        c.sigma = Self::gaussian_sigma(cap, privacy);
        c.rng = rng;
        Ok(c)
    }

    pub fn noiseless(cap: u64) -> Result<Self> {
        if cap == 0 || cap > u64::from(u32::MAX) {
            return Err(Error::param("cap", format!("{cap} must be in [1, 2^32)")));
        }
        Ok(CappedDpCounter {
            cap,
            sigma: 0.0,
            occurrency: HashMap::new(),
            freq: FrequencyState::generic(),
            rng: PortableRng::from_state(0),
        })
    }

    pub fn gaussian_sigma(cap: u64, privacy: PrivacyParams) -> f64 {
        (cap as f64).sqrt() * (2.0 * (1.25 / privacy.delta).ln()).sqrt() / privacy.epsilon
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_blocklisted(&self, user: UserId) -> bool {
        self.occurrency.get(&user).is_some_and(|&o| u64::from(o) > self.cap)
    }

    /// Distinct count over effective (non-dropped) updates, without noise.
    pub fn effective_count(&self) -> u64 {
        self.freq.true_distinct_count()
    }
}

impl Estimator for CappedDpCounter {
    fn name(&self) -> &'static str {
        "capped_dp_counter"
    }

    fn problem(&self) -> Problem {
        Problem::CountDistinct
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        counting_update(update)?;
        if let Some(user) = update.user() {
            let occ = self.occurrency.entry(user).or_insert(0);
            *occ = occ.saturating_add(1);
            if u64::from(*occ) > self.cap {
                return self.freq.apply_update(&StreamUpdate::Empty);
            }
        }
        self.freq.apply_update(update)
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::Distinct => {
                let exact = self.effective_count() as f64;
                let noise = if self.sigma > 0.0 {
                    self.sigma * standard_normal(&mut self.rng)
                } else {
                    0.0
                };
                Ok(Answer::Count(exact + noise))
            }
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_CAPPED);
        w.u64(self.cap).f64(self.sigma).u64(self.rng.state());
        let mut occ: Vec<_> = self.occurrency.iter().map(|(&u, &o)| (u, o)).collect();
        occ.sort_unstable();
        w.u64(occ.len() as u64);
        for (u, o) in occ {
            w.u32(u).u32(o);
        }
        write_freq(&mut w, &self.freq);
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_CAPPED)?;
        let cap = r.u64()?;
        let sigma = r.f64()?;
        let rng = PortableRng::from_state(r.u64()?);
        let n = r.len(8)?;
        let mut occurrency = HashMap::with_capacity(n);
        for _ in 0..n {
            let u = r.u32()?;
            occurrency.insert(u, r.u32()?);
        }
        let freq = read_freq(&mut r)?;
        r.finish()?;
        *self = CappedDpCounter {
            cap,
            sigma,
            occurrency,
            freq,
            rng,
        };
        Ok(())
    }
}

/// Accurate but non-private: shifts the exact count by `+eta` when the target
/// user is currently active and by `-eta` otherwise.
#[derive(Debug, Clone)]
pub struct EchoLeakyCounter {
    target: UserId,
    eta: f64,
    freq: FrequencyState,
}

impl EchoLeakyCounter {
    pub fn new(target: UserId, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::param("eta", format!("{eta} must be >= 0")));
        }
        Ok(EchoLeakyCounter {
            target,
            eta,
            freq: FrequencyState::generic(),
        })
    }
}

impl Estimator for EchoLeakyCounter {
    fn name(&self) -> &'static str {
        "echo_leaky_counter"
    }

    fn problem(&self) -> Problem {
        Problem::CountDistinct
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        counting_update(update)?;
        self.freq.apply_update(update)
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::Distinct => {
                let active = self.freq.frequency(self.target) != 0;
                let shift = if active { self.eta } else { -self.eta };
                Ok(Answer::Count(self.freq.true_distinct_count() as f64 + shift))
            }
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_LEAKY);
        w.u32(self.target).f64(self.eta);
        write_freq(&mut w, &self.freq);
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_LEAKY)?;
        let target = r.u32()?;
        let eta = r.f64()?;
        let freq = read_freq(&mut r)?;
        r.finish()?;
        *self = EchoLeakyCounter { target, eta, freq };
        Ok(())
    }
}

/// Ignores the stream and always answers `value`.
#[derive(Debug, Clone)]
pub struct ConstantCounter {
    value: f64,
}

impl ConstantCounter {
    pub fn new(value: f64) -> Self {
        ConstantCounter { value }
    }
}

impl Estimator for ConstantCounter {
    fn name(&self) -> &'static str {
        "constant_counter"
    }

    fn problem(&self) -> Problem {
        Problem::CountDistinct
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        counting_update(update)
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::Distinct => Ok(Answer::Count(self.value)),
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_CONSTANT);
        w.f64(self.value);
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_CONSTANT)?;
        self.value = r.f64()?;
        r.finish()
    }
}

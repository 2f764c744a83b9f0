//! Turnstile k-minimum-values sketch via adaptive threshold sampling.
//!
//! The sketch keeps exactly the currently active users whose hash falls below
//! a threshold `tau`, together with their frequencies. When the sample
//! overflows its slot budget, the largest hash is evicted and becomes the new
//! (exclusive) threshold; the threshold never rises again. Deletions of
//! sampled users shrink the sample, deletions of unsampled users are no-ops.
//! Below saturation the sketch is exact.

use std::collections::BTreeMap;

use super::snapshot::{SnapshotReader, SnapshotWriter};
use super::{unsupported, Answer, Estimator, Problem, Query, Snapshot};
use crate::error::{Error, Result};
use crate::model::{StreamUpdate, UserId};
use crate::rng::mix64;

const TAG_KMV: u8 = 5;
/// tag + hash key + slots + threshold + sample length.
const HEADER_BITS: u64 = 8 * (1 + 8 + 8 + 8 + 8);
/// u32 id + i32 frequency.
const ENTRY_BITS: u64 = 64;

#[derive(Debug, Clone)]
pub struct KmvSketch {
    hash_key: u64,
    slots: usize,
    /// `None` until the first eviction: every active user is sampled.
    threshold: Option<u64>,
    sample: BTreeMap<(u64, UserId), i32>,
}

impl KmvSketch {
    pub const MIN_SLOTS: usize = 64;

    pub fn new(slots: usize, hash_key: u64) -> Result<Self> {
        if slots < Self::MIN_SLOTS {
            return Err(Error::param(
                "space_budget",
                format!("{slots} slots is below the minimum of {}", Self::MIN_SLOTS),
            ));
        }
        Ok(KmvSketch {
            hash_key,
            slots,
            threshold: None,
            sample: BTreeMap::new(),
        })
    }

    /// Upper bound on the snapshot size for this slot budget.
    pub fn declared_bits(&self) -> u64 {
        HEADER_BITS + ENTRY_BITS * self.slots as u64
    }

    fn hash(&self, user: UserId) -> u64 {
        mix64(self.hash_key ^ mix64(u64::from(user)))
    }

    fn admits(&self, h: u64) -> bool {
        self.threshold.is_none_or(|t| h < t)
    }

    pub fn estimate(&self) -> f64 {
        let n = self.sample.len() as f64;
        match self.threshold {
            None => n,
            Some(t) => n / (t as f64 / 2f64.powi(64)),
        }
    }
}

impl Estimator for KmvSketch {
    fn name(&self) -> &'static str {
        "kmv_sketch"
    }

    fn problem(&self) -> Problem {
        Problem::CountDistinct
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        super::counting_update(update)?;
        let StreamUpdate::Signed { user, sign } = *update else {
            return Ok(());
        };
        let h = self.hash(user);
        if !self.admits(h) {
            return Ok(());
        }
        let key = (h, user);
        let f = self.sample.get(&key).copied().unwrap_or(0) + sign.value() as i32;
        if f == 0 {
            self.sample.remove(&key);
        } else {
            self.sample.insert(key, f);
        }
        if self.sample.len() > self.slots {
            let (&(evicted, _), _) = self.sample.last_key_value().expect("non-empty");
            self.sample.retain(|&(hh, _), _| hh < evicted);
            self.threshold = Some(evicted);
        }
        Ok(())
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::Distinct => Ok(Answer::Count(self.estimate())),
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_KMV);
        w.u64(self.hash_key)
            .u64(self.slots as u64)
            .u64(self.threshold.unwrap_or(u64::MAX))
            .u64(self.sample.len() as u64);
        for (&(_, user), &f) in &self.sample {
            w.u32(user).i32(f);
        }
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_KMV)?;
        let hash_key = r.u64()?;
        let slots = r.u64()? as usize;
        let threshold = match r.u64()? {
            u64::MAX => None,
            t => Some(t),
        };
        let n = r.len(8)?;
        let mut restored = KmvSketch::new(slots, hash_key)?;
        restored.threshold = threshold;
        for _ in 0..n {
            let user = r.u32()?;
            let f = r.i32()?;
            let h = restored.hash(user);
            restored.sample.insert((h, user), f);
        }
        r.finish()?;
        *self = restored;
        Ok(())
    }
}

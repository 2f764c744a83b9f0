//! Exact baselines for MaxSelect and Quantile, plus their answer checkers.

use std::collections::BTreeMap;

use super::snapshot::{SnapshotReader, SnapshotWriter};
use super::{unsupported, Answer, Estimator, Problem, Query, Snapshot};
use crate::error::{Error, Result};
use crate::model::{check_approx, AccuracyParams, StreamUpdate, UserId};

const TAG_MAXSELECT: u8 = 6;
const TAG_QUANTILE: u8 = 7;

/// Exact argmax over `d` binary features; ties go to the lower index.
#[derive(Debug, Clone)]
pub struct ExactMaxSelect {
    d: u32,
    /// Users with at least one feature set, as a bitmask per 64-feature word.
    vectors: BTreeMap<UserId, Vec<u64>>,
    counts: Vec<i64>,
}

impl ExactMaxSelect {
    pub fn new(d: u32) -> Result<Self> {
        if d < 2 {
            return Err(Error::param("d", format!("{d} features; need at least 2")));
        }
        Ok(ExactMaxSelect {
            d,
            vectors: BTreeMap::new(),
            counts: vec![0; d as usize],
        })
    }

    fn words(&self) -> usize {
        (self.d as usize).div_ceil(64)
    }

    pub fn counts(&self) -> &[i64] {
        &self.counts
    }

    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (j, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = j;
            }
        }
        best as u32
    }
}

impl Estimator for ExactMaxSelect {
    fn name(&self) -> &'static str {
        "exact_maxselect"
    }

    fn problem(&self) -> Problem {
        Problem::MaxSelect
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        match *update {
            StreamUpdate::Empty => Ok(()),
            StreamUpdate::FeatureFlip { user, feature } => {
                if feature >= self.d {
                    return Err(Error::MalformedUpdate(format!(
                        "feature {feature} out of range for d={}",
                        self.d
                    )));
                }
                let words = self.words();
                let v = self.vectors.entry(user).or_insert_with(|| vec![0; words]);
                let (word, bit) = ((feature / 64) as usize, feature % 64);
                v[word] ^= 1 << bit;
                let now_set = v[word] >> bit & 1 == 1;
                self.counts[feature as usize] += if now_set { 1 } else { -1 };
                if v.iter().all(|&x| x == 0) {
                    self.vectors.remove(&user);
                }
                Ok(())
            }
            other => Err(Error::MalformedUpdate(format!(
                "`{other}` is not a MaxSelect update"
            ))),
        }
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::MaxFeature => Ok(Answer::Feature(self.argmax())),
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_MAXSELECT);
        w.u32(self.d).u64(self.vectors.len() as u64);
        for (&u, v) in &self.vectors {
            w.u32(u);
            for &word in v {
                w.u64(word);
            }
        }
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_MAXSELECT)?;
        let mut restored = ExactMaxSelect::new(r.u32()?)?;
        let words = restored.words();
        let n = r.len(4 + 8 * words)?;
        for _ in 0..n {
            let u = r.u32()?;
            let mut v = Vec::with_capacity(words);
            for _ in 0..words {
                v.push(r.u64()?);
            }
            for j in 0..restored.d {
                if v[(j / 64) as usize] >> (j % 64) & 1 == 1 {
                    restored.counts[j as usize] += 1;
                }
            }
            restored.vectors.insert(u, v);
        }
        r.finish()?;
        *self = restored;
        Ok(())
    }
}

/// Exact rank queries over a population of `population` users holding items
/// in `[0, u)`; users start at `rest_item`.
#[derive(Debug, Clone)]
pub struct ExactQuantile {
    u: u32,
    population: u32,
    rest_item: u32,
    moved: BTreeMap<UserId, u32>,
    counts: Vec<u64>,
}

impl ExactQuantile {
    pub fn new(u: u32, population: u32, rest_item: u32) -> Result<Self> {
        if u < 2 {
            return Err(Error::param("u", format!("{u} items; need at least 2")));
        }
        if rest_item >= u {
            return Err(Error::param("rest_item", format!("{rest_item} >= U={u}")));
        }
        let mut counts = vec![0; u as usize];
        counts[rest_item as usize] = u64::from(population);
        Ok(ExactQuantile {
            u,
            population,
            rest_item,
            moved: BTreeMap::new(),
            counts,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Smallest item whose cumulative count reaches `rank` (1-based).
    pub fn item_at_rank(&self, rank: u64) -> u32 {
        let mut cumulative = 0;
        for (item, &c) in self.counts.iter().enumerate() {
            cumulative += c;
            if cumulative >= rank {
                return item as u32;
            }
        }
        self.u - 1
    }
}

impl Estimator for ExactQuantile {
    fn name(&self) -> &'static str {
        "exact_quantile"
    }

    fn problem(&self) -> Problem {
        Problem::Quantile
    }

    fn process(&mut self, update: &StreamUpdate) -> Result<()> {
        match *update {
            StreamUpdate::Empty => Ok(()),
            StreamUpdate::ItemChange { user, item } => {
                if item >= self.u || user >= self.population {
                    return Err(Error::MalformedUpdate(format!(
                        "`{update}` out of range for U={}, population={}",
                        self.u, self.population
                    )));
                }
                let old = self.moved.get(&user).copied().unwrap_or(self.rest_item);
                self.counts[old as usize] -= 1;
                self.counts[item as usize] += 1;
                if item == self.rest_item {
                    self.moved.remove(&user);
                } else {
                    self.moved.insert(user, item);
                }
                Ok(())
            }
            other => Err(Error::MalformedUpdate(format!(
                "`{other}` is not a Quantile update"
            ))),
        }
    }

    fn query(&mut self, query: Query) -> Result<Answer> {
        match query {
            Query::Rank(k) => Ok(Answer::Item(self.item_at_rank(k))),
            q => Err(unsupported(self.name(), q)),
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut w = SnapshotWriter::new(TAG_QUANTILE);
        w.u32(self.u)
            .u32(self.population)
            .u32(self.rest_item)
            .u64(self.moved.len() as u64);
        for (&user, &item) in &self.moved {
            w.u32(user).u32(item);
        }
        w.finish()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let mut r = SnapshotReader::new(snapshot, TAG_QUANTILE)?;
        let mut restored = ExactQuantile::new(r.u32()?, r.u32()?, r.u32()?)?;
        let n = r.len(8)?;
        for _ in 0..n {
            let user = r.u32()?;
            let item = r.u32()?;
            restored.process(&StreamUpdate::ItemChange { user, item })?;
        }
        r.finish()?;
        *self = restored;
        Ok(())
    }
}

/// MaxSelect correctness: the chosen feature's count approximates the maximum count.
pub fn check_maxselect_answer(counts: &[i64], answer: u32, acc: AccuracyParams) -> bool {
    let best = counts.iter().copied().max().unwrap_or(0) as f64;
    counts
        .get(answer as usize)
        .is_some_and(|&c| check_approx(c as f64, best, acc))
}

/// Quantile correctness. Users holding the answered item may be ranked anywhere
/// within their tie block, so the answer passes if any rank in
/// `[below + 1, below + count]` approximates `k`.
pub fn check_quantile_answer(counts: &[u64], k: u64, answer: u32, acc: AccuracyParams) -> bool {
    let Some(&tied) = counts.get(answer as usize) else {
        return false;
    };
    let below: u64 = counts[..answer as usize].iter().sum();
    let k = k as f64;
    let lo_ok = (1.0 - acc.tau) * k - acc.eta;
    let hi_ok = (1.0 + acc.tau) * k + acc.eta;
    let (first, last) = ((below + 1) as f64, (below + tied.max(1)) as f64);
    first.min(last) <= hi_ok && last >= lo_ok
}

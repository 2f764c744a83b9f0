//! Turnstile streams, frequency state and occurrency accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense user identifier in `[0, N)`.
pub type UserId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamUpdate {
    Empty,
    Signed { user: UserId, sign: Sign },
    FeatureFlip { user: UserId, feature: u32 },
    ItemChange { user: UserId, item: u32 },
}

impl StreamUpdate {
    pub fn insert(user: UserId) -> Self {
        StreamUpdate::Signed {
            user,
            sign: Sign::Plus,
        }
    }

    pub fn delete(user: UserId) -> Self {
        StreamUpdate::Signed {
            user,
            sign: Sign::Minus,
        }
    }

    pub fn user(&self) -> Option<UserId> {
        match *self {
            StreamUpdate::Empty => None,
            StreamUpdate::Signed { user, .. }
            | StreamUpdate::FeatureFlip { user, .. }
            | StreamUpdate::ItemChange { user, .. } => Some(user),
        }
    }

    /// Same update with its user replaced by `Empty` when `user` matches.
    pub fn without_user(self, user: UserId) -> Self {
        if self.user() == Some(user) {
            StreamUpdate::Empty
        } else {
            self
        }
    }
}

impl fmt::Display for StreamUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StreamUpdate::Empty => write!(f, "E"),
            StreamUpdate::Signed { user, sign } => {
                let s = if sign == Sign::Plus { "+1" } else { "-1" };
                write!(f, "S {user} {s}")
            }
            StreamUpdate::FeatureFlip { user, feature } => write!(f, "F {user} {feature}"),
            StreamUpdate::ItemChange { user, item } => write!(f, "I {user} {item}"),
        }
    }
}

impl std::str::FromStr for StreamUpdate {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let tag = parts.next().ok_or("empty line")?;
        let mut num = |what: &str| -> Result<u32, String> {
            parts
                .next()
                .ok_or_else(|| format!("missing {what}"))?
                .parse::<u32>()
                .map_err(|e| format!("bad {what}: {e}"))
        };
        let update = match tag {
            "E" => StreamUpdate::Empty,
            "S" => {
                let user = num("user")?;
                let sign = match parts.next() {
                    Some("+1") => Sign::Plus,
                    Some("-1") => Sign::Minus,
                    other => return Err(format!("bad sign {other:?}")),
                };
                StreamUpdate::Signed { user, sign }
            }
            "F" => StreamUpdate::FeatureFlip {
                user: num("user")?,
                feature: num("feature")?,
            },
            "I" => StreamUpdate::ItemChange {
                user: num("user")?,
                item: num("item")?,
            },
            other => return Err(format!("unknown update tag {other:?}")),
        };
        if parts.next().is_some() {
            return Err("trailing tokens".into());
        }
        Ok(update)
    }
}

/// Flat ordered turnstile stream over the universe `[0, universe)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stream {
    pub universe: u32,
    pub updates: Vec<StreamUpdate>,
}

impl Stream {
    pub fn new(universe: u32) -> Self {
        Stream {
            universe,
            updates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// Checks user, feature and item indices against the declared universes.
    pub fn validate(&self, features: u32, items: u32) -> Result<()> {
        for (step, u) in self.updates.iter().enumerate() {
            let bad = match *u {
                StreamUpdate::Empty => None,
                StreamUpdate::Signed { user, .. } => (user >= self.universe).then_some("user"),
                StreamUpdate::FeatureFlip { user, feature } => {
                    if user >= self.universe {
                        Some("user")
                    } else {
                        (feature >= features).then_some("feature")
                    }
                }
                StreamUpdate::ItemChange { user, item } => {
                    if user >= self.universe {
                        Some("user")
                    } else {
                        (item >= items).then_some("item")
                    }
                }
            };
            if let Some(what) = bad {
                return Err(Error::MalformedUpdate(format!(
                    "update #{step} `{u}` has {what} out of range"
                )));
            }
        }
        Ok(())
    }

    /// Canonical text form: header `N <universe> T <len>`, then one update per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "N {} T {}", self.universe, self.updates.len())?;
        for u in &self.updates {
            writeln!(out, "{u}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (universe, len) = match fields.as_slice() {
            ["N", n, "T", t] => (
                n.parse::<u32>().map_err(|e| Error::Parse {
                    line: 1,
                    msg: format!("bad N: {e}"),
                })?,
                t.parse::<usize>().map_err(|e| Error::Parse {
                    line: 1,
                    msg: format!("bad T: {e}"),
                })?,
            ),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected `N <n> T <t>`, got {header:?}"),
                })
            }
        };
        let mut updates = Vec::with_capacity(len);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let u = line.parse::<StreamUpdate>().map_err(|msg| Error::Parse {
                line: i + 2,
                msg,
            })?;
            updates.push(u);
        }
        if updates.len() != len {
            return Err(Error::Parse {
                line: updates.len() + 1,
                msg: format!("header declares T={len} but found {} updates", updates.len()),
            });
        }
        let stream = Stream { universe, updates };
        stream.validate(u32::MAX, u32::MAX)?;
        Ok(stream)
    }
}

/// Signed per-user sums of a turnstile stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyState {
    freq: BTreeMap<UserId, i64>,
    step: u64,
    strict_binary: bool,
}

impl Default for FrequencyState {
    fn default() -> Self {
        Self::new()
    }
}

impl FrequencyState {
    /// Strict-binary state: frequencies confined to `{0,1}`.
    pub fn new() -> Self {
        FrequencyState {
            freq: BTreeMap::new(),
            step: 0,
            strict_binary: true,
        }
    }

    /// Unrestricted integer frequencies.
    pub fn generic() -> Self {
        FrequencyState {
            strict_binary: false,
            ..Self::new()
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_strict(&self) -> bool {
        self.strict_binary
    }

    pub fn frequency(&self, user: UserId) -> i64 {
        self.freq.get(&user).copied().unwrap_or(0)
    }

    pub fn apply_update(&mut self, update: &StreamUpdate) -> Result<()> {
        if let StreamUpdate::Signed { user, sign } = *update {
            let value = self.frequency(user) + sign.value();
            if self.strict_binary && !(0..=1).contains(&value) {
                return Err(Error::NonBinaryFrequency {
                    user,
                    value,
                    step: self.step,
                });
            }
            if value == 0 {
                self.freq.remove(&user);
            } else {
                self.freq.insert(user, value);
            }
        }
        self.step += 1;
        Ok(())
    }

    pub fn true_distinct_count(&self) -> u64 {
        self.freq.len() as u64
    }

    /// Nonzero `(user, frequency)` pairs in increasing user order.
    pub fn nonzero(&self) -> impl Iterator<Item = (UserId, i64)> + '_ {
        self.freq.iter().map(|(&u, &f)| (u, f))
    }

    pub(crate) fn restore_parts(
        freq: impl IntoIterator<Item = (UserId, i64)>,
        step: u64,
        strict_binary: bool,
    ) -> Self {
        FrequencyState {
            freq: freq.into_iter().filter(|&(_, f)| f != 0).collect(),
            step,
            strict_binary,
        }
    }

    /// Canonical little-endian encoding: mode byte, step, count, then sorted `(user, freq)`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 12 * self.freq.len());
        out.push(u8::from(self.strict_binary));
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.freq.len() as u64).to_le_bytes());
        for (&u, &f) in &self.freq {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }
}

/// Number of non-empty updates per user.
pub fn occurrency_profile(updates: &[StreamUpdate]) -> BTreeMap<UserId, u64> {
    let mut profile = BTreeMap::new();
    for u in updates {
        if let Some(user) = u.user() {
            *profile.entry(user).or_insert(0) += 1;
        }
    }
    profile
}

/// True iff at most `k` users have strictly more than `w` updates.
pub fn check_occurrency_bounded(updates: &[StreamUpdate], w: u64, k: u64) -> bool {
    let over = occurrency_profile(updates)
        .values()
        .filter(|&&occ| occ > w)
        .count() as u64;
    over <= k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyParams {
    pub tau: f64,
    pub eta: f64,
}

impl AccuracyParams {
    pub fn new(tau: f64, eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::param("tau", format!("{tau} not in [0,1)")));
        }
        if !(eta >= 0.0) {
            return Err(Error::param("eta", format!("{eta} is negative")));
        }
        Ok(AccuracyParams { tau, eta })
    }
}

/// `(1 - tau) truth - eta <= answer <= (1 + tau) truth + eta`.
pub fn check_approx(answer: f64, truth: f64, acc: AccuracyParams) -> bool {
    let lo = (1.0 - acc.tau) * truth - acc.eta;
    let hi = (1.0 + acc.tau) * truth + acc.eta;
    lo <= answer && answer <= hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::param("epsilon", format!("{epsilon} must be > 0")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::param("delta", format!("{delta} not in [0,1)")));
        }
        Ok(PrivacyParams { epsilon, delta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn single_insertion_and_cancel() {
        let mut s = FrequencyState::new();
        s.apply_update(&StreamUpdate::insert(3)).unwrap();
        assert_eq!(s.frequency(3), 1);
        assert_eq!(s.step(), 1);
        s.apply_update(&StreamUpdate::delete(3)).unwrap();
        assert_eq!(s.frequency(3), 0);
        assert_eq!(s.true_distinct_count(), 0);
    }

    #[test]
    fn empty_update_only_advances_step() {
        let mut s = FrequencyState::new();
        s.apply_update(&StreamUpdate::insert(1)).unwrap();
        let before: Vec<_> = s.nonzero().collect();
        s.apply_update(&StreamUpdate::Empty).unwrap();
        assert_eq!(before, s.nonzero().collect::<Vec<_>>());
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn strict_mode_rejects_double_insert() {
        let mut s = FrequencyState::new();
        s.apply_update(&StreamUpdate::insert(5)).unwrap();
        let err = s.apply_update(&StreamUpdate::insert(5)).unwrap_err();
        assert!(matches!(err, Error::NonBinaryFrequency { user: 5, value: 2, .. }));
        let err = FrequencyState::new()
            .apply_update(&StreamUpdate::delete(1))
            .unwrap_err();
        assert!(matches!(err, Error::NonBinaryFrequency { value: -1, .. }));

        let mut g = FrequencyState::generic();
        g.apply_update(&StreamUpdate::insert(5)).unwrap();
        g.apply_update(&StreamUpdate::insert(5)).unwrap();
        assert_eq!(g.frequency(5), 2);
    }

    #[test]
    fn distinct_count_examples() {
        assert_eq!(FrequencyState::new().true_distinct_count(), 0);
        let s = FrequencyState::restore_parts([(1, 1), (2, 1), (3, 0)], 3, true);
        assert_eq!(s.true_distinct_count(), 2);
    }

    #[test]
    fn distinct_count_matches_set_replay_on_random_binary_stream() {
        let mut rng = PortableRng::from_state(42);
        let mut updates = Vec::new();
        let mut active = BTreeSet::new();
        while updates.len() < 200 {
            let user = rng.below(30) as UserId;
            if rng.bernoulli(0.15) {
                updates.push(StreamUpdate::Empty);
            } else if active.contains(&user) {
                active.remove(&user);
                updates.push(StreamUpdate::delete(user));
            } else {
                active.insert(user);
                updates.push(StreamUpdate::insert(user));
            }
        }
        let mut state = FrequencyState::new();
        for (t, u) in updates.iter().enumerate() {
            state.apply_update(u).unwrap();
            // Oracle: rebuild the active set from scratch.
            let mut set = BTreeSet::new();
            for v in &updates[..=t] {
                if let StreamUpdate::Signed { user, sign } = *v {
                    match sign {
                        Sign::Plus => set.insert(user),
                        Sign::Minus => set.remove(&user),
                    };
                }
            }
            assert_eq!(state.true_distinct_count(), set.len() as u64);
        }
    }

    #[test]
    fn occurrency_examples() {
        let s = [
            StreamUpdate::Empty,
            StreamUpdate::insert(1),
            StreamUpdate::delete(1),
        ];
        assert_eq!(occurrency_profile(&s), BTreeMap::from([(1, 2)]));
        assert!(occurrency_profile(&vec![StreamUpdate::Empty; 10]).is_empty());
        assert!(check_occurrency_bounded(&[], 0, 0));
        let mut one_user = Vec::new();
        for i in 0..5 {
            one_user.push(if i % 2 == 0 {
                StreamUpdate::insert(9)
            } else {
                StreamUpdate::delete(9)
            });
        }
        assert!(!check_occurrency_bounded(&one_user, 4, 0));
        assert!(check_occurrency_bounded(&one_user, 4, 1));
        assert!(check_occurrency_bounded(&one_user, 5, 0));
    }

    #[test]
    fn approx_examples() {
        let acc = AccuracyParams::new(0.1, 0.0).unwrap();
        assert!(check_approx(100.0, 100.0, acc));
        assert!(!check_approx(111.0, 100.0, acc));
        assert!(check_approx(16.0, 0.0, AccuracyParams::new(0.1, 16.0).unwrap()));
        assert!(AccuracyParams::new(1.0, 0.0).is_err());
        assert!(AccuracyParams::new(0.0, -1.0).is_err());
        assert!(PrivacyParams::new(0.0, 0.1).is_err());
        assert!(PrivacyParams::new(0.5, 1.0).is_err());
    }

    #[test]
    fn stream_file_round_trip_and_errors() {
        let stream = Stream {
            universe: 10,
            updates: vec![
                StreamUpdate::Empty,
                StreamUpdate::insert(3),
                StreamUpdate::FeatureFlip { user: 2, feature: 1 },
                StreamUpdate::ItemChange { user: 9, item: 0 },
                StreamUpdate::delete(3),
            ],
        };
        let mut buf = Vec::new();
        stream.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "N 10 T 5\nE\nS 3 +1\nF 2 1\nI 9 0\nS 3 -1\n");
        assert_eq!(Stream::read_from(&buf[..]).unwrap(), stream);

        assert!(Stream::read_from(&b"N 10 T 2\nE\n"[..]).is_err());
        assert!(Stream::read_from(&b"N 10 T 1\nS 11 +1\n"[..]).is_err());
        assert!(Stream::read_from(&b"N 10 T 1\nS 1 +2\n"[..]).is_err());
        assert!(stream.validate(1, 1).is_err());
        assert!(stream.validate(2, 1).is_ok());
    }

    fn arb_update() -> impl Strategy<Value = StreamUpdate> {
        prop_oneof![
            Just(StreamUpdate::Empty),
            (0u32..20, any::<bool>()).prop_map(|(user, plus)| StreamUpdate::Signed {
                user,
                sign: if plus { Sign::Plus } else { Sign::Minus }
            }),
            (0u32..20, 0u32..4).prop_map(|(user, feature)| StreamUpdate::FeatureFlip { user, feature }),
        ]
    }

    proptest! {
        #[test]
        fn replay_is_deterministic(updates in proptest::collection::vec(arb_update(), 0..200)) {
            let replay = || {
                let mut s = FrequencyState::generic();
                for u in &updates {
                    s.apply_update(u).unwrap();
                }
                s.canonical_bytes()
            };
            prop_assert_eq!(replay(), replay());
        }

        #[test]
        fn occurrency_totals_add_up(updates in proptest::collection::vec(arb_update(), 0..200)) {
            let empties = updates.iter().filter(|u| u.user().is_none()).count() as u64;
            let total: u64 = occurrency_profile(&updates).values().sum();
            prop_assert_eq!(total + empties, updates.len() as u64);
        }
    }
}

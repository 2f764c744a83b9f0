//! Gadgets that turn Quantile (`U = 2`) and MaxSelect (`d = 2`) queries into
//! one-bit mean estimators, and the hard instance rebuilt on top of them.
//!
//! Quantile: every active user moves to the item equal to its bit; everyone
//! else rests at item 1. The item at rank `ceil(|Q|/2)` is the decoded bit.
//!
//! MaxSelect: a public anchor block `H` of `floor(|Q|/2)` users outside the
//! instance holds feature 0 for the whole phase; active users with bit one set
//! feature 1. The argmax (ties to feature 0) is the decoded bit.

use serde::{Deserialize, Serialize};

use crate::algorithms::{Answer, Estimator, Problem, Query};
use crate::error::{Error, Result};
use crate::instance::{sample_support, InstanceParams, InstanceSupport, PhaseTranscript, Prior, RunOptions, UpdateSink};
use crate::model::{Stream, StreamUpdate, UserId};
use crate::rng::{tags, PortableRng};

pub const QUANTILE_ITEMS: u32 = 2;
pub const MAXSELECT_FEATURES: u32 = 2;
pub const REST_ITEM: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetContext {
    pub problem: Problem,
    /// Sorted active set `Q`.
    pub active: Vec<UserId>,
    /// Public anchor block `H` (MaxSelect only).
    pub anchors: Vec<UserId>,
}

impl GadgetContext {
    pub fn quantile(active: Vec<UserId>) -> Self {
        GadgetContext { problem: Problem::Quantile, active, anchors: Vec::new() }
    }

    pub fn maxselect(active: Vec<UserId>, anchors: Vec<UserId>) -> Result<Self> {
        if anchors.len() != active.len() / 2 {
            return Err(Error::param(
                "anchors",
                format!("{} anchors for |Q| = {}; need floor(|Q|/2)", anchors.len(), active.len()),
            ));
        }
        Ok(GadgetContext { problem: Problem::MaxSelect, active, anchors })
    }

    /// Updates issued once at phase start.
    pub fn setup(&self) -> Vec<StreamUpdate> {
        match self.problem {
            Problem::MaxSelect => self.anchor_flips(),
            _ => Vec::new(),
        }
    }

    /// Updates issued once at phase end.
    pub fn teardown(&self) -> Vec<StreamUpdate> {
        self.setup()
    }

    fn anchor_flips(&self) -> Vec<StreamUpdate> {
        self.anchors.iter().map(|&user| StreamUpdate::FeatureFlip { user, feature: 0 }).collect()
    }

    /// Updates writing `bits` (aligned with `active`) and the query to ask.
    pub fn encode(&self, bits: &[u8]) -> Result<(Vec<StreamUpdate>, Query)> {
        match self.problem {
            Problem::Quantile => quantile_gadget_encode(self, bits),
            Problem::MaxSelect => maxselect_gadget_encode(self, bits),
            Problem::CountDistinct => Err(Error::param("problem", "countdistinct has no gadget")),
        }
    }

    /// Updates returning every active user to its resting state.
    pub fn undo(&self, bits: &[u8]) -> Result<Vec<StreamUpdate>> {
        check_bits(self, bits)?;
        Ok(match self.problem {
            Problem::Quantile => self
                .active
                .iter()
                .zip(bits)
                .map(|(&user, &b)| {
                    if u32::from(b) == REST_ITEM {
                        StreamUpdate::Empty
                    } else {
                        StreamUpdate::ItemChange { user, item: REST_ITEM }
                    }
                })
                .collect(),
            _ => maxselect_bit_flips(self, bits),
        })
    }

    pub fn decode(&self, answer: Answer) -> Result<u8> {
        match self.problem {
            Problem::Quantile => quantile_gadget_decode(answer),
            _ => maxselect_gadget_decode(answer),
        }
    }
}

fn check_bits(ctx: &GadgetContext, bits: &[u8]) -> Result<()> {
    if bits.len() != ctx.active.len() {
        return Err(Error::LengthMismatch { left: bits.len(), right: ctx.active.len() });
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::param("bits", "bits must be 0 or 1"));
    }
    Ok(())
}

pub fn quantile_gadget_encode(ctx: &GadgetContext, bits: &[u8]) -> Result<(Vec<StreamUpdate>, Query)> {
    check_bits(ctx, bits)?;
    let updates = ctx
        .active
        .iter()
        .zip(bits)
        .map(|(&user, &b)| StreamUpdate::ItemChange { user, item: u32::from(b) })
        .collect();
    Ok((updates, Query::Rank(ctx.active.len().div_ceil(2) as u64)))
}

pub fn quantile_gadget_decode(answer: Answer) -> Result<u8> {
    match answer {
        Answer::Item(i) if i < QUANTILE_ITEMS => Ok(i as u8),
        Answer::Item(i) => Err(Error::Decode(i)),
        other => Err(Error::param("answer", format!("{other:?} is not a quantile item"))),
    }
}

fn maxselect_bit_flips(ctx: &GadgetContext, bits: &[u8]) -> Vec<StreamUpdate> {
    ctx.active
        .iter()
        .zip(bits)
        .map(|(&user, &b)| {
            if b == 1 {
                StreamUpdate::FeatureFlip { user, feature: 1 }
            } else {
                StreamUpdate::Empty
            }
        })
        .collect()
}

pub fn maxselect_gadget_encode(ctx: &GadgetContext, bits: &[u8]) -> Result<(Vec<StreamUpdate>, Query)> {
    check_bits(ctx, bits)?;
    Ok((maxselect_bit_flips(ctx, bits), Query::MaxFeature))
}

pub fn maxselect_gadget_decode(answer: Answer) -> Result<u8> {
    match answer {
        Answer::Feature(f) if f < MAXSELECT_FEATURES => Ok(f as u8),
        Answer::Feature(f) => Err(Error::Decode(f)),
        other => Err(Error::param("answer", format!("{other:?} is not a feature"))),
    }
}

/// Smallest universe that fits the instance plus, for MaxSelect, `P` disjoint anchor blocks.
pub fn extension_min_universe(params: &InstanceParams, problem: Problem) -> u64 {
    let base = params.min_universe();
    match problem {
        Problem::MaxSelect => base + params.phases * (params.group_size() / 2),
        _ => base,
    }
}

/// `params` with the logistic prior and a universe large enough for `problem`.
pub fn extension_params(params: &InstanceParams, problem: Problem) -> Result<InstanceParams> {
    let need = extension_min_universe(params, problem);
    let universe = u64::from(params.universe).max(need);
    let universe = u32::try_from(universe).map_err(|_| Error::param("universe", "exceeds 2^32"))?;
    let mut p = params.with_prior(Prior::Logistic);
    p.universe = universe;
    Ok(p)
}

/// Disjoint anchor blocks, one per phase, drawn from users outside the support.
pub fn sample_anchors(params: &InstanceParams, support: &InstanceSupport, seed: u64) -> Result<Vec<Vec<UserId>>> {
    let size = (params.group_size() / 2) as usize;
    let used = support.all_users();
    let free: Vec<UserId> = (0..params.universe).filter(|u| used.binary_search(u).is_err()).collect();
    let total = size * params.phases as usize;
    if free.len() < total {
        return Err(Error::param(
            "universe",
            format!("{} free users, need {total} anchors", free.len()),
        ));
    }
    let mut rng = PortableRng::derive(seed, tags::GADGET, 0);
    let picks = rng.sample_without_replacement(free.len() as u64, total);
    Ok(picks
        .chunks(size.max(1))
        .take(params.phases as usize)
        .map(|c| {
            let mut block: Vec<UserId> = c.iter().map(|&i| free[i as usize]).collect();
            block.sort_unstable();
            block
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ExtensionRun {
    pub problem: Problem,
    pub params: InstanceParams,
    pub support: InstanceSupport,
    /// Per-phase anchor blocks (empty for Quantile).
    pub anchors: Vec<Vec<UserId>>,
    pub transcripts: Vec<PhaseTranscript>,
    pub stream: Option<Stream>,
}

/// The hard instance with the logistic prior, gadget encoding, and the decoded
/// bit recorded as each repetition's answer.
pub fn run_extension_instance(
    problem: Problem,
    estimator: &mut dyn Estimator,
    params: &InstanceParams,
    seed: u64,
    options: RunOptions,
) -> Result<ExtensionRun> {
    if problem == Problem::CountDistinct {
        return Err(Error::param("problem", "extensions cover quantile and maxselect"));
    }
    if estimator.problem() != problem {
        return Err(Error::param(
            "estimator",
            format!("`{}` does not solve {problem:?}", estimator.name()),
        ));
    }
    let params = params.with_prior(Prior::Logistic);
    if u64::from(params.universe) < extension_min_universe(&params, problem) {
        return Err(Error::param(
            "universe",
            format!("N={} < {}", params.universe, extension_min_universe(&params, problem)),
        ));
    }
    let support = sample_support(&params, seed);
    let anchors = match problem {
        Problem::MaxSelect => sample_anchors(&params, &support, seed)?,
        _ => vec![Vec::new(); params.phases as usize],
    };
    let mut updates = options.record_stream.then(Vec::new);
    let mut transcripts = Vec::with_capacity(params.phases as usize);
    for phase in 0..params.phases as usize {
        let members = support.members(phase);
        let ctx = match problem {
            Problem::MaxSelect => GadgetContext::maxselect(members.clone(), anchors[phase].clone())?,
            _ => GadgetContext::quantile(members.clone()),
        };
        let mut rng = PortableRng::derive(seed, tags::PHASE, phase as u64);
        let start = updates.as_ref().map(Vec::len);
        let mut sink = UpdateSink { estimator: &mut *estimator, record: updates.as_mut(), emitted: 0 };
        let n = members.len();
        let reps = params.w as usize;
        let mut priors = Vec::with_capacity(reps);
        let mut bits = Vec::with_capacity(reps * n);
        let mut answers = Vec::with_capacity(reps);
        for u in ctx.setup() {
            sink.emit(u)?;
        }
        for _ in 0..reps {
            let p = params.prior.sample(n as u64, &mut rng);
            let row_start = bits.len();
            for _ in 0..n {
                bits.push(u8::from(rng.bernoulli(p)));
            }
            let row = &bits[row_start..];
            let (enc, query) = ctx.encode(row)?;
            for u in enc {
                sink.emit(u)?;
            }
            let bit = ctx.decode(sink.estimator.query(query)?)?;
            for u in ctx.undo(row)? {
                sink.emit(u)?;
            }
            priors.push(p);
            answers.push(f64::from(bit));
        }
        for u in ctx.teardown() {
            sink.emit(u)?;
        }
        let emitted = sink.emitted;
        transcripts.push(PhaseTranscript {
            phase,
            members,
            priors,
            bits,
            raw: answers.clone(),
            normalized: answers,
            stream_range: start.map(|s| (s, s + emitted)),
        });
    }
    Ok(ExtensionRun {
        problem,
        params,
        support,
        anchors,
        transcripts,
        stream: updates.map(|updates| Stream { universe: params.universe, updates }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{ExactMaxSelect, ExactQuantile};
    use crate::instance::derive_params;
    use crate::model::check_occurrency_bounded;

    fn fresh(problem: Problem, population: u32) -> Box<dyn Estimator> {
        match problem {
            Problem::Quantile => Box::new(ExactQuantile::new(QUANTILE_ITEMS, population, REST_ITEM).unwrap()),
            _ => Box::new(ExactMaxSelect::new(MAXSELECT_FEATURES).unwrap()),
        }
    }

    fn decode_once(problem: Problem, q: usize, bits: &[u8]) -> u8 {
        let active: Vec<UserId> = (0..q as UserId).collect();
        let ctx = match problem {
            Problem::Quantile => GadgetContext::quantile(active),
            _ => GadgetContext::maxselect(active, (q as UserId..(q + q / 2) as UserId).collect()).unwrap(),
        };
        let mut est = fresh(problem, (2 * q) as u32);
        let before = est.snapshot();
        for u in ctx.setup() {
            est.process(&u).unwrap();
        }
        let (enc, query) = ctx.encode(bits).unwrap();
        for u in enc {
            est.process(&u).unwrap();
        }
        let bit = ctx.decode(est.query(query).unwrap()).unwrap();
        for u in ctx.undo(bits).unwrap().into_iter().chain(ctx.teardown()) {
            est.process(&u).unwrap();
        }
        assert_eq!(est.snapshot(), before, "state not restored");
        bit
    }

    #[test]
    fn consensus_bits_decode() {
        for problem in [Problem::Quantile, Problem::MaxSelect] {
            for q in 2..=60 {
                for b in [0u8, 1] {
                    assert_eq!(decode_once(problem, q, &vec![b; q]), b, "{problem:?} |Q|={q}");
                }
            }
        }
    }

    #[test]
    fn decode_rejects_out_of_range() {
        assert_eq!(quantile_gadget_decode(Answer::Item(0)).unwrap(), 0);
        assert_eq!(quantile_gadget_decode(Answer::Item(1)).unwrap(), 1);
        assert!(matches!(quantile_gadget_decode(Answer::Item(2)), Err(Error::Decode(2))));
        assert_eq!(maxselect_gadget_decode(Answer::Feature(1)).unwrap(), 1);
        assert!(maxselect_gadget_decode(Answer::Feature(5)).is_err());
        assert!(maxselect_gadget_decode(Answer::Count(1.0)).is_err());
    }

    #[test]
    fn extension_runs_respect_occurrency() {
        let base = derive_params(4, 2, 3, 23, Prior::Uniform).unwrap();
        for problem in [Problem::Quantile, Problem::MaxSelect] {
            let params = extension_params(&base, problem).unwrap();
            let mut est = fresh(problem, params.universe);
            let opts = RunOptions { record_stream: true, ..Default::default() };
            let run = run_extension_instance(problem, est.as_mut(), &params, 3, opts).unwrap();
            let stream = run.stream.unwrap();
            assert!(check_occurrency_bounded(&stream.updates, 2 * params.w, params.k));
            assert_eq!(est.snapshot(), fresh(problem, params.universe).snapshot());
            for tr in &run.transcripts {
                assert!(tr.normalized.iter().all(|&a| a == 0.0 || a == 1.0));
            }
        }
    }

    #[test]
    fn wrong_estimator_is_rejected() {
        let base = derive_params(4, 2, 3, 23, Prior::Uniform).unwrap();
        let params = extension_params(&base, Problem::MaxSelect).unwrap();
        let mut est = fresh(Problem::Quantile, params.universe);
        assert!(run_extension_instance(Problem::MaxSelect, est.as_mut(), &params, 1, RunOptions::default()).is_err());
        assert!(run_extension_instance(Problem::MaxSelect, fresh(Problem::MaxSelect, 0).as_mut(), &base, 1, RunOptions::default()).is_err());
    }
}

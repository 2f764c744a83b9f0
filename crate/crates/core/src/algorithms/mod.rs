//! Streaming estimators behind one interface with snapshot/restore.
//!
//! The snapshot of an estimator is its entire memory configuration: a fresh
//! instance built from the same [`EstimatorSpec`] and restored from it behaves
//! bit-identically to the original from that point on, including its noise
//! tape.

mod counting;
mod kmv;
mod selection;
mod snapshot;

pub use counting::{CappedDpCounter, ConstantCounter, EchoLeakyCounter, ExactCounter};
pub use kmv::KmvSketch;
pub use selection::{check_maxselect_answer, check_quantile_answer, ExactMaxSelect, ExactQuantile};
pub use snapshot::Snapshot;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PrivacyParams, StreamUpdate, UserId};
use crate::rng::{tags, PortableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    CountDistinct,
    MaxSelect,
    Quantile,
}

impl std::str::FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "countdistinct" => Ok(Problem::CountDistinct),
            "maxselect" => Ok(Problem::MaxSelect),
            "quantile" => Ok(Problem::Quantile),
            other => Err(Error::param(
                "problem",
                format!("unknown problem `{other}` (expected countdistinct|maxselect|quantile)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    /// Current number of distinct active users.
    Distinct,
    /// Index of the most popular feature.
    MaxFeature,
    /// Item at the given 1-based rank.
    Rank(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Answer {
    Count(f64),
    Feature(u32),
    Item(u32),
}

impl Answer {
    pub fn value(self) -> f64 {
        match self {
            Answer::Count(c) => c,
            Answer::Feature(f) => f64::from(f),
            Answer::Item(i) => f64::from(i),
        }
    }
}

pub trait Estimator: Send {
    fn name(&self) -> &'static str;
    fn problem(&self) -> Problem;
    fn process(&mut self, update: &StreamUpdate) -> Result<()>;
    fn query(&mut self, query: Query) -> Result<Answer>;
    fn snapshot(&self) -> Snapshot;
    fn restore(&mut self, snapshot: &Snapshot) -> Result<()>;
}

pub(crate) fn unsupported(estimator: &'static str, query: Query) -> Error {
    Error::UnsupportedQuery {
        estimator,
        query: format!("{query:?}"),
    }
}

/// Distinct-count estimators accept only signed and empty updates.
pub(crate) fn counting_update(update: &StreamUpdate) -> Result<()> {
    match update {
        StreamUpdate::Empty | StreamUpdate::Signed { .. } => Ok(()),
        other => Err(Error::MalformedUpdate(format!("`{other}` is not a CountDistinct update"))),
    }
}

/// Instance-dependent defaults used to resolve an [`EstimatorSpec`].
#[derive(Debug, Clone, Default)]
pub struct ResolveContext {
    pub w: u64,
    pub h: u64,
    pub stream_length: u64,
    pub universe: u32,
    pub heavy: Vec<UserId>,
}

/// Estimator selection by name plus parameter map, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    ExactCounter,
    KmvSketch {
        space_budget: usize,
    },
    CappedDpCounter {
        /// Occurrency cap; defaults to `2w`, the hard instance's bound.
        #[serde(default)]
        cap: Option<u64>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        /// Defaults to `1/T^2`.
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default)]
        noiseless: bool,
    },
    EchoLeakyCounter {
        /// Defaults to the smallest heavy user id.
        #[serde(default)]
        target: Option<UserId>,
        /// Defaults to `h`.
        #[serde(default)]
        eta: Option<f64>,
    },
    ConstantCounter {
        value: f64,
    },
    ExactMaxselect {
        d: u32,
    },
    ExactQuantile {
        u: u32,
        /// Defaults to the instance universe size.
        #[serde(default)]
        population: Option<u32>,
        #[serde(default = "default_rest_item")]
        rest_item: u32,
    },
}

fn default_epsilon() -> f64 {
    0.5
}

fn default_rest_item() -> u32 {
    1
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::ExactCounter => "exact_counter",
            EstimatorSpec::KmvSketch { .. } => "kmv_sketch",
            EstimatorSpec::CappedDpCounter { .. } => "capped_dp_counter",
            EstimatorSpec::EchoLeakyCounter { .. } => "echo_leaky_counter",
            EstimatorSpec::ConstantCounter { .. } => "constant_counter",
            EstimatorSpec::ExactMaxselect { .. } => "exact_maxselect",
            EstimatorSpec::ExactQuantile { .. } => "exact_quantile",
        }
    }

    pub fn problem(&self) -> Problem {
        match self {
            EstimatorSpec::ExactMaxselect { .. } => Problem::MaxSelect,
            EstimatorSpec::ExactQuantile { .. } => Problem::Quantile,
            _ => Problem::CountDistinct,
        }
    }

    /// Fills every defaulted parameter from the instance context.
    pub fn resolve(&self, ctx: &ResolveContext) -> Result<EstimatorSpec> {
        let mut spec = self.clone();
        match &mut spec {
            EstimatorSpec::CappedDpCounter { cap, delta, .. } => {
                if cap.is_none() {
                    *cap = Some(2 * ctx.w);
                }
                if delta.is_none() {
                    let t = ctx.stream_length as f64;
                    *delta = Some(1.0 / (t * t));
                }
            }
            EstimatorSpec::EchoLeakyCounter { target, eta } => {
                if target.is_none() {
                    *target = Some(*ctx.heavy.iter().min().ok_or_else(|| {
                        Error::param("estimator.params.target", "no heavy users to default to")
                    })?);
                }
                if eta.is_none() {
                    *eta = Some(ctx.h as f64);
                }
            }
            EstimatorSpec::ExactQuantile { population, .. } => {
                if population.is_none() {
                    *population = Some(ctx.universe);
                }
            }
            _ => {}
        }
        Ok(spec)
    }

    /// Builds a fresh estimator; all optional parameters must already be resolved.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Estimator>> {
        fn need<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
            v.ok_or_else(|| {
                Error::param(format!("estimator.params.{field}"), "unresolved parameter")
            })
        }
        let rng = PortableRng::derive(seed, tags::ESTIMATOR, 0);
        Ok(match *self {
            EstimatorSpec::ExactCounter => Box::new(ExactCounter::new()),
            EstimatorSpec::KmvSketch { space_budget } => {
                Box::new(KmvSketch::new(space_budget, PortableRng::derive(seed, tags::SKETCH_HASH, 0).next_u64())?)
            }
            EstimatorSpec::CappedDpCounter {
                cap,
                epsilon,
                delta,
                noiseless,
            } => {
                let privacy = PrivacyParams::new(epsilon, need(delta, "delta")?)?;
                let cap = need(cap, "cap")?;
                if noiseless {
                    Box::new(CappedDpCounter::noiseless(cap)?)
                } else {
                    Box::new(CappedDpCounter::new(cap, privacy, rng)?)
                }
            }
            EstimatorSpec::EchoLeakyCounter { target, eta } => Box::new(EchoLeakyCounter::new(
                need(target, "target")?,
                need(eta, "eta")?,
            )?),
            EstimatorSpec::ConstantCounter { value } => Box::new(ConstantCounter::new(value)),
            EstimatorSpec::ExactMaxselect { d } => Box::new(ExactMaxSelect::new(d)?),
            EstimatorSpec::ExactQuantile {
                u,
                population,
                rest_item,
            } => Box::new(ExactQuantile::new(u, need(population, "population")?, rest_item)?),
        })
    }
}

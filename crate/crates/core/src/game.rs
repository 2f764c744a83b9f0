//! The AvoidHeavyHitters game: `P` players in a one-way chain, each holding
//! `S_i ∪ C`, each submitting a large subset while the referee counts how often
//! every heavy user gets submitted.

use std::collections::BTreeMap;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{EstimatorSpec, Snapshot};
use crate::attack::{round_phase, AttackConfig};
use crate::error::{Error, Result};
use crate::instance::{run_phase_on, InstanceParams, InstanceSupport, PhaseTranscript};
use crate::model::UserId;
use crate::rng::{tags, PortableRng};

pub type Message = BitVec<u8, Msb0>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub phases: u64,
    pub h: u64,
    pub k: u64,
    pub universe: u32,
    pub eps1: f64,
    pub eps2: f64,
    /// Messages longer than this disqualify the sender.
    #[serde(default)]
    pub message_limit: Option<u64>,
    /// End the game at the first undersized subset.
    #[serde(default)]
    pub stop_on_violation: bool,
}

impl GameConfig {
    pub fn new(params: &InstanceParams, eps1: f64, eps2: f64) -> Result<Self> {
        let cfg = GameConfig {
            phases: params.phases,
            h: params.h,
            k: params.k,
            universe: params.universe,
            eps1,
            eps2,
            message_limit: None,
            stop_on_violation: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.eps1) {
            return Err(Error::param("eps1", format!("{} not in [0, 1/2)", self.eps1)));
        }
        if !(self.eps2 > 0.0 && self.eps2 < 0.5) {
            return Err(Error::param("eps2", format!("{} not in (0, 1/2)", self.eps2)));
        }
        if self.phases == 0 || self.h == 0 || self.k == 0 {
            return Err(Error::param("phases", "P, h, k must be positive"));
        }
        Ok(())
    }

    pub fn group_size(&self) -> u64 {
        3 * self.h + self.k
    }

    /// `ceil((1/2 + eps1)(3h + k))`.
    pub fn required_size(&self) -> usize {
        let exact = (0.5 + self.eps1) * self.group_size() as f64;
        // Guard against 33.000000000000004 style products.
        (exact - 1e-9).ceil() as usize
    }

    /// A heavy user loses the game for the players above this many appearances.
    pub fn appearance_limit(&self) -> f64 {
        (0.5 + self.eps2) * self.phases as f64
    }

    /// `ceil(log2 N)`, the fixed width of one id on the wire.
    pub fn id_width(&self) -> usize {
        (u64::from(self.universe).max(2) - 1).ilog2() as usize + 1
    }
}

/// What player `index` (0-based) sees.
pub struct PlayerView<'a> {
    pub index: usize,
    /// Sorted `S_i ∪ C`, with no marker of which users are heavy.
    pub input: &'a [UserId],
    pub message: &'a Message,
    pub config: &'a GameConfig,
    pub seed: u64,
}

impl PlayerView<'_> {
    pub fn rng(&self) -> PortableRng {
        PortableRng::derive(self.seed, tags::PLAYER, self.index as u64)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlayerMove {
    pub subset: Vec<UserId>,
    pub message: Message,
    pub abort: Option<String>,
    /// Phase record, for strategies that simulate a stream.
    pub transcript: Option<PhaseTranscript>,
}

pub trait Strategy {
    fn name(&self) -> String;
    fn play(&self, view: &PlayerView<'_>) -> Result<PlayerMove>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub strategy: String,
    pub config: GameConfig,
    pub seed: u64,
    pub required_size: usize,
    pub subsets: Vec<Vec<UserId>>,
    pub heavy_appearances: BTreeMap<UserId, u32>,
    /// Bits sent from player `i` to player `i+1`.
    pub message_bits: Vec<u64>,
    pub max_message_bits: u64,
    /// 0-based indices of players whose subset was too small.
    pub size_violations: Vec<usize>,
    pub over_appearing: Vec<UserId>,
    pub abort: Option<(usize, String)>,
    pub win: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<PhaseTranscript>,
}

impl GameResult {
    pub fn subset_sizes(&self) -> Vec<usize> {
        self.subsets.iter().map(Vec::len).collect()
    }
}

pub fn play_game(
    strategy: &dyn Strategy,
    support: &InstanceSupport,
    cfg: &GameConfig,
    seed: u64,
) -> Result<GameResult> {
    let inputs: Vec<Vec<UserId>> = (0..support.groups.len()).map(|i| support.members(i)).collect();
    play_game_on(strategy, inputs, &support.heavy, cfg, seed)
}

/// Runs the game on explicit inputs; each input is sorted on receipt.
pub fn play_game_on(
    strategy: &dyn Strategy,
    mut inputs: Vec<Vec<UserId>>,
    heavy: &[UserId],
    cfg: &GameConfig,
    seed: u64,
) -> Result<GameResult> {
    cfg.validate()?;
    if inputs.len() as u64 != cfg.phases {
        return Err(Error::LengthMismatch { left: inputs.len(), right: cfg.phases as usize });
    }
    let required = cfg.required_size();
    let mut heavy_appearances: BTreeMap<UserId, u32> = heavy.iter().map(|&u| (u, 0)).collect();
    let mut subsets = Vec::with_capacity(inputs.len());
    let mut message_bits = Vec::new();
    let mut size_violations = Vec::new();
    let mut transcripts = Vec::new();
    let mut abort = None;
    let mut message = Message::new();
    let last = inputs.len() - 1;
    for (i, input) in inputs.iter_mut().enumerate() {
        input.sort_unstable();
        input.dedup();
        let view = PlayerView { index: i, input, message: &message, config: cfg, seed };
        let mv = strategy.play(&view)?;
        if let Some(tr) = mv.transcript {
            transcripts.push(tr);
        }
        if let Some(reason) = mv.abort {
            abort = Some((i, reason));
            break;
        }
        let mut subset = mv.subset;
        subset.sort_unstable();
        subset.dedup();
        if let Some(u) = subset.iter().find(|u| input.binary_search(u).is_err()) {
            return Err(Error::Disqualified {
                player: i,
                reason: format!("user {u} is not in the player's input"),
            });
        }
        for u in &subset {
            if let Some(c) = heavy_appearances.get_mut(u) {
                *c += 1;
            }
        }
        let undersized = subset.len() < required;
        subsets.push(subset);
        if undersized {
            size_violations.push(i);
            if cfg.stop_on_violation {
                break;
            }
        }
        if i < last {
            let bits = mv.message.len() as u64;
            if let Some(limit) = cfg.message_limit {
                if bits > limit {
                    return Err(Error::Disqualified {
                        player: i,
                        reason: format!("message of {bits} bits exceeds limit {limit}"),
                    });
                }
            }
            message_bits.push(bits);
            message = mv.message;
        }
    }
    let limit = cfg.appearance_limit();
    let over_appearing: Vec<UserId> = heavy_appearances
        .iter()
        .filter(|(_, &c)| f64::from(c) > limit)
        .map(|(&u, _)| u)
        .collect();
    let completed = subsets.len() == inputs.len();
    let win = abort.is_none() && completed && size_violations.is_empty() && over_appearing.is_empty();
    Ok(GameResult {
        strategy: strategy.name(),
        config: *cfg,
        seed,
        required_size: required,
        subsets,
        heavy_appearances,
        max_message_bits: message_bits.iter().copied().max().unwrap_or(0),
        message_bits,
        size_violations,
        over_appearing,
        abort,
        win,
        transcripts,
    })
}

/// Fixed-width, MSB-first encoding of sorted ids.
pub fn encode_set(ids: &[UserId], width: usize) -> Message {
    let mut m = Message::with_capacity(ids.len() * width);
    for &id in ids {
        for b in (0..width).rev() {
            m.push((id >> b) & 1 == 1);
        }
    }
    m
}

pub fn decode_set(message: &Message, width: usize) -> Result<Vec<UserId>> {
    if width == 0 || message.len() % width != 0 {
        return Err(Error::param("message", format!("{} bits is not a multiple of {width}", message.len())));
    }
    Ok(message
        .chunks(width)
        .map(|c| c.iter().fold(0u32, |acc, b| (acc << 1) | u32::from(*b)))
        .collect())
}

/// Submits the whole input every round.
pub struct AllIn;

impl Strategy for AllIn {
    fn name(&self) -> String {
        "all_in".into()
    }

    fn play(&self, view: &PlayerView<'_>) -> Result<PlayerMove> {
        Ok(PlayerMove { subset: view.input.to_vec(), ..Default::default() })
    }
}

pub struct EmptySubset;

impl Strategy for EmptySubset {
    fn name(&self) -> String {
        "empty".into()
    }

    fn play(&self, _: &PlayerView<'_>) -> Result<PlayerMove> {
        Ok(PlayerMove::default())
    }
}

/// Knows `C` out of band and submits light users only.
pub struct OracleCheat {
    pub heavy: Vec<UserId>,
}

impl Strategy for OracleCheat {
    fn name(&self) -> String {
        "oracle_cheat".into()
    }

    fn play(&self, view: &PlayerView<'_>) -> Result<PlayerMove> {
        let light: Vec<UserId> = view
            .input
            .iter()
            .copied()
            .filter(|u| self.heavy.binary_search(u).is_err())
            .collect();
        let take = view.config.required_size().min(light.len());
        Ok(PlayerMove { subset: light[..take].to_vec(), ..Default::default() })
    }
}

/// Uniform subset of exactly the required size, no messages.
pub struct RandomBaseline;

impl Strategy for RandomBaseline {
    fn name(&self) -> String {
        "random_baseline".into()
    }

    fn play(&self, view: &PlayerView<'_>) -> Result<PlayerMove> {
        let m = view.config.required_size().min(view.input.len());
        let subset = view.rng().choose_sorted(view.input, m);
        Ok(PlayerMove { subset, ..Default::default() })
    }
}

/// Player 1 ships its input; player 2 intersects to find `C` and everyone after
/// forwards `C` and submits light users only.
pub struct Intersection;

impl Intersection {
    fn light_subset(input: &[UserId], heavy: &[UserId], required: usize) -> Vec<UserId> {
        let mut subset: Vec<UserId> =
            input.iter().copied().filter(|u| heavy.binary_search(u).is_err()).collect();
        for &u in heavy {
            if subset.len() >= required {
                break;
            }
            subset.push(u);
        }
        subset
    }
}

impl Strategy for Intersection {
    fn name(&self) -> String {
        "intersection".into()
    }

    fn play(&self, view: &PlayerView<'_>) -> Result<PlayerMove> {
        let width = view.config.id_width();
        let required = view.config.required_size();
        match view.index {
            0 => {
                let m = required.min(view.input.len());
                Ok(PlayerMove {
                    subset: view.rng().choose_sorted(view.input, m),
                    message: encode_set(view.input, width),
                    ..Default::default()
                })
            }
            i => {
                let received = decode_set(view.message, width)?;
                let heavy: Vec<UserId> = if i == 1 {
                    received.into_iter().filter(|u| view.input.binary_search(u).is_ok()).collect()
                } else {
                    received
                };
                Ok(PlayerMove {
                    subset: Self::light_subset(view.input, &heavy, required),
                    message: encode_set(&heavy, width),
                    ..Default::default()
                })
            }
        }
    }
}

/// Turns a streaming estimator into a game strategy: each player restores the
/// estimator from the incoming message, streams its own phase, rounds the
/// answers to a subset and forwards the new snapshot.
pub struct ReductionProtocol {
    /// Fully resolved estimator spec.
    pub spec: EstimatorSpec,
    pub params: InstanceParams,
    pub attack: AttackConfig,
    /// Abort when the rounded subset is below the required size.
    pub abort_below_required: bool,
}

impl ReductionProtocol {
    pub fn new(spec: EstimatorSpec, params: InstanceParams, attack: AttackConfig) -> Self {
        ReductionProtocol { spec, params, attack, abort_below_required: true }
    }
}

impl Strategy for ReductionProtocol {
    fn name(&self) -> String {
        format!("reduction({})", self.spec.name())
    }

    fn play(&self, view: &PlayerView<'_>) -> Result<PlayerMove> {
        let mut est = self.spec.build(view.seed)?;
        if view.index > 0 {
            est.restore(&Snapshot { bytes: view.message.as_raw_slice().to_vec() })?;
        }
        let mut rng = PortableRng::derive(view.seed, tags::PHASE, view.index as u64);
        let tr = run_phase_on(est.as_mut(), view.input, &self.params, view.index, &mut rng, None)?;
        let (_, rounded) = round_phase(&tr, &self.attack, view.seed);
        let required = view.config.required_size();
        let abort = (self.abort_below_required && rounded.subset.len() < required)
            .then(|| format!("rounded subset of {} below required {required}", rounded.subset.len()));
        Ok(PlayerMove {
            subset: rounded.subset,
            message: Message::from_vec(est.snapshot().bytes),
            abort,
            transcript: Some(tr),
        })
    }
}

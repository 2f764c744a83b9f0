//! Command-line front end: argument parsing, config resolution, per-seed
//! dispatch and result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algorithms::{EstimatorSpec, Problem, ResolveContext};
use crate::attack::{default_flag_eps2, run_rounding_attack_with, AttackConfig};
use crate::bounds;
use crate::error::{Error, Result};
use crate::extensions::{extension_params, run_extension_instance};
use crate::fplemma::{floor_for, mc_correlation, meets_floor, FpEstimator, MeanEstimator};
use crate::game::{
    play_game, AllIn, EmptySubset, GameConfig, Intersection, OracleCheat, RandomBaseline, ReductionProtocol,
    Strategy,
};
use crate::instance::{
    replay_answers, run_instance, sample_support, InstanceParams, InstanceRequest, InstanceSupport, PhaseTranscript,
    Prior, RunOptions,
};
use crate::model::{check_occurrency_bounded, FrequencyState};
use crate::profiles;

#[derive(Debug, Parser)]
#[command(name = "dpmem", version, about = "Memory lower-bound experiments for private continual counting")]
pub struct Cli {
    /// First seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to run.
    #[arg(long, global = true, default_value_t = 1)]
    pub seeds: u64,
    /// Instance preset: tiny, small or large.
    #[arg(long, global = true, default_value = "small")]
    pub profile: String,
    /// Output directory [default: results].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// countdistinct, quantile or maxselect.
    #[arg(long, global = true, default_value = "countdistinct")]
    pub problem: String,
    /// JSON experiment config, or a result file with an embedded `config`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-seed dispatch.
    #[arg(long, global = true, env = "DPMEM_WORKERS")]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub instance: InstanceOverrides,
    #[command(subcommand)]
    pub command: Option<Sub>,
}

#[derive(Debug, Clone, Args)]
pub struct InstanceOverrides {
    // Not global: `bounds` subcommands take their own `--h`/`--k`.
    #[arg(long)]
    pub w: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub h: Option<u64>,
    #[arg(long)]
    pub phases: Option<u64>,
    #[arg(long)]
    pub universe: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Estimator name, e.g. exact_counter or capped_dp_counter.
    #[arg(long)]
    pub estimator: Option<String>,
    /// JSON object of estimator parameters.
    #[arg(long)]
    pub estimator_params: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Write hard-instance streams.
    GenInstance,
    /// Run an estimator on the instance and round its answers.
    RunAttack {
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long)]
        beta: Option<f64>,
        /// Flagging threshold; defaults to 1/(2 sqrt P) + sqrt(ln(20Pk)/(2P)).
        #[arg(long)]
        eps2: Option<f64>,
    },
    /// Play the heavy-hitter avoidance game.
    PlayGame {
        /// all_in, empty, oracle_cheat, random_baseline, intersection or reduction.
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        eps1: f64,
        #[arg(long)]
        eps2: f64,
        #[arg(long)]
        message_limit: Option<u64>,
        #[arg(long)]
        beta: Option<f64>,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
    /// Evaluate a closed-form bound.
    Bounds {
        #[command(subcommand)]
        formula: BoundsCmd,
    },
    /// Monte-Carlo correlation of a mean estimator with its input bits.
    VerifyFp {
        /// exact_mean, clipped_noisy_mean, threshold, constant or complement_exact_mean.
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        /// uniform or logistic.
        #[arg(long, default_value = "uniform")]
        prior: String,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
    },
    /// Accuracy and memory of an estimator on the instance.
    BenchAlgo {
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "formula", rename_all = "snake_case")]
pub enum BoundsCmd {
    LogBinom {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        m: f64,
    },
    CommExact {
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        eps1: f64,
        #[arg(long)]
        eps2: f64,
        #[arg(long, default_value_t = 1.0)]
        slack_constant: f64,
    },
    CommStirling {
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        eps1: f64,
        #[arg(long)]
        eps2: f64,
        #[arg(long, default_value_t = 1.0)]
        slack_constant: f64,
    },
    ReductionEpsilons {
        /// Defaults to 1/T^2.
        #[arg(long)]
        beta: Option<f64>,
    },
    Theorem {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        gamma_w: f64,
        #[arg(long)]
        gamma_k: f64,
        #[arg(long)]
        gamma_h: f64,
    },
    Corollary {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e6)]
        t: f64,
    },
    Encoding {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        k_prime: f64,
        #[arg(long)]
        z: f64,
    },
}

/// Fully resolved run description; embedded in every result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub profile: String,
    pub instance: InstanceRequest,
    pub problem: Problem,
    pub seeds: Vec<u64>,
    /// Not written to result files, so outputs do not depend on where they land.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    GenInstance,
    RunAttack {
        estimator: EstimatorSpec,
        beta: Option<f64>,
        eps2: Option<f64>,
    },
    PlayGame {
        strategy: String,
        eps1: f64,
        eps2: f64,
        message_limit: Option<u64>,
        beta: Option<f64>,
        estimator: Option<EstimatorSpec>,
    },
    Bounds(BoundsCmd),
    VerifyFp {
        estimator: FpEstimator,
        n: usize,
        trials: u64,
        prior: Prior,
    },
    BenchAlgo {
        estimator: EstimatorSpec,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenInstance => "gen-instance",
            Command::RunAttack { .. } => "run-attack",
            Command::PlayGame { .. } => "play-game",
            Command::Bounds(_) => "bounds",
            Command::VerifyFp { .. } => "verify-fp",
            Command::BenchAlgo { .. } => "bench-algo",
        }
    }
}

fn default_estimator(problem: Problem) -> EstimatorSpec {
    match problem {
        Problem::CountDistinct => EstimatorSpec::ExactCounter,
        Problem::Quantile => EstimatorSpec::ExactQuantile { u: 2, population: None, rest_item: 1 },
        Problem::MaxSelect => EstimatorSpec::ExactMaxselect { d: 2 },
    }
}

fn parse_estimator(args: &EstimatorArgs, problem: Problem) -> Result<Option<EstimatorSpec>> {
    let Some(name) = &args.estimator else {
        if args.estimator_params.is_some() {
            return Err(Error::param("estimator", "--estimator-params given without --estimator"));
        }
        return Ok(None);
    };
    let value = match &args.estimator_params {
        Some(s) => {
            let params: Value =
                serde_json::from_str(s).map_err(|e| Error::param("estimator_params", e.to_string()))?;
            json!({ "name": name, "params": params })
        }
        None => json!({ "name": name }),
    };
    let spec: EstimatorSpec = serde_json::from_value(value.clone())
        .or_else(|e| match args.estimator_params {
            // Struct variants whose fields all default still need an empty params map.
            None => serde_json::from_value(json!({ "name": name, "params": {} })).map_err(|_| e),
            Some(_) => Err(e),
        })
        .map_err(|e| Error::param("estimator", e.to_string()))?;
    if spec.problem() != problem {
        return Err(Error::param(
            "estimator",
            format!("`{}` does not solve {problem:?}", spec.name()),
        ));
    }
    Ok(Some(spec))
}

fn parse_prior(s: &str) -> Result<Prior> {
    match s {
        "uniform" => Ok(Prior::Uniform),
        "logistic" => Ok(Prior::Logistic),
        other => Err(Error::param("prior", format!("unknown prior `{other}` (expected uniform|logistic)"))),
    }
}

fn parse_fp_estimator(name: &str, sigma: Option<f64>, c: Option<f64>) -> Result<FpEstimator> {
    let f = match name {
        "exact_mean" => FpEstimator::ExactMean,
        "clipped_noisy_mean" => FpEstimator::ClippedNoisyMean { sigma: sigma.unwrap_or(0.1) },
        "threshold" => FpEstimator::Threshold,
        "constant" => FpEstimator::Constant { c: c.unwrap_or(0.5) },
        "complement_exact_mean" => FpEstimator::Complement { inner: Box::new(FpEstimator::ExactMean) },
        other => {
            return Err(Error::param(
                "estimator",
                format!("unknown mean estimator `{other}` (expected exact_mean|clipped_noisy_mean|threshold|constant|complement_exact_mean)"),
            ))
        }
    };
    f.validate()?;
    Ok(f)
}

const STRATEGIES: [&str; 6] = ["all_in", "empty", "oracle_cheat", "random_baseline", "intersection", "reduction"];

impl Cli {
    /// Resolves flags (or the `--config` file) into an [`ExperimentConfig`].
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            let mut cfg = load_config(path)?;
            if let Some(out) = &self.out {
                cfg.out = out.clone();
            }
            return Ok(cfg);
        }
        let command = self
            .command
            .as_ref()
            .ok_or_else(|| Error::param("subcommand", "a subcommand or --config is required"))?;
        if self.seeds == 0 {
            return Err(Error::param("seeds", "must be at least 1"));
        }
        let problem: Problem = self.problem.parse()?;
        let (w, k, h, phases) = profiles::instance_tuple(&self.profile)?;
        let o = &self.instance;
        let instance = InstanceRequest {
            w: o.w.unwrap_or(w),
            k: o.k.unwrap_or(k),
            h: o.h.unwrap_or(h),
            phases: o.phases.unwrap_or(phases),
            prior: Prior::Uniform,
            universe: o.universe,
        };
        instance.derive()?;
        let command = match command {
            Sub::GenInstance => Command::GenInstance,
            Sub::RunAttack { estimator, beta, eps2 } => Command::RunAttack {
                estimator: parse_estimator(estimator, problem)?.unwrap_or_else(|| default_estimator(problem)),
                beta: *beta,
                eps2: *eps2,
            },
            Sub::PlayGame { strategy, eps1, eps2, message_limit, beta, estimator } => {
                if !STRATEGIES.contains(&strategy.as_str()) {
                    return Err(Error::param(
                        "strategy",
                        format!("unknown strategy `{strategy}` (expected {})", STRATEGIES.join("|")),
                    ));
                }
                let estimator = parse_estimator(estimator, problem)?;
                if strategy == "reduction" && problem != Problem::CountDistinct {
                    return Err(Error::param("problem", "the reduction strategy runs the countdistinct instance"));
                }
                Command::PlayGame {
                    strategy: strategy.clone(),
                    eps1: *eps1,
                    eps2: *eps2,
                    message_limit: *message_limit,
                    beta: *beta,
                    estimator: if strategy == "reduction" {
                        Some(estimator.unwrap_or(EstimatorSpec::ExactCounter))
                    } else {
                        estimator
                    },
                }
            }
            Sub::Bounds { formula } => Command::Bounds(formula.clone()),
            Sub::VerifyFp { estimator, n, trials, prior, sigma, c } => Command::VerifyFp {
                estimator: parse_fp_estimator(estimator, *sigma, *c)?,
                n: *n,
                trials: *trials,
                prior: parse_prior(prior)?,
            },
            Sub::BenchAlgo { estimator } => Command::BenchAlgo {
                estimator: parse_estimator(estimator, problem)?.unwrap_or_else(|| default_estimator(problem)),
            },
        };
        Ok(ExperimentConfig {
            command,
            profile: self.profile.clone(),
            instance,
            problem,
            seeds: (self.seed..self.seed + self.seeds).collect(),
            out: self.out.clone().unwrap_or_else(default_out),
        })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::param("config", e.to_string()))?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::param("config", e.to_string()))?;
    if cfg.seeds.is_empty() {
        return Err(Error::param("seeds", "config lists no seeds"));
    }
    cfg.instance.derive()?;
    Ok(cfg)
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::param("csv", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::param("csv", e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Paths written by one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub files: Vec<PathBuf>,
    /// Subcommand-level summary (win rate, bound value, ...).
    pub summary: Value,
}

struct SeedOutput {
    files: Vec<PathBuf>,
    row: Value,
}

fn resolve_context(params: &InstanceParams, support: &InstanceSupport) -> ResolveContext {
    ResolveContext {
        w: params.w,
        h: params.h,
        stream_length: params.t,
        universe: params.universe,
        heavy: support.heavy.clone(),
    }
}

fn problem_params(cfg: &ExperimentConfig) -> Result<InstanceParams> {
    let base = cfg.instance.derive()?;
    match cfg.problem {
        Problem::CountDistinct => Ok(base),
        p => extension_params(&base, p),
    }
}

fn run_transcripts(
    cfg: &ExperimentConfig,
    spec: &EstimatorSpec,
    seed: u64,
    record_stream: bool,
) -> Result<(InstanceParams, EstimatorSpec, InstanceSupport, Vec<PhaseTranscript>, Option<crate::model::Stream>)> {
    let params = problem_params(cfg)?;
    let support = sample_support(&params, seed);
    let resolved = spec.resolve(&resolve_context(&params, &support))?;
    let mut est = resolved.build(seed)?;
    let opts = RunOptions { record_stream, ..Default::default() };
    if cfg.problem == Problem::CountDistinct {
        let run = run_instance(est.as_mut(), &params, seed, opts)?;
        Ok((params, resolved, run.support, run.transcripts, run.stream))
    } else {
        let run = run_extension_instance(cfg.problem, est.as_mut(), &params, seed, opts)?;
        Ok((run.params, resolved, run.support, run.transcripts, run.stream))
    }
}

fn seed_path(cfg: &ExperimentConfig, seed: u64, suffix: &str) -> PathBuf {
    cfg.out.join(format!("{}-s{seed}{suffix}", cfg.command.name()))
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let config = serde_json::to_value(cfg)?;
    match &cfg.command {
        Command::GenInstance => {
            let spec = default_estimator(cfg.problem);
            let (params, _, support, _, stream) = run_transcripts(cfg, &spec, seed, true)?;
            let stream = stream.expect("recorded");
            let mut bytes = Vec::new();
            stream.write_to(&mut bytes)?;
            let stream_path = seed_path(cfg, seed, ".stream");
            write_atomic(&stream_path, &bytes)?;
            let occurrency_ok = check_occurrency_bounded(&stream.updates, 2 * params.w, params.k);
            let row = json!({ "seed": seed, "length": stream.len(), "universe": params.universe, "occurrency_ok": occurrency_ok });
            let json_path = seed_path(cfg, seed, ".json");
            write_json(
                &json_path,
                &json!({ "config": config, "seed": seed, "params": params, "support": support, "summary": row }),
            )?;
            Ok(SeedOutput { files: vec![stream_path, json_path], row })
        }
        Command::RunAttack { estimator, beta, eps2 } => {
            let (params, resolved, support, transcripts, _) = run_transcripts(cfg, estimator, seed, false)?;
            let attack = match beta {
                Some(b) => AttackConfig::new(params.w, *b)?,
                None => AttackConfig::for_instance(&params),
            };
            let eps2 = eps2.unwrap_or_else(|| default_flag_eps2(params.phases, params.k));
            let report = run_rounding_attack_with(&transcripts, &support, &attack, seed, eps2);
            let csv_path = seed_path(cfg, seed, "-appearances.csv");
            #[derive(Serialize)]
            struct Appearance {
                user: u32,
                heavy: bool,
                appearances: u32,
            }
            let rows: Vec<Appearance> = report
                .appearances
                .iter()
                .map(|(&user, &appearances)| Appearance { user, heavy: support.is_heavy(user), appearances })
                .collect();
            write_csv(&csv_path, &rows)?;
            let sizes = report.subset_sizes();
            let row = json!({
                "seed": seed,
                "mean_subset_size": sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
                "measured_eps1_min": report.measured_eps1_min,
                "measured_eps1_mean": report.measured_eps1_mean,
                "max_heavy_appearances": report.heavy_appearances(&support).map(|(_, a)| a).max().unwrap_or(0),
                "flagged": report.flagged.len(),
                "max_abs_heavy_total": report.heavy_totals.values().fold(0.0f64, |m, x| m.max(x.abs())),
            });
            let json_path = seed_path(cfg, seed, ".json");
            write_json(
                &json_path,
                &json!({ "config": config, "seed": seed, "params": params, "estimator": resolved,
                          "support": support, "report": report, "summary": row }),
            )?;
            Ok(SeedOutput { files: vec![json_path, csv_path], row })
        }
        Command::PlayGame { strategy, eps1, eps2, message_limit, beta, estimator } => {
            let params = problem_params(cfg)?;
            let support = sample_support(&params, seed);
            let mut game = GameConfig::new(&params, *eps1, *eps2)?;
            game.message_limit = *message_limit;
            let attack = match beta {
                Some(b) => AttackConfig::new(params.w, *b)?,
                None => AttackConfig::for_instance(&params),
            };
            let resolved = match estimator {
                Some(spec) => Some(spec.resolve(&resolve_context(&params, &support))?),
                None => None,
            };
            let strat: Box<dyn Strategy> = match strategy.as_str() {
                "all_in" => Box::new(AllIn),
                "empty" => Box::new(EmptySubset),
                "oracle_cheat" => Box::new(OracleCheat { heavy: support.heavy.clone() }),
                "random_baseline" => Box::new(RandomBaseline),
                "intersection" => Box::new(Intersection),
                "reduction" => Box::new(ReductionProtocol::new(
                    resolved.clone().unwrap_or(EstimatorSpec::ExactCounter),
                    params,
                    attack,
                )),
                other => return Err(Error::param("strategy", format!("unknown strategy `{other}`"))),
            };
            let mut result = play_game(strat.as_ref(), &support, &game, seed)?;
            result.transcripts.clear();
            let row = json!({
                "seed": seed,
                "win": result.win,
                "max_message_bits": result.max_message_bits,
                "size_violations": result.size_violations.len(),
                "over_appearing": result.over_appearing.len(),
                "aborted": result.abort.is_some(),
            });
            let json_path = seed_path(cfg, seed, ".json");
            write_json(
                &json_path,
                &json!({ "config": config, "seed": seed, "params": params, "estimator": resolved,
                          "result": result, "summary": row }),
            )?;
            Ok(SeedOutput { files: vec![json_path], row })
        }
        Command::VerifyFp { estimator, n, trials, prior } => {
            let est = mc_correlation(estimator, *n, *trials, *prior, seed)?;
            let floor = floor_for(estimator.class(), *prior);
            let row = json!({
                "seed": seed,
                "estimator": estimator.name(),
                "class": estimator.class(),
                "estimate": est.estimate,
                "half_width": est.half_width,
                "floor": floor,
                "pass": meets_floor(&est, floor),
            });
            let json_path = seed_path(cfg, seed, ".json");
            write_json(&json_path, &json!({ "config": config, "seed": seed, "result": est, "summary": row }))?;
            Ok(SeedOutput { files: vec![json_path], row })
        }
        Command::BenchAlgo { estimator } => bench_seed(cfg, estimator, seed, config),
        Command::Bounds(_) => unreachable!("bounds do not run per seed"),
    }
}

fn bench_seed(cfg: &ExperimentConfig, spec: &EstimatorSpec, seed: u64, config: Value) -> Result<SeedOutput> {
    let (params, resolved, _, transcripts, stream) = run_transcripts(cfg, spec, seed, true)?;
    let stream = stream.expect("recorded");
    let mut snapshot_bits = 0u64;
    let mut errors = Vec::new();
    if cfg.problem == Problem::CountDistinct {
        // Replays the stream to measure the largest snapshot and the error against the true count.
        let mut est = resolved.build(seed)?;
        let mut truth = FrequencyState::new();
        let n = params.group_size() as usize;
        for (t, u) in stream.updates.iter().enumerate() {
            est.process(u)?;
            truth.apply_update(u)?;
            if t % (2 * n) == n - 1 {
                snapshot_bits = snapshot_bits.max(est.snapshot().bit_length());
            }
        }
        let positions: Vec<usize> = (0..transcripts.len() * params.w as usize).map(|q| q * 2 * n + n).collect();
        let mut exact = crate::algorithms::ExactCounter::new();
        let truths = replay_answers(&mut exact, &stream.updates, &positions, n as f64)?;
        let answers: Vec<f64> = transcripts.iter().flat_map(|t| t.raw.iter().copied()).collect();
        errors = answers.iter().zip(&truths).map(|(a, t)| (a - t).abs()).collect();
    } else {
        let mut est = resolved.build(seed)?;
        for u in &stream.updates {
            est.process(u)?;
            snapshot_bits = snapshot_bits.max(est.snapshot().bit_length());
        }
        for tr in &transcripts {
            for j in 0..tr.repetitions() {
                let ones = tr.repetition_bits(j).iter().filter(|&&b| b == 1).count();
                let n = tr.members.len();
                let consensus = if ones == 0 { Some(0.0) } else if ones == n { Some(1.0) } else { None };
                if let Some(c) = consensus {
                    errors.push((tr.raw[j] - c).abs());
                }
            }
        }
    }
    let max_err = errors.iter().copied().fold(0.0f64, f64::max);
    let mean_err = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let row = json!({
        "seed": seed,
        "estimator": resolved.name(),
        "stream_length": stream.len(),
        "max_snapshot_bits": snapshot_bits,
        "max_abs_error": max_err,
        "mean_abs_error": mean_err,
        "checked_queries": errors.len(),
    });
    let json_path = seed_path(cfg, seed, ".json");
    write_json(&json_path, &json!({ "config": config, "seed": seed, "estimator": resolved, "summary": row }))?;
    Ok(SeedOutput { files: vec![json_path], row })
}

pub fn evaluate_bounds(cfg: &ExperimentConfig, cmd: &BoundsCmd) -> Result<Value> {
    let inst = cfg.instance.derive()?;
    let (h0, k0) = (inst.h as f64, inst.k as f64);
    Ok(match cmd {
        BoundsCmd::LogBinom { n, m } => {
            let ln = bounds::log_binom(*n, *m)?;
            json!({ "n": n, "m": m, "ln": ln, "bits": ln / std::f64::consts::LN_2 })
        }
        BoundsCmd::CommExact { h, k, eps1, eps2, slack_constant } => serde_json::to_value(
            bounds::comm_lower_bound_exact(h.unwrap_or(h0), k.unwrap_or(k0), *eps1, *eps2, *slack_constant)?,
        )?,
        BoundsCmd::CommStirling { h, k, eps1, eps2, slack_constant } => serde_json::to_value(
            bounds::comm_lower_bound_stirling(h.unwrap_or(h0), k.unwrap_or(k0), *eps1, *eps2, *slack_constant)?,
        )?,
        BoundsCmd::ReductionEpsilons { beta } => {
            let t = inst.t as f64;
            let beta = beta.unwrap_or(1.0 / (t * t));
            serde_json::to_value(bounds::reduction_epsilons(inst.w, inst.h, inst.k, inst.phases, beta)?)?
        }
        BoundsCmd::Theorem { t, gamma_w, gamma_k, gamma_h } => {
            let p = bounds::ExponentProfile::new(*gamma_w, *gamma_k, *gamma_h)?;
            serde_json::to_value(bounds::theorem_bound(*t, &p)?)?
        }
        BoundsCmd::Corollary { alpha, t } => {
            let preset = profiles::theorem(*alpha)?;
            let mut v = serde_json::to_value(bounds::theorem_bound(*t, &preset.profile)?)?;
            v["alpha"] = json!(alpha);
            v
        }
        BoundsCmd::Encoding { n, k, k_prime, z } => serde_json::to_value(bounds::encoding_bound(*n, *k, *k_prime, *z)?)?,
    })
}

fn summarize(cfg: &ExperimentConfig, rows: &[Value]) -> Value {
    let count = rows.len() as f64;
    match &cfg.command {
        Command::PlayGame { strategy, .. } => {
            let wins = rows.iter().filter(|r| r["win"] == json!(true)).count() as f64;
            let mean_m = rows.iter().map(|r| r["max_message_bits"].as_f64().unwrap_or(0.0)).sum::<f64>() / count;
            json!({ "strategy": strategy, "seeds": rows.len(), "win_rate": wins / count, "mean_max_message_bits": mean_m })
        }
        Command::VerifyFp { .. } => {
            let passes = rows.iter().filter(|r| r["pass"] == json!(true)).count();
            json!({ "seeds": rows.len(), "passes": passes })
        }
        _ => json!({ "seeds": rows.len() }),
    }
}

/// Flattens JSON objects into CSV rows with the keys of the first row as header.
fn write_rows(path: &Path, rows: &[Value]) -> Result<()> {
    let Some(Value::Object(first)) = rows.first() else {
        return write_atomic(path, b"");
    };
    let header: Vec<&String> = first.keys().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::param("csv", e.to_string());
    w.write_record(header.iter().map(|s| s.as_str())).map_err(err)?;
    for r in rows {
        let fields: Vec<String> = header
            .iter()
            .map(|k| match &r[k.as_str()] {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        w.write_record(&fields).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::param("csv", e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn run(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunSummary> {
    let name = cfg.command.name();
    if let Command::Bounds(cmd) = &cfg.command {
        let value = evaluate_bounds(cfg, cmd)?;
        let path = cfg.out.join("bounds.json");
        write_json(&path, &json!({ "config": cfg, "result": value }))?;
        return Ok(RunSummary { command: name.into(), files: vec![path], summary: value });
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::param("workers", "must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::param("workers", e.to_string()))?;
    let outputs: Vec<SeedOutput> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>())?;
    let mut files: Vec<PathBuf> = outputs.iter().flat_map(|o| o.files.clone()).collect();
    let rows: Vec<Value> = outputs.into_iter().map(|o| o.row).collect();
    let csv_path = cfg.out.join(format!("{name}.csv"));
    write_rows(&csv_path, &rows)?;
    files.push(csv_path);
    let summary = summarize(cfg, &rows);
    if matches!(cfg.command, Command::PlayGame { .. } | Command::VerifyFp { .. }) {
        let path = cfg.out.join(format!("{name}-summary.csv"));
        write_rows(&path, std::slice::from_ref(&summary))?;
        files.push(path);
    }
    Ok(RunSummary { command: name.into(), files, summary })
}

/// `{"error": {"kind", "field", "message"}}`.
pub fn error_json(err: &Error) -> Value {
    let field = match err {
        Error::InvalidParam { field, .. } => Value::String(field.clone()),
        _ => Value::Null,
    };
    json!({ "error": { "kind": err.kind(), "field": field, "message": err.to_string() } })
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let outcome = cli.to_config().and_then(|cfg| run(&cfg, cli.workers));
    match outcome {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("serializable"));
            0
        }
        Err(e) => {
            println!("{}", error_json(&e));
            1
        }
    }
}

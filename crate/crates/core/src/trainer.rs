//! The staged training pipeline.
//!
//! Supervised warm-up, then curriculum stages with growing horizons and
//! decaying teacher forcing, then a fully autonomous final phase. Each
//! training step draws a group of rollouts for one episode against frozen
//! policy and pheromone snapshots, computes group-relative advantages, takes
//! one SGD step on the mixed objective and deposits pheromone from rollouts
//! that pass the success and elite gates. Untouched edges evaporate once per
//! epoch.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdvantageMode, BetaSchedule, CorpusSource, RunConfig, ScheduleConfig, TrainerConfig};
use crate::embedding::{encode, splitmix64, TaskEmbedding};
use crate::environment::{generate_synthetic, load_corpus, split, Episode, SimResult, Simulator};
use crate::error::{Error, Result};
use crate::metrics::{self, DiscoveryRecord, EvalReport, Prior};
use crate::pheromone::{Edge, FusionContext, PheromoneParams, Pheromones};
use crate::policy::{Gradient, LinearPolicy, State};
use crate::rewards::{autonomous_match, score_episode, EpisodeScore, OutcomeConfig};
use crate::sampling::{arg_sample, mixed_step, sampling_distribution, ArgMode, SamplerConfig, StepChoice, ToolChoice};
use crate::tool_graph::{InvocationId, ToolGraph, ToolId};

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub epoch: usize,
    /// 1-based curriculum stage; `n_stages + 1` is the final phase.
    pub stage: usize,
    pub is_final: bool,
    pub horizon: usize,
    pub p_tf: f64,
    pub lambda: f64,
    pub beta: f64,
    pub w: f64,
}

/// Schedule values for a 0-based epoch.
pub fn schedule_at(cfg: &ScheduleConfig, beta_max: f64, epoch: usize) -> ScheduleState {
    let total = cfg.total_epochs();
    let ramp = cfg.ramp_fraction * total as f64;
    let progress = if ramp > 0.0 { (epoch as f64 / ramp).min(1.0) } else { 1.0 };
    let beta = match cfg.beta {
        BetaSchedule::Dynamic => beta_max * progress,
        BetaSchedule::Fixed(b) => b,
    };
    let w = cfg.w_max * progress;
    let n_stages = cfg.n_stages();
    let curriculum_epochs = n_stages * cfg.epochs_per_stage;
    let max_h = cfg.max_horizon();
    if !cfg.curriculum {
        let is_final = epoch >= curriculum_epochs;
        return ScheduleState {
            epoch,
            stage: if is_final { n_stages + 1 } else { 1 },
            is_final,
            horizon: max_h,
            p_tf: 0.0,
            lambda: 0.0,
            beta,
            w,
        };
    }
    if epoch >= curriculum_epochs {
        return ScheduleState {
            epoch,
            stage: n_stages + 1,
            is_final: true,
            horizon: max_h,
            p_tf: 0.0,
            lambda: 0.0,
            beta,
            w,
        };
    }
    let s = epoch / cfg.epochs_per_stage;
    let frac = if n_stages > 1 { s as f64 / (n_stages - 1) as f64 } else { 1.0 };
    ScheduleState {
        epoch,
        stage: s + 1,
        is_final: false,
        horizon: cfg.horizons[s],
        p_tf: cfg.p_tf_start - (cfg.p_tf_start - cfg.p_tf_final) * frac,
        lambda: 1.0 - frac,
        beta,
        w,
    }
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(R - mean) / (population std + eps)`.
pub fn grpo_advantages(returns: &[f64], eps: f64) -> Result<Vec<f64>> {
    if returns.len() < 2 {
        return Err(Error::InvalidConfig("GRPO needs at least two rollouts".into()));
    }
    let m = mean(returns);
    let var = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / returns.len() as f64;
    let sd = var.sqrt();
    Ok(returns.iter().map(|r| (r - m) / (sd + eps)).collect())
}

/// `R - mean(other returns)`.
pub fn rloo_advantages(returns: &[f64]) -> Result<Vec<f64>> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::InvalidConfig("RLOO needs at least two rollouts".into()));
    }
    let total: f64 = returns.iter().sum();
    Ok(returns.iter().map(|r| r - (total - r) / (n - 1) as f64).collect())
}

/// `R - b` against a running per-episode baseline. Returns the advantages
/// and the updated baseline; a missing baseline starts at the group mean.
pub fn ppo_advantages(returns: &[f64], baseline: Option<f64>, decay: f64) -> (Vec<f64>, f64) {
    let m = mean(returns);
    let b = baseline.unwrap_or(m);
    let adv = returns.iter().map(|r| r - b).collect();
    (adv, decay * b + (1.0 - decay) * m)
}

/// Stateless dispatch; PPO uses the group mean as its baseline.
pub fn advantages(returns: &[f64], mode: AdvantageMode, eps: f64) -> Result<Vec<f64>> {
    match mode {
        AdvantageMode::Grpo => grpo_advantages(returns, eps),
        AdvantageMode::Rloo => rloo_advantages(returns),
        AdvantageMode::Ppo => Ok(ppo_advantages(returns, None, 0.9).0),
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// An episode together with its task embedding and policy bucket.
#[derive(Clone, Debug)]
pub struct Task {
    pub episode: Episode,
    pub embedding: Arc<TaskEmbedding>,
    pub bucket: usize,
}

impl Task {
    pub fn new(episode: Episode, dim: usize, n_buckets: usize) -> Result<Self> {
        let embedding = encode(&episode.text, dim)?;
        let bucket = embedding.bucket(n_buckets);
        Ok(Self {
            episode,
            embedding: Arc::new(embedding),
            bucket,
        })
    }

    pub fn truncated(&self, horizon: usize) -> Task {
        Task {
            episode: self.episode.truncated(horizon),
            embedding: Arc::clone(&self.embedding),
            bucket: self.bucket,
        }
    }

    pub fn reference_tools(&self) -> Vec<ToolId> {
        self.episode.tools()
    }
}

/// Shared read-only pieces of a rollout.
pub struct RolloutEnv<'a> {
    pub graph: &'a ToolGraph,
    pub simulator: &'a Simulator,
    pub sampler: &'a SamplerConfig,
    pub outcome: &'a OutcomeConfig,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum RolloutMode {
    /// Stochastic behavior mixture with teacher-forcing probability `p_tf`.
    Sample { p_tf: f64 },
    /// Argmax tool and invocation at every step, no teacher forcing.
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub state: State,
    pub choice: StepChoice,
    pub reference: Option<(ToolId, InvocationId)>,
    pub sim: SimResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub score: EpisodeScore,
    /// Reference-matching autonomous steps over the reference length.
    pub autonomous_q: f64,
    pub snapshot: u64,
}

impl Rollout {
    pub fn tools(&self) -> Vec<ToolId> {
        self.steps.iter().map(|s| s.choice.tool).collect()
    }

    pub fn trajectory(&self) -> Vec<(ToolId, InvocationId)> {
        self.steps.iter().map(|s| (s.choice.tool, s.choice.invocation)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub task_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn returns(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.score.return_r).collect()
    }
}

/// Runs `f` with the fused tool prior out of `last`, if any.
pub(crate) fn with_prior<T>(
    ctx: Option<&FusionContext>,
    last: ToolId,
    f: impl FnOnce(Option<&dyn Fn(ToolId) -> f64>) -> T,
) -> T {
    match ctx {
        Some(c) => {
            let g = move |a: ToolId| c.tool(last, a);
            f(Some(&g))
        }
        None => f(None),
    }
}

fn greedy_choice(logits: &[f64], prior: Option<&dyn Fn(ToolId) -> f64>, beta: f64, cfg: &SamplerConfig) -> Result<ToolChoice> {
    let dist = sampling_distribution(logits, prior, beta, cfg)?;
    let tool = dist.argmax();
    Ok(ToolChoice {
        tool,
        behavior_logprob: dist.prob_of(tool).ln(),
        policy_logprob_old: crate::policy::log_softmax(logits, 1.0)[tool.index()],
        teacher_forced: false,
    })
}

/// One rollout of `task` (already cut to the stage horizon). Steps stop at
/// the reference length or on completion.
pub fn rollout<R: Rng + ?Sized>(
    policy: &LinearPolicy,
    ctx: Option<&FusionContext>,
    env: &RolloutEnv,
    task: &Task,
    beta: f64,
    mode: RolloutMode,
    rng: &mut R,
) -> Result<Rollout> {
    let ep = &task.episode;
    let mut state = State::initial(task.bucket, env.graph.start());
    let mut steps = Vec::with_capacity(ep.len());
    let mut history: Vec<(ToolId, InvocationId)> = Vec::with_capacity(ep.len());
    for t in 0..ep.len() {
        let logits = policy.logits(&state)?;
        let reference = ep.reference.get(t).copied();
        let choice = with_prior(ctx, state.last, |prior| match mode {
            RolloutMode::Sample { p_tf } => {
                mixed_step(&logits, prior, beta, env.sampler, reference.map(|r| r.0), p_tf, &mut *rng)
            }
            RolloutMode::Greedy => greedy_choice(&logits, prior, beta, env.sampler),
        })?;
        let invocation = match reference {
            Some((_, inv)) if choice.teacher_forced => inv,
            _ => {
                let invs = env.graph.invocations(choice.tool)?;
                let arg_mode = match mode {
                    RolloutMode::Greedy => ArgMode::Argmax,
                    RolloutMode::Sample { .. } => ArgMode::Sample,
                };
                match ctx {
                    Some(c) => arg_sample(&invs, &|inv| c.arg(inv), arg_mode, &mut *rng)?,
                    None => arg_sample(&invs, &|_| 1.0, arg_mode, &mut *rng)?,
                }
            }
        };
        let sim = env.simulator.simulate(env.graph, ep, &history, choice.tool, invocation)?;
        let done = sim.is_complete;
        history.push((choice.tool, invocation));
        steps.push(RolloutStep {
            state,
            choice: StepChoice::new(choice, invocation),
            reference,
            sim,
        });
        state = state.advance(choice.tool);
        if done {
            break;
        }
    }
    let executed: Vec<ToolId> = steps.iter().map(|s| s.choice.tool).collect();
    let forced: Vec<bool> = steps.iter().map(|s| s.choice.teacher_forced).collect();
    let sims: Vec<SimResult> = steps.iter().map(|s| s.sim.clone()).collect();
    let reference = ep.tools();
    let score = score_episode(env.graph, &executed, &forced, &sims, &reference, env.outcome);
    Ok(Rollout {
        autonomous_q: autonomous_match(&executed, &forced, &reference),
        steps,
        score,
        snapshot: 0,
    })
}

/// Pheromone snapshot used by a group: store and banks, parameters, and the
/// task-dependent weight `w`.
#[derive(Copy, Clone)]
pub struct PheromoneView<'a> {
    pub pheromones: &'a Pheromones,
    pub params: &'a PheromoneParams,
    pub w: f64,
}

/// `seeds.len()` independent rollouts against the same snapshots.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    policy: &LinearPolicy,
    view: Option<PheromoneView>,
    env: &RolloutEnv,
    task: &Task,
    schedule: &ScheduleState,
    seeds: &[u64],
    snapshot: u64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RolloutGroup> {
    let ctx = view.map(|v| FusionContext::new(v.pheromones, v.params, &task.embedding, v.w));
    let mode = RolloutMode::Sample { p_tf: schedule.p_tf };
    let run = |seed: &u64| -> Result<Rollout> {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let mut r = rollout(policy, ctx.as_ref(), env, task, schedule.beta, mode, &mut rng)?;
        r.snapshot = snapshot;
        Ok(r)
    };
    let rollouts = match pool {
        Some(p) => p.install(|| seeds.par_iter().map(run).collect::<Result<Vec<_>>>())?,
        None => seeds.iter().map(run).collect::<Result<Vec<_>>>()?,
    };
    Ok(RolloutGroup {
        task_id: task.episode.task_id.clone(),
        rollouts,
    })
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

/// `lambda * L_SL + (1 - lambda) * L_PG - gamma * H`, summed over the steps
/// of each rollout and averaged over the group, with its gradient.
pub fn mixed_loss_and_grad(
    policy: &LinearPolicy,
    group: &RolloutGroup,
    advantages: &[f64],
    lambda: f64,
    cfg: &TrainerConfig,
) -> Result<(f64, Gradient)> {
    if advantages.len() != group.rollouts.len() {
        return Err(Error::DimensionMismatch(group.rollouts.len(), advantages.len()));
    }
    let mut g = policy.zero_gradient();
    let mut loss = 0.0;
    let scale = 1.0 / group.rollouts.len() as f64;
    for (r, &adv) in group.rollouts.iter().zip(advantages) {
        for step in &r.steps {
            if lambda > 0.0 {
                if let Some((target, _)) = step.reference {
                    loss += lambda * scale * policy.accumulate_sl(&step.state, target, lambda * scale, &mut g)?;
                }
            }
            if lambda < 1.0 {
                let c = (1.0 - lambda) * scale;
                loss += c * policy.accumulate_pg(
                    &step.state,
                    step.choice.tool,
                    step.choice.policy_logprob_old,
                    adv,
                    cfg.clip_eps,
                    c,
                    &mut g,
                )?;
            }
            if cfg.entropy_coef > 0.0 {
                let c = cfg.entropy_coef * scale;
                loss -= c * policy.accumulate_entropy(&step.state, -c, &mut g)?;
            }
        }
    }
    Ok((loss, g))
}

/// One SGD step on the mixed objective. Returns the loss before the step.
pub fn update_policy(
    policy: &mut LinearPolicy,
    group: &RolloutGroup,
    advantages: &[f64],
    schedule: &ScheduleState,
    cfg: &TrainerConfig,
) -> Result<f64> {
    let (loss, g) = mixed_loss_and_grad(policy, group, advantages, schedule.lambda, cfg)?;
    policy.apply_update(&g, cfg.rl_lr)?;
    Ok(loss)
}

/// Whether a rollout may write pheromone under the current schedule.
pub fn passes_gate(rollout: &Rollout, schedule: &ScheduleState, cfg: &TrainerConfig) -> bool {
    (rollout.score.completed || rollout.score.q >= cfg.q_gate) && schedule.p_tf < cfg.elite_gate
}

/// Deposits from every rollout passing the gates. Returns the touched edges
/// and a per-rollout deposited flag.
pub fn update_pheromone(
    pheromones: &mut Pheromones,
    start: ToolId,
    group: &RolloutGroup,
    e_x: &Arc<TaskEmbedding>,
    schedule: &ScheduleState,
    cfg: &TrainerConfig,
    params: &PheromoneParams,
) -> Result<(BTreeSet<Edge>, Vec<bool>)> {
    let mut touched = BTreeSet::new();
    let mut flags = Vec::with_capacity(group.rollouts.len());
    for r in &group.rollouts {
        let pass = passes_gate(r, schedule, cfg);
        if pass {
            touched.extend(pheromones.record_success(start, &r.trajectory(), e_x, r.score.q, params)?);
        }
        flags.push(pass);
    }
    Ok((touched, flags))
}

/// Supervised next-tool pass over all (state, reference tool) pairs, one SGD
/// step per pair in a seeded order. Returns the mean loss before the first
/// and after every epoch.
pub fn warmup(policy: &mut LinearPolicy, tasks: &[Task], start: ToolId, epochs: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    let mut pairs: Vec<(State, ToolId)> = Vec::new();
    for task in tasks {
        let mut s = State::initial(task.bucket, start);
        for &(t, _) in &task.episode.reference {
            pairs.push((s, t));
            s = s.advance(t);
        }
    }
    let mean_loss = |p: &LinearPolicy| -> Result<f64> {
        let mut total = 0.0;
        for (s, t) in &pairs {
            total += p.sl_loss_and_grad(s, *t)?.0;
        }
        Ok(if pairs.is_empty() { 0.0 } else { total / pairs.len() as f64 })
    };
    let mut losses = vec![mean_loss(policy)?];
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, &[WARMUP_TAG, epoch as u64])));
        for i in order {
            let (s, t) = &pairs[i];
            let mut g = policy.zero_gradient();
            policy.accumulate_sl(s, *t, 1.0, &mut g)?;
            policy.apply_update(&g, lr)?;
        }
        losses.push(mean_loss(policy)?);
    }
    Ok(losses)
}

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

const WARMUP_TAG: u64 = 0x5741_524d;
const ORDER_TAG: u64 = 0x4f52_4445;
const ROLLOUT_TAG: u64 = 0x524f_4c4c;

/// Derives an independent stream seed from a run seed and counters.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: usize,
    pub horizon: usize,
    pub avg_return: f64,
    pub match_ratio: f64,
    pub tool_acc: f64,
    pub diversity: f64,
    /// Tool-transition edges in the graph, including lazily discovered ones.
    pub edge_count: usize,
    /// Tool-transition edges holding pheromone statistics.
    pub pheromone_edges: usize,
    pub deposits: usize,
    /// Fraction of training episodes with a recorded first success.
    pub discovered: f64,
    pub p_tf: f64,
    pub beta: f64,
    pub lambda: f64,
    pub w: f64,
}

/// Counters of gate decisions; `violations` counts deposits from rollouts
/// that did not pass the gate and must stay zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateAudit {
    pub deposited: u64,
    pub rejected: u64,
    pub violations: u64,
}

/// Mutable training progress; everything needed to continue a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch_next: usize,
    pub global_step: u64,
    pub warmup_done: bool,
    pub warmup_losses: Vec<f64>,
    pub snapshot_version: u64,
    pub ppo_baselines: BTreeMap<String, f64>,
    pub first_success: BTreeMap<String, u64>,
    pub audit: GateAudit,
}

pub struct Trainer {
    pub config: RunConfig,
    pub graph: ToolGraph,
    pub train: Vec<Task>,
    pub val: Vec<Task>,
    pub test: Vec<Task>,
    pub policy: LinearPolicy,
    pub pheromones: Pheromones,
    pub progress: Progress,
    simulator: Simulator,
    pool: Option<rayon::ThreadPool>,
}

/// Builds the corpus named by the config.
pub fn load_episodes(cfg: &RunConfig) -> Result<(ToolGraph, Vec<Episode>)> {
    match &cfg.corpus {
        CorpusSource::Synthetic(s) => {
            let c = generate_synthetic(s)?;
            Ok((c.graph, c.episodes))
        }
        CorpusSource::Path(p) => load_corpus(p),
    }
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (graph, episodes) = load_episodes(&config)?;
        let (train, val, test) = split(&episodes, config.split, config.seed)?;
        if train.is_empty() {
            return Err(Error::EmptySplit("train".into()));
        }
        let t = &config.trainer;
        let to_tasks = |eps: Vec<Episode>| -> Result<Vec<Task>> {
            eps.into_iter().map(|e| Task::new(e, t.embedding_dim, t.n_buckets)).collect()
        };
        let policy = LinearPolicy::new(graph.n_tools(), graph.n_actions(), t.n_buckets)?;
        let pool = if t.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t.threads)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let mut sim_cfg = config.simulator.clone();
        sim_cfg.seed = mix(config.seed, &[sim_cfg.seed]);
        Ok(Self {
            train: to_tasks(train)?,
            val: to_tasks(val)?,
            test: to_tasks(test)?,
            policy,
            pheromones: Pheromones::default(),
            progress: Progress::default(),
            simulator: Simulator::new(sim_cfg)?,
            pool,
            graph,
            config,
        })
    }

    pub fn total_epochs(&self) -> usize {
        self.config.schedule.total_epochs()
    }

    pub fn schedule(&self, epoch: usize) -> ScheduleState {
        schedule_at(&self.config.schedule, self.config.sampler.beta_max, epoch)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.simulator
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch_next >= self.total_epochs()
    }

    fn pheromone_active(&self, schedule: &ScheduleState) -> bool {
        let t = &self.config.trainer;
        t.pheromone_enabled && t.pheromone_updates && !(schedule.is_final && t.freeze_pheromone_in_final)
    }

    /// Pheromone parameters in force under `schedule`.
    pub fn effective_params(&self, schedule: &ScheduleState) -> PheromoneParams {
        let mut p = self.config.pheromone.clone();
        if schedule.is_final {
            if let Some(rho) = self.config.trainer.final_rho {
                p.rho = rho;
            }
        }
        p
    }

    pub fn prior(&self, w: f64) -> Prior<'_> {
        if self.config.trainer.pheromone_enabled {
            Prior::Pheromone {
                pheromones: &self.pheromones,
                params: &self.config.pheromone,
                w,
            }
        } else {
            Prior::None
        }
    }

    pub fn warmup(&mut self) -> Result<Vec<f64>> {
        if self.progress.warmup_done {
            return Ok(self.progress.warmup_losses.clone());
        }
        let t = &self.config.trainer;
        let losses = warmup(
            &mut self.policy,
            &self.train,
            self.graph.start(),
            t.warmup_epochs,
            t.sl_lr,
            self.config.seed,
        )?;
        self.progress.warmup_done = true;
        self.progress.warmup_losses = losses.clone();
        Ok(losses)
    }

    /// Runs the next epoch (performing warm-up first if needed).
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        self.warmup()?;
        let epoch = self.progress.epoch_next;
        if epoch >= self.total_epochs() {
            return Err(Error::InvalidConfig("training already finished".into()));
        }
        let sched = self.schedule(epoch);
        let params = self.effective_params(&sched);
        let active = self.pheromone_active(&sched);
        let seed = self.config.seed;
        let m = self.config.trainer.group_size;

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, &[ORDER_TAG, epoch as u64])));

        let mut touched = BTreeSet::new();
        let (mut sum_return, mut sum_q, mut n_rollouts, mut deposits) = (0.0, 0.0, 0usize, 0usize);
        for i in order {
            self.progress.global_step += 1;
            let step = self.progress.global_step;
            let task = self.train[i].truncated(sched.horizon);
            let seeds: Vec<u64> = (0..m as u64).map(|k| mix(seed, &[ROLLOUT_TAG, step, k])).collect();
            let env = RolloutEnv {
                graph: &self.graph,
                simulator: &self.simulator,
                sampler: &self.config.sampler,
                outcome: &self.config.outcome,
            };
            let view = self.config.trainer.pheromone_enabled.then_some(PheromoneView {
                pheromones: &self.pheromones,
                params: &params,
                w: sched.w,
            });
            let group = rollout_group(
                &self.policy,
                view,
                &env,
                &task,
                &sched,
                &seeds,
                self.progress.snapshot_version,
                self.pool.as_ref(),
            )?;

            let returns = group.returns();
            let adv = match self.config.trainer.advantage_mode {
                AdvantageMode::Ppo => {
                    let b = self.progress.ppo_baselines.get(&task.episode.task_id).copied();
                    let (adv, nb) = ppo_advantages(&returns, b, self.config.trainer.ppo_decay);
                    self.progress.ppo_baselines.insert(task.episode.task_id.clone(), nb);
                    adv
                }
                mode => advantages(&returns, mode, self.config.trainer.advantage_eps)?,
            };
            update_policy(&mut self.policy, &group, &adv, &sched, &self.config.trainer)?;

            let start = self.graph.start();
            for r in &group.rollouts {
                let mut prev = start;
                for s in &r.steps {
                    self.graph.add_edge(prev, s.choice.tool);
                    prev = s.choice.tool;
                }
                sum_return += r.score.return_r;
                sum_q += r.score.q;
                n_rollouts += 1;
            }
            if !self.progress.first_success.contains_key(&task.episode.task_id)
                && group.rollouts.iter().any(|r| r.autonomous_q >= self.config.trainer.q_gate)
            {
                self.progress.first_success.insert(task.episode.task_id.clone(), step);
            }
            if active {
                let (edges, flags) = update_pheromone(
                    &mut self.pheromones,
                    start,
                    &group,
                    &task.embedding,
                    &sched,
                    &self.config.trainer,
                    &params,
                )?;
                for (r, &f) in group.rollouts.iter().zip(&flags) {
                    if f {
                        deposits += 1;
                        self.progress.audit.deposited += 1;
                        if !passes_gate(r, &sched, &self.config.trainer) {
                            self.progress.audit.violations += 1;
                        }
                    } else {
                        self.progress.audit.rejected += 1;
                    }
                }
                touched.extend(edges);
            }
            self.progress.snapshot_version += 1;
        }
        if active {
            self.pheromones.store.evaporate_except(&touched, &params);
        }

        let prior = self.prior(sched.w);
        let tool_acc = metrics::next_tool_accuracy(
            &self.policy,
            &prior,
            &self.val,
            self.graph.start(),
            sched.beta,
            &self.config.sampler,
            metrics::PrefixMode::Reference,
        )?;
        let diversity = metrics::exploration_diversity(
            &self.policy,
            &prior,
            &self.val,
            self.graph.start(),
            sched.beta,
            &self.config.sampler,
        )?;
        self.progress.epoch_next += 1;
        Ok(EpochMetrics {
            epoch,
            stage: sched.stage,
            horizon: sched.horizon,
            avg_return: sum_return / n_rollouts.max(1) as f64,
            match_ratio: sum_q / n_rollouts.max(1) as f64,
            tool_acc,
            diversity,
            edge_count: self.graph.transition_edges().len(),
            pheromone_edges: self.pheromones.store.tool_edge_count(),
            deposits,
            discovered: self.progress.first_success.len() as f64 / self.train.len() as f64,
            p_tf: sched.p_tf,
            beta: sched.beta,
            lambda: sched.lambda,
            w: sched.w,
        })
    }

    /// Trains through epoch `end` (exclusive), returning the new metrics.
    pub fn run_until(&mut self, end: usize) -> Result<Vec<EpochMetrics>> {
        let end = end.min(self.total_epochs());
        let mut out = Vec::new();
        while self.progress.epoch_next < end {
            out.push(self.train_epoch()?);
        }
        Ok(out)
    }

    pub fn run(&mut self) -> Result<Vec<EpochMetrics>> {
        self.run_until(self.total_epochs())
    }

    pub fn split_tasks(&self, name: &str) -> Result<&[Task]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}` (train, val, test)"))),
        }
    }

    /// Evaluates on a split with the schedule of the last trained epoch.
    pub fn evaluate(&self, split_name: &str) -> Result<EvalReport> {
        let tasks = self.split_tasks(split_name)?;
        if tasks.is_empty() {
            return Err(Error::EmptySplit(split_name.to_string()));
        }
        let epoch = self.progress.epoch_next.saturating_sub(1);
        let sched = self.schedule(epoch);
        let env = RolloutEnv {
            graph: &self.graph,
            simulator: &self.simulator,
            sampler: &self.config.sampler,
            outcome: &self.config.outcome,
        };
        metrics::evaluate(
            &self.policy,
            &self.prior(sched.w),
            &env,
            tasks,
            split_name,
            sched.beta,
            &self.config.eval,
            self.config.seed,
        )
    }

    /// First-success step per training episode.
    pub fn discovery(&self) -> Vec<DiscoveryRecord> {
        self.train
            .iter()
            .map(|t| DiscoveryRecord {
                task_id: t.episode.task_id.clone(),
                first_success_step: self.progress.first_success.get(&t.episode.task_id).copied(),
            })
            .collect()
    }

    /// Total number of training steps in the full run.
    pub fn total_steps(&self) -> u64 {
        (self.total_epochs() * self.train.len()) as u64
    }
}

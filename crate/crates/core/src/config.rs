//! Run configuration: one JSON document covering every module, plus the
//! named ablation variants.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{SimulatorConfig, SynthConfig, MAX_HORIZON};
use crate::error::{Error, Result};
use crate::pheromone::PheromoneParams;
use crate::rewards::OutcomeConfig;
use crate::sampling::SamplerConfig;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// Linear ramp from 0 to `beta_max` over the first `ramp_fraction` of
    /// epochs, constant afterwards.
    Dynamic,
    Fixed(f64),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    Grpo,
    Rloo,
    Ppo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Horizon per curriculum stage; its length is the number of stages.
    pub horizons: Vec<usize>,
    pub epochs_per_stage: usize,
    pub final_epochs: usize,
    pub p_tf_start: f64,
    pub p_tf_final: f64,
    pub ramp_fraction: f64,
    pub w_max: f64,
    pub beta: BetaSchedule,
    /// When false every epoch runs autonomously at the largest horizon.
    pub curriculum: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            horizons: vec![5, 10, 15, 20],
            epochs_per_stage: 5,
            final_epochs: 5,
            p_tf_start: 1.0,
            p_tf_final: 0.15,
            ramp_fraction: 0.3,
            w_max: 0.5,
            beta: BetaSchedule::Dynamic,
            curriculum: true,
        }
    }
}

impl ScheduleConfig {
    pub fn n_stages(&self) -> usize {
        self.horizons.len()
    }

    pub fn total_epochs(&self) -> usize {
        self.n_stages() * self.epochs_per_stage + self.final_epochs
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(MAX_HORIZON)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("schedule: {m}")));
        if self.horizons.is_empty() || self.horizons.iter().any(|&h| h == 0 || h > MAX_HORIZON) {
            return bad("horizons must be non-empty and within [1, 20]");
        }
        if self.horizons.windows(2).any(|w| w[0] > w[1]) {
            return bad("horizons must be nondecreasing");
        }
        if self.total_epochs() == 0 {
            return bad("at least one epoch is required");
        }
        for (name, v) in [
            ("p_tf_start", self.p_tf_start),
            ("p_tf_final", self.p_tf_final),
            ("ramp_fraction", self.ramp_fraction),
            ("w_max", self.w_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.p_tf_final > self.p_tf_start {
            return bad("p_tf must not increase");
        }
        if let BetaSchedule::Fixed(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return bad("fixed beta must be finite and non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub advantage_eps: f64,
    pub advantage_mode: AdvantageMode,
    pub ppo_decay: f64,
    /// Pheromone is only written while `p_tf` is below this.
    pub elite_gate: f64,
    pub q_gate: f64,
    pub warmup_epochs: usize,
    pub sl_lr: f64,
    pub rl_lr: f64,
    pub n_buckets: usize,
    pub embedding_dim: usize,
    /// False runs plain group policy optimization with no pheromone at all.
    pub pheromone_enabled: bool,
    /// False keeps the pheromone store and banks at their initial state.
    pub pheromone_updates: bool,
    /// Stop depositing and evaporating once the final phase starts.
    pub freeze_pheromone_in_final: bool,
    /// Evaporation rate override for the final phase.
    pub final_rho: Option<f64>,
    /// Worker threads for rollout generation (1 = sequential).
    pub threads: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            clip_eps: 0.2,
            entropy_coef: 0.005,
            advantage_eps: 1e-8,
            advantage_mode: AdvantageMode::Grpo,
            ppo_decay: 0.9,
            elite_gate: 0.3,
            q_gate: 0.6,
            warmup_epochs: 1,
            sl_lr: 0.1,
            rl_lr: 0.01,
            n_buckets: crate::policy::DEFAULT_BUCKETS,
            embedding_dim: crate::embedding::DEFAULT_DIM,
            pheromone_enabled: true,
            pheromone_updates: true,
            freeze_pheromone_in_final: false,
            final_rho: None,
            threads: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("trainer: {m}")));
        let min_group = if self.advantage_mode == AdvantageMode::Ppo { 1 } else { 2 };
        if self.group_size < min_group {
            return bad("group_size must be at least 2 for GRPO and RLOO");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.advantage_eps > 0.0) {
            return bad("entropy_coef must be non-negative and advantage_eps positive");
        }
        if !(0.0..1.0).contains(&self.ppo_decay) {
            return bad("ppo_decay must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.elite_gate) || !(0.0..=1.0).contains(&self.q_gate) {
            return bad("gates must lie in [0, 1]");
        }
        if !(self.sl_lr > 0.0 && self.rl_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.n_buckets == 0 || self.embedding_dim == 0 || self.threads == 0 {
            return bad("n_buckets, embedding_dim and threads must be positive");
        }
        if let Some(r) = self.final_rho {
            if !(0.0..1.0).contains(&r) {
                return bad("final_rho must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// How test trajectories are decoded.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDecoding {
    /// The training-time decoder: top-K, temperature, ε-greedy and the
    /// pheromone prior at the final β and w, with seeded draws.
    Sample,
    /// Argmax tool and invocation at every step.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub decoding: EvalDecoding,
    /// Sampled rollouts per episode; match ratio and completion are averaged.
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decoding: EvalDecoding::Sample,
            samples: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic(SynthConfig),
    Path(PathBuf),
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSource,
    pub split: [f64; 3],
    pub pheromone: PheromoneParams,
    pub sampler: SamplerConfig,
    pub trainer: TrainerConfig,
    pub schedule: ScheduleConfig,
    pub simulator: SimulatorConfig,
    pub outcome: OutcomeConfig,
    pub eval: EvalConfig,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusSource::default(),
            split: [0.8, 0.1, 0.1],
            pheromone: PheromoneParams::default(),
            sampler: SamplerConfig::default(),
            trainer: TrainerConfig::default(),
            schedule: ScheduleConfig::default(),
            simulator: SimulatorConfig::default(),
            outcome: OutcomeConfig::default(),
            eval: EvalConfig::default(),
            checkpoint_every: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pheromone.validate()?;
        self.sampler.validate()?;
        self.trainer.validate()?;
        self.schedule.validate()?;
        if self.eval.samples == 0 {
            return Err(Error::InvalidConfig("eval: samples must be positive".into()));
        }
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Applies a named ablation variant.
    pub fn with_variant(&self, variant: &str) -> Result<Self> {
        let mut c = self.clone();
        match variant {
            "full" => {}
            "no_pheromone" | "beta_0" => c.schedule.beta = BetaSchedule::Fixed(0.0),
            "beta_1" => c.schedule.beta = BetaSchedule::Fixed(1.0),
            "beta_5" => c.schedule.beta = BetaSchedule::Fixed(5.0),
            "beta_dynamic" => c.schedule.beta = BetaSchedule::Dynamic,
            "no_curriculum" => c.schedule.curriculum = false,
            "static_prior" => c.trainer.freeze_pheromone_in_final = true,
            "no_evaporation" => c.trainer.final_rho = Some(0.0),
            "no_task_dependent" => c.schedule.w_max = 0.0,
            "plain_grpo" => {
                c.trainer.pheromone_enabled = false;
                c.schedule.beta = BetaSchedule::Fixed(0.0);
            }
            "grpo" => c.trainer.advantage_mode = AdvantageMode::Grpo,
            "ppo" => c.trainer.advantage_mode = AdvantageMode::Ppo,
            "rloo" => c.trainer.advantage_mode = AdvantageMode::Rloo,
            _ => {
                return Err(Error::UnknownVariant {
                    name: variant.to_string(),
                    valid: VARIANTS.join(", "),
                })
            }
        }
        Ok(c)
    }
}

pub const VARIANTS: [&str; 14] = [
    "full",
    "plain_grpo",
    "no_pheromone",
    "no_curriculum",
    "static_prior",
    "no_evaporation",
    "no_task_dependent",
    "beta_0",
    "beta_1",
    "beta_5",
    "beta_dynamic",
    "grpo",
    "ppo",
    "rloo",
];

//! Step rewards, outcome bonus, episode return and trajectory quality.

use serde::{Deserialize, Serialize};

use crate::environment::SimResult;
use crate::tool_graph::{ToolGraph, ToolId};

pub const EXACT_MATCH: f64 = 0.5;
pub const CATEGORY_MATCH: f64 = 0.2;
pub const RECOVERY_BONUS: f64 = 0.1;
pub const EXEC_OK: f64 = 0.5;
pub const EXEC_ERROR: f64 = -0.5;

/// Outcome grading: a flat bonus for completion, otherwise proportional to
/// the final match ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub completed_bonus: f64,
    pub partial_scale: f64,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        Self {
            completed_bonus: 2.0,
            partial_scale: 1.0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub intent: f64,
    pub exec: f64,
    pub total: f64,
}

impl StepReward {
    pub fn new(intent: f64, exec: f64) -> Self {
        Self {
            intent,
            exec,
            total: intent + exec,
        }
    }
}

/// Intent reward for choosing `chosen` where the reference has `reference`
/// (`None` past the end of the reference). The recovery bonus applies only
/// when the previous step was wrong and this one is exact.
pub fn intent_reward(
    graph: &ToolGraph,
    chosen: ToolId,
    reference: Option<ToolId>,
    prev_chosen: ToolId,
    prev_reference: ToolId,
) -> f64 {
    let Some(reference) = reference else {
        return 0.0;
    };
    if chosen == reference {
        if prev_chosen != prev_reference {
            EXACT_MATCH + RECOVERY_BONUS
        } else {
            EXACT_MATCH
        }
    } else if graph.same_category(chosen, reference) {
        CATEGORY_MATCH
    } else {
        0.0
    }
}

pub fn exec_reward(sim: &SimResult) -> f64 {
    if sim.is_error {
        EXEC_ERROR
    } else {
        EXEC_OK
    }
}

pub fn outcome_bonus(completed: bool, q_final: f64, cfg: &OutcomeConfig) -> f64 {
    if completed {
        cfg.completed_bonus
    } else {
        cfg.partial_scale * q_final
    }
}

/// Fraction of reference steps whose tool is matched at the same position.
pub fn match_ratio(predicted: &[ToolId], reference: &[ToolId]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(reference).filter(|(a, b)| a == b).count();
    hits as f64 / reference.len() as f64
}

/// Match ratio restricted to autonomous (not teacher-forced) steps; `None`
/// when every step was forced.
pub fn model_quality(predicted: &[ToolId], forced: &[bool], reference: &[ToolId]) -> Option<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for (t, (&a, &f)) in predicted.iter().zip(forced).enumerate() {
        if f {
            continue;
        }
        n += 1;
        if reference.get(t) == Some(&a) {
            hits += 1;
        }
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Reference-matching autonomous steps over the reference length.
pub fn autonomous_match(predicted: &[ToolId], forced: &[bool], reference: &[ToolId]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(forced)
        .zip(reference)
        .filter(|((a, f), r)| !**f && a == r)
        .count();
    hits as f64 / reference.len() as f64
}

pub fn episode_return(steps: &[StepReward], outcome: f64) -> f64 {
    steps.iter().map(|s| s.total).sum::<f64>() + outcome
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub step_rewards: Vec<StepReward>,
    pub outcome: f64,
    pub return_r: f64,
    pub q: f64,
    pub q_model: Option<f64>,
    pub completed: bool,
}

/// Scores a finished rollout against its reference.
pub fn score_episode(
    graph: &ToolGraph,
    executed: &[ToolId],
    forced: &[bool],
    sims: &[SimResult],
    reference: &[ToolId],
    cfg: &OutcomeConfig,
) -> EpisodeScore {
    let start = graph.start();
    let mut step_rewards = Vec::with_capacity(executed.len());
    for (t, (&a, sim)) in executed.iter().zip(sims).enumerate() {
        let (prev_a, prev_r) = if t == 0 {
            (start, start)
        } else {
            (executed[t - 1], reference.get(t - 1).copied().unwrap_or(start))
        };
        let intent = intent_reward(graph, a, reference.get(t).copied(), prev_a, prev_r);
        step_rewards.push(StepReward::new(intent, exec_reward(sim)));
    }
    let completed = sims.last().is_some_and(|s| s.is_complete);
    let q = match_ratio(executed, reference);
    let outcome = outcome_bonus(completed, q, cfg);
    EpisodeScore {
        return_r: episode_return(&step_rewards, outcome),
        step_rewards,
        outcome,
        q,
        q_model: model_quality(executed, forced, reference),
        completed,
    }
}

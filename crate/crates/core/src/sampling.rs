//! Pheromone-guided next-tool and invocation sampling.
//!
//! Over the policy's top-K candidates the sampler draws from
//! `p(a) ∝ exp(log pi(a) / T + beta * ln tau(prev, a))`, mixed with a uniform
//! ε-greedy component at the distribution level. With teacher forcing the
//! behavior distribution further mixes in a point mass on the reference
//! action; recorded behavior log-probabilities always refer to the full
//! mixture actually used.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::log_softmax;
use crate::tool_graph::{InvocationId, ToolId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub top_k: usize,
    pub temperature: f64,
    pub epsilon_greedy: f64,
    /// Ceiling of the pheromone influence schedule.
    pub beta_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_k: 20,
            temperature: 0.7,
            epsilon_greedy: 0.05,
            beta_max: 0.8,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("sampler top_k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("sampler temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_greedy) {
            return Err(Error::InvalidConfig("epsilon_greedy must lie in [0, 1]".into()));
        }
        if !(self.beta_max >= 0.0) {
            return Err(Error::InvalidConfig("beta_max must be non-negative".into()));
        }
        Ok(())
    }
}

/// A distribution over a candidate support. Tools outside the support have
/// probability zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    pub tools: Vec<ToolId>,
    pub probs: Vec<f64>,
}

impl Candidates {
    pub fn prob_of(&self, tool: ToolId) -> f64 {
        self.tools
            .iter()
            .position(|&t| t == tool)
            .map_or(0.0, |i| self.probs[i])
    }

    /// Most probable candidate; ties go to the lower tool id.
    pub fn argmax(&self) -> ToolId {
        let mut best = 0;
        for i in 1..self.tools.len() {
            let (p, b) = (self.probs[i], self.probs[best]);
            if p > b || (p == b && self.tools[i] < self.tools[best]) {
                best = i;
            }
        }
        self.tools[best]
    }

    /// The same distribution spread over `n` actions, zeros off-support.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (t, p) in self.tools.iter().zip(&self.probs) {
            out[t.index()] = *p;
        }
        out
    }
}

/// Indices of the `k` largest logits, descending; ties broken by index.
pub fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k.min(logits.len()));
    idx
}

fn softmax_in_place(scores: &mut [f64]) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Pheromone-guided distribution over the top-K support, before ε-greedy.
///
/// `prior` returns the clipped fused pheromone on `(prev, a)`; `None` skips
/// the prior term altogether.
pub fn guided_distribution(
    logits: &[f64],
    prior: Option<&dyn Fn(ToolId) -> f64>,
    beta: f64,
    cfg: &SamplerConfig,
) -> Result<Candidates> {
    if logits.is_empty() {
        return Err(Error::InvalidConfig("no candidate tools".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidConfig(format!("beta {beta} must be non-negative")));
    }
    let lp = log_softmax(logits, 1.0);
    let support = top_k(logits, cfg.top_k);
    let mut scores = Vec::with_capacity(support.len());
    for &i in &support {
        let mut s = lp[i] / cfg.temperature;
        if let Some(tau) = prior {
            let t = tau(ToolId(i as u32));
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("pheromone value {t} is not positive")));
            }
            s += beta * t.ln();
        }
        scores.push(s);
    }
    softmax_in_place(&mut scores);
    Ok(Candidates {
        tools: support.into_iter().map(|i| ToolId(i as u32)).collect(),
        probs: scores,
    })
}

/// Mixes a uniform draw over the support with weight `eps`.
pub fn with_epsilon(mut dist: Candidates, eps: f64) -> Candidates {
    let u = eps / dist.tools.len() as f64;
    for p in dist.probs.iter_mut() {
        *p = (1.0 - eps) * *p + u;
    }
    dist
}

/// The distribution a non-forced step samples from.
pub fn sampling_distribution(
    logits: &[f64],
    prior: Option<&dyn Fn(ToolId) -> f64>,
    beta: f64,
    cfg: &SamplerConfig,
) -> Result<Candidates> {
    Ok(with_epsilon(guided_distribution(logits, prior, beta, cfg)?, cfg.epsilon_greedy))
}

/// Inverse-CDF draw from `probs`.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total; take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ToolChoice {
    pub tool: ToolId,
    /// Log-probability under the behavior mixture actually sampled from.
    pub behavior_logprob: f64,
    /// `log pi_old(tool | state)` at temperature 1.
    pub policy_logprob_old: f64,
    pub teacher_forced: bool,
}

/// One step: the tool plus the invocation chosen for it.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StepChoice {
    pub tool: ToolId,
    pub invocation: InvocationId,
    pub behavior_logprob: f64,
    pub policy_logprob_old: f64,
    pub teacher_forced: bool,
}

impl StepChoice {
    pub fn new(tool: ToolChoice, invocation: InvocationId) -> Self {
        Self {
            tool: tool.tool,
            invocation,
            behavior_logprob: tool.behavior_logprob,
            policy_logprob_old: tool.policy_logprob_old,
            teacher_forced: tool.teacher_forced,
        }
    }
}

pub fn guided_tool_sample<R: Rng + ?Sized>(
    logits: &[f64],
    prior: Option<&dyn Fn(ToolId) -> f64>,
    beta: f64,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ToolChoice> {
    mixed_step(logits, prior, beta, cfg, None, 0.0, rng)
}

/// Fully autonomous step with the pheromone at its ceiling.
pub fn full_pheromone_step<R: Rng + ?Sized>(
    logits: &[f64],
    prior: Option<&dyn Fn(ToolId) -> f64>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ToolChoice> {
    mixed_step(logits, prior, cfg.beta_max, cfg, None, 0.0, rng)
}

/// Teacher-forced mixture: with probability `p_tf` execute `reference`,
/// otherwise sample from the guided distribution. Without a reference the
/// step falls back to guided sampling.
#[allow(clippy::too_many_arguments)]
pub fn mixed_step<R: Rng + ?Sized>(
    logits: &[f64],
    prior: Option<&dyn Fn(ToolId) -> f64>,
    beta: f64,
    cfg: &SamplerConfig,
    reference: Option<ToolId>,
    p_tf: f64,
    rng: &mut R,
) -> Result<ToolChoice> {
    if !(0.0..=1.0).contains(&p_tf) {
        return Err(Error::InvalidConfig(format!("p_tf {p_tf} outside [0, 1]")));
    }
    let dist = sampling_distribution(logits, prior, beta, cfg)?;
    let p_tf = if reference.is_some() { p_tf } else { 0.0 };
    let forced = p_tf > 0.0 && rng.gen::<f64>() < p_tf;
    let tool = match (forced, reference) {
        (true, Some(r)) => r,
        _ => dist.tools[sample_index(&dist.probs, rng)],
    };
    if tool.index() >= logits.len() {
        return Err(Error::UnknownToolId(tool.0));
    }
    let point = match reference {
        Some(r) if r == tool => 1.0,
        _ => 0.0,
    };
    let mass = p_tf * point + (1.0 - p_tf) * dist.prob_of(tool);
    Ok(ToolChoice {
        tool,
        behavior_logprob: mass.ln(),
        policy_logprob_old: log_softmax(logits, 1.0)[tool.index()],
        teacher_forced: forced,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgMode {
    Sample,
    Argmax,
}

/// Chooses an invocation of a tool with probability proportional to its
/// pheromone; `Argmax` takes the largest (ties to the lower pattern index).
pub fn arg_sample<R: Rng + ?Sized>(
    invocations: &[InvocationId],
    tau: &dyn Fn(InvocationId) -> f64,
    mode: ArgMode,
    rng: &mut R,
) -> Result<InvocationId> {
    let Some(first) = invocations.first() else {
        return Err(Error::EmptyInvocationSet("<unknown>".into()));
    };
    if invocations.len() == 1 {
        return Ok(*first);
    }
    let weights: Vec<f64> = invocations.iter().map(|&inv| tau(inv)).collect();
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidConfig("invocation pheromone must be positive".into()));
    }
    match mode {
        ArgMode::Argmax => {
            let mut best = 0;
            for (i, w) in weights.iter().enumerate() {
                if *w > weights[best] {
                    best = i;
                }
            }
            Ok(invocations[best])
        }
        ArgMode::Sample => {
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            Ok(invocations[sample_index(&probs, rng)])
        }
    }
}

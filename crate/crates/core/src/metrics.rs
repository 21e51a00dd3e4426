//! Evaluation metrics, discovery curves and pheromone heatmap export.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, EvalDecoding};
use crate::embedding::encode;
use crate::error::{Error, Result};
use crate::pheromone::{FusionContext, PheromoneParams, Pheromones};
use crate::policy::{entropy, LinearPolicy, State};
use crate::rewards::match_ratio;
use crate::sampling::{guided_distribution, sampling_distribution, SamplerConfig};
use crate::tool_graph::{ToolGraph, ToolId};
use crate::trainer::{mix, rollout, with_prior, RolloutEnv, RolloutMode, Task};

/// Where the sampling prior comes from during evaluation.
#[derive(Copy, Clone)]
pub enum Prior<'a> {
    None,
    Pheromone {
        pheromones: &'a Pheromones,
        params: &'a PheromoneParams,
        w: f64,
    },
}

impl<'a> Prior<'a> {
    fn context<'b>(&self, task: &'b Task) -> Option<FusionContext<'b>>
    where
        'a: 'b,
    {
        match *self {
            Prior::None => None,
            Prior::Pheromone { pheromones, params, w } => Some(FusionContext::new(pheromones, params, &task.embedding, w)),
        }
    }
}

/// Which prefix the model conditions on when predicting step `t`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// The reference prefix.
    Reference,
    /// The model's own greedy predictions so far.
    Model,
}

/// Fraction of reference steps whose argmax guided prediction is correct.
pub fn next_tool_accuracy(
    policy: &LinearPolicy,
    prior: &Prior,
    tasks: &[Task],
    start: ToolId,
    beta: f64,
    cfg: &SamplerConfig,
    mode: PrefixMode,
) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for task in tasks {
        let ctx = prior.context(task);
        let mut state = State::initial(task.bucket, start);
        for &(target, _) in &task.episode.reference {
            let logits = policy.logits(&state)?;
            let pred = with_prior(ctx.as_ref(), state.last, |p| guided_distribution(&logits, p, beta, cfg))?.argmax();
            hits += usize::from(pred == target);
            total += 1;
            state = state.advance(match mode {
                PrefixMode::Reference => target,
                PrefixMode::Model => pred,
            });
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Mean normalized entropy of the sampling distribution (ε-greedy
/// included) over reference-prefix states. Zero with a single action.
pub fn exploration_diversity(
    policy: &LinearPolicy,
    prior: &Prior,
    tasks: &[Task],
    start: ToolId,
    beta: f64,
    cfg: &SamplerConfig,
) -> Result<f64> {
    let n = policy.n_actions();
    if n <= 1 {
        return Ok(0.0);
    }
    let norm = (n as f64).ln();
    let (mut sum, mut count) = (0.0, 0usize);
    for task in tasks {
        let ctx = prior.context(task);
        let mut state = State::initial(task.bucket, start);
        for &(target, _) in &task.episode.reference {
            let logits = policy.logits(&state)?;
            let dist = with_prior(ctx.as_ref(), state.last, |p| sampling_distribution(&logits, p, beta, cfg))?;
            sum += entropy(&dist.probs) / norm;
            count += 1;
            state = state.advance(target);
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub task_id: String,
    /// Tools of the first decoded rollout.
    pub predicted: Vec<String>,
    pub reference: Vec<String>,
    /// Mean over decoded rollouts.
    pub match_ratio: f64,
    /// Fraction of decoded rollouts that completed.
    pub completion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_episodes: usize,
    pub decoding: EvalDecoding,
    pub samples: usize,
    pub match_ratio_mean: f64,
    pub tool_acc: f64,
    pub diversity: f64,
    pub completion_rate: f64,
    pub episodes: Vec<EpisodeEval>,
}

const EVAL_TAG: u64 = 0x4556_414c;

/// Autonomous rollouts on every task under the configured decoding, plus
/// next-tool accuracy and diversity. Sampled decoding draws from seeds
/// derived from `seed`, the episode index and the sample index, so the
/// report is a pure function of the snapshots.
pub fn evaluate(
    policy: &LinearPolicy,
    prior: &Prior,
    env: &RolloutEnv,
    tasks: &[Task],
    split: &str,
    beta: f64,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let start = env.graph.start();
    let (mode, samples) = match cfg.decoding {
        EvalDecoding::Sample => (RolloutMode::Sample { p_tf: 0.0 }, cfg.samples),
        EvalDecoding::Greedy => (RolloutMode::Greedy, 1),
    };
    let mut episodes = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let ctx = prior.context(task);
        let reference = task.reference_tools();
        let (mut mr, mut done, mut first) = (0.0, 0usize, None);
        for k in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[EVAL_TAG, i as u64, k as u64]));
            let r = rollout(policy, ctx.as_ref(), env, task, beta, mode, &mut rng)?;
            let predicted = r.tools();
            mr += match_ratio(&predicted, &reference);
            done += usize::from(r.score.completed);
            first.get_or_insert(predicted);
        }
        episodes.push(EpisodeEval {
            task_id: task.episode.task_id.clone(),
            predicted: first.unwrap_or_default().iter().map(|&t| env.graph.name(t).to_string()).collect(),
            reference: reference.iter().map(|&t| env.graph.name(t).to_string()).collect(),
            match_ratio: mr / samples as f64,
            completion: done as f64 / samples as f64,
        });
    }
    let n = episodes.len() as f64;
    Ok(EvalReport {
        split: split.to_string(),
        n_episodes: episodes.len(),
        decoding: cfg.decoding,
        samples,
        match_ratio_mean: episodes.iter().map(|e| e.match_ratio).sum::<f64>() / n,
        completion_rate: episodes.iter().map(|e| e.completion).sum::<f64>() / n,
        tool_acc: next_tool_accuracy(policy, prior, tasks, start, beta, env.sampler, PrefixMode::Reference)?,
        diversity: exploration_diversity(policy, prior, tasks, start, beta, env.sampler)?,
        episodes,
    })
}

// ---------------------------------------------------------------------------
// Discovery
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub task_id: String,
    pub first_success_step: Option<u64>,
}

/// Fraction of episodes discovered by each step `1..=total_steps`.
pub fn coverage_curve(records: &[DiscoveryRecord], total_steps: u64) -> Vec<f64> {
    if records.is_empty() {
        return vec![0.0; total_steps as usize];
    }
    let mut counts = vec![0usize; total_steps as usize + 1];
    for r in records {
        if let Some(s) = r.first_success_step {
            if s >= 1 && s <= total_steps {
                counts[s as usize] += 1;
            }
        }
    }
    let mut acc = 0usize;
    (1..=total_steps as usize)
        .map(|s| {
            acc += counts[s];
            acc as f64 / records.len() as f64
        })
        .collect()
}

/// Mean first-success step; undiscovered episodes count as
/// `total_steps + 1`.
pub fn mean_first_success(records: &[DiscoveryRecord], total_steps: u64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: u64 = records.iter().map(|r| r.first_success_step.unwrap_or(total_steps + 1)).sum();
    sum as f64 / records.len() as f64
}

// ---------------------------------------------------------------------------
// Heatmap
// ---------------------------------------------------------------------------

/// Fused tool-transition pheromone over a subset of tools for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub tools: Vec<String>,
    /// Row `i`, column `j` holds the value on `tools[i] -> tools[j]`.
    pub values: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn compute(
        graph: &ToolGraph,
        pheromones: &Pheromones,
        params: &PheromoneParams,
        tools: &[String],
        task_text: &str,
        dim: usize,
        w: f64,
    ) -> Result<Self> {
        let ids: Vec<ToolId> = tools.iter().map(|n| graph.tool_id(n)).collect::<Result<_>>()?;
        let e_x = encode(task_text, dim)?;
        let ctx = FusionContext::new(pheromones, params, &e_x, w);
        let values = ids.iter().map(|&a| ids.iter().map(|&b| ctx.tool(a, b)).collect()).collect();
        Ok(Self {
            tools: tools.to_vec(),
            values,
        })
    }

    /// Writes a square matrix with a header row and a leading name column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec![String::new()];
        header.extend(self.tools.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in self.tools.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        let mut rows = r.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::InvalidConfig(format!("{}: empty heatmap", path.display())))?
            .map_err(csv_err)?;
        let tools: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::with_capacity(tools.len());
        for (i, row) in rows.enumerate() {
            let row = row.map_err(csv_err)?;
            if row.get(0) != tools.get(i).map(String::as_str) || row.len() != tools.len() + 1 {
                return Err(Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: i + 2,
                    message: "row does not match header".into(),
                });
            }
            let parsed = row
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: i + 2,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            values.push(parsed);
        }
        if values.len() != tools.len() {
            return Err(Error::DimensionMismatch(tools.len(), values.len()));
        }
        Ok(Self { tools, values })
    }

    /// Writes `from,to,value,on_chain` rows; `chain` marks consecutive pairs.
    pub fn write_edges_csv(&self, path: &Path, chain: &[String]) -> Result<()> {
        let on_chain = |a: &str, b: &str| chain.windows(2).any(|w| w[0] == a && w[1] == b);
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["from", "to", "value", "on_chain"]).map_err(csv_err)?;
        for (a, row) in self.tools.iter().zip(&self.values) {
            for (b, v) in self.tools.iter().zip(row) {
                w.write_record([a.as_str(), b.as_str(), &format!("{v:?}"), &on_chain(a, b).to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidConfig(format!("csv: {other:?}")),
    }
}

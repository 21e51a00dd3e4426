//! Whole-run checkpoints: config, progress, policy weights, pheromone state
//! and the (lazily grown) tool graph.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pheromone::{PheromoneFile, Pheromones};
use crate::policy::{LinearPolicy, PolicyFile};
use crate::tool_graph::{GraphFile, ToolGraph};
use crate::trainer::{Progress, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub progress: Progress,
    pub policy: PolicyFile,
    pub pheromone: PheromoneFile,
    pub graph: GraphFile,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: trainer.config.clone(),
            progress: trainer.progress.clone(),
            policy: trainer.policy.to_file(),
            pheromone: trainer.pheromones.to_file(),
            graph: trainer.graph.to_file(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: u32::try_from(found).unwrap_or(u32::MAX),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Rebuilds a trainer; the corpus is regenerated or reloaded from the
    /// stored config, so splits and task order match the original run.
    pub fn restore(self) -> Result<Trainer> {
        let mut trainer = Trainer::new(self.config)?;
        let graph = ToolGraph::from_file(self.graph)?;
        if graph.names() != trainer.graph.names() {
            return Err(Error::InvalidConfig("checkpoint graph does not match the corpus".into()));
        }
        let policy = LinearPolicy::from_file(self.policy)?;
        if policy.n_actions() != graph.n_actions() || policy.n_buckets() != trainer.config.trainer.n_buckets {
            return Err(Error::DimensionMismatch(graph.n_actions(), policy.n_actions()));
        }
        trainer.graph = graph;
        trainer.policy = policy;
        trainer.pheromones = Pheromones::from_file(self.pheromone)?;
        trainer.progress = self.progress;
        Ok(trainer)
    }
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        Checkpoint::load(path)?.restore()
    }
}

//! Pheromone-guided policy optimization for long-horizon tool planning.
//!
//! A linear-softmax policy over tool-transition states is trained with a
//! staged curriculum and group-relative policy gradients, while an explicit
//! pheromone prior, deposited from verified rollouts and evaporated each
//! epoch, reshapes the sampling distribution.

pub mod checkpoint;
pub mod config;
pub mod embedding;
pub mod environment;
pub mod error;
pub mod metrics;
pub mod pheromone;
pub mod policy;
pub mod rewards;
pub mod sampling;
pub mod tool_graph;
pub mod trainer;

pub use error::{Error, Result};

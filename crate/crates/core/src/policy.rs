//! Linear-softmax next-tool policy.
//!
//! Features are `one_hot(last) ++ one_hot(prev) ++ one_hot(bucket)`, so the
//! logits for a state are the sum of three weight rows. Losses are expressed
//! through their gradient with respect to the logits and scattered back onto
//! those rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tool_graph::ToolId;

pub const FEATURE_MAP_VERSION: u32 = 1;
pub const DEFAULT_BUCKETS: usize = 32;

/// Two-step tool history plus the task's embedding bucket.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct State {
    pub bucket: usize,
    pub last: ToolId,
    pub prev: ToolId,
}

impl State {
    /// State before the first step: both history slots hold START.
    pub fn initial(bucket: usize, start: ToolId) -> Self {
        Self {
            bucket,
            last: start,
            prev: start,
        }
    }

    pub fn advance(self, tool: ToolId) -> Self {
        Self {
            bucket: self.bucket,
            last: tool,
            prev: self.last,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPolicy {
    n_tools: usize,
    n_actions: usize,
    n_buckets: usize,
    /// Row-major `[n_features x n_actions]`.
    weights: Vec<f64>,
}

/// Dense gradient with the same layout as the policy weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    n_actions: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Adds `scale * dlogits` onto the rows active in `rows`.
    fn scatter(&mut self, rows: [usize; 3], dlogits: &[f64], scale: f64) {
        for r in rows {
            let row = &mut self.values[r * self.n_actions..(r + 1) * self.n_actions];
            for (g, d) in row.iter_mut().zip(dlogits) {
                *g += scale * d;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}

impl LinearPolicy {
    pub fn new(n_tools: usize, n_actions: usize, n_buckets: usize) -> Result<Self> {
        if n_actions == 0 || n_actions > n_tools || n_buckets == 0 {
            return Err(Error::InvalidConfig(format!(
                "policy shape: n_tools={n_tools}, n_actions={n_actions}, n_buckets={n_buckets}"
            )));
        }
        let n_features = 2 * n_tools + n_buckets;
        Ok(Self {
            n_tools,
            n_actions,
            n_buckets,
            weights: vec![0.0; n_features * n_actions],
        })
    }

    pub fn n_tools(&self) -> usize {
        self.n_tools
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn n_features(&self) -> usize {
        2 * self.n_tools + self.n_buckets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn zero_gradient(&self) -> Gradient {
        Gradient {
            n_actions: self.n_actions,
            values: vec![0.0; self.weights.len()],
        }
    }

    fn rows(&self, state: &State) -> Result<[usize; 3]> {
        if state.last.index() >= self.n_tools {
            return Err(Error::UnknownToolId(state.last.0));
        }
        if state.prev.index() >= self.n_tools {
            return Err(Error::UnknownToolId(state.prev.0));
        }
        if state.bucket >= self.n_buckets {
            return Err(Error::InvalidConfig(format!(
                "bucket {} outside [0, {})",
                state.bucket, self.n_buckets
            )));
        }
        Ok([
            state.last.index(),
            self.n_tools + state.prev.index(),
            2 * self.n_tools + state.bucket,
        ])
    }

    pub fn logits(&self, state: &State) -> Result<Vec<f64>> {
        let rows = self.rows(state)?;
        let a = self.n_actions;
        let mut z = vec![0.0; a];
        for r in rows {
            for (zi, w) in z.iter_mut().zip(&self.weights[r * a..(r + 1) * a]) {
                *zi += w;
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogits);
        }
        Ok(z)
    }

    /// Log-probabilities at temperature 1.
    pub fn log_probs(&self, state: &State) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(state)?, 1.0))
    }

    /// Cross-entropy `-log pi(target | state)` and its gradient.
    pub fn sl_loss_and_grad(&self, state: &State, target: ToolId) -> Result<(f64, Gradient)> {
        let mut g = self.zero_gradient();
        let loss = self.accumulate_sl(state, target, 1.0, &mut g)?;
        Ok((loss, g))
    }

    /// Clipped-surrogate loss on one executed action and its gradient.
    pub fn pg_loss_and_grad(
        &self,
        state: &State,
        action: ToolId,
        old_logprob: f64,
        advantage: f64,
        clip_eps: f64,
    ) -> Result<(f64, Gradient)> {
        let mut g = self.zero_gradient();
        let loss = self.accumulate_pg(state, action, old_logprob, advantage, clip_eps, 1.0, &mut g)?;
        Ok((loss, g))
    }

    /// Entropy of `pi(. | state)` and its gradient (of `H`, not of `-H`).
    pub fn entropy_and_grad(&self, state: &State) -> Result<(f64, Gradient)> {
        let mut g = self.zero_gradient();
        let h = self.accumulate_entropy(state, 1.0, &mut g)?;
        Ok((h, g))
    }

    pub(crate) fn accumulate_sl(&self, state: &State, target: ToolId, scale: f64, g: &mut Gradient) -> Result<f64> {
        let rows = self.rows(state)?;
        let t = self.action_index(target)?;
        let lp = log_softmax(&self.logits(state)?, 1.0);
        let mut d: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        d[t] -= 1.0;
        g.scatter(rows, &d, scale);
        Ok(-lp[t])
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_pg(
        &self,
        state: &State,
        action: ToolId,
        old_logprob: f64,
        advantage: f64,
        clip_eps: f64,
        scale: f64,
        g: &mut Gradient,
    ) -> Result<f64> {
        if !(clip_eps > 0.0) {
            return Err(Error::InvalidConfig("clip_eps must be positive".into()));
        }
        let rows = self.rows(state)?;
        let a = self.action_index(action)?;
        let lp = log_softmax(&self.logits(state)?, 1.0);
        let ratio = (lp[a] - old_logprob).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
        if unclipped <= clipped {
            if advantage != 0.0 {
                // d(-r A)/dz = -A r (onehot - p)
                let mut d: Vec<f64> = lp.iter().map(|l| advantage * ratio * l.exp()).collect();
                d[a] -= advantage * ratio;
                g.scatter(rows, &d, scale);
            }
            Ok(-unclipped)
        } else {
            Ok(-clipped)
        }
    }

    pub(crate) fn accumulate_entropy(&self, state: &State, scale: f64, g: &mut Gradient) -> Result<f64> {
        let rows = self.rows(state)?;
        let lp = log_softmax(&self.logits(state)?, 1.0);
        let h = entropy_from_log_probs(&lp);
        let d: Vec<f64> = lp.iter().map(|&l| -l.exp() * (l + h)).collect();
        g.scatter(rows, &d, scale);
        Ok(h)
    }

    fn action_index(&self, tool: ToolId) -> Result<usize> {
        if tool.index() < self.n_actions {
            Ok(tool.index())
        } else {
            Err(Error::UnknownToolId(tool.0))
        }
    }

    /// Plain gradient descent: `w <- w - lr * g`.
    pub fn apply_update(&mut self, g: &Gradient, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if g.values.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(self.weights.len(), g.values.len()));
        }
        for (w, d) in self.weights.iter_mut().zip(&g.values) {
            *w -= lr * d;
        }
        Ok(())
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            feature_map_version: FEATURE_MAP_VERSION,
            n_tools: self.n_tools,
            n_actions: self.n_actions,
            n_buckets: self.n_buckets,
            weights: self.weights.clone(),
        }
    }

    pub fn from_file(file: PolicyFile) -> Result<Self> {
        if file.feature_map_version != FEATURE_MAP_VERSION {
            return Err(Error::VersionMismatch {
                expected: FEATURE_MAP_VERSION,
                found: file.feature_map_version,
            });
        }
        let mut p = Self::new(file.n_tools, file.n_actions, file.n_buckets)?;
        if file.weights.len() != p.weights.len() {
            return Err(Error::DimensionMismatch(p.weights.len(), file.weights.len()));
        }
        p.weights = file.weights;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub feature_map_version: u32,
    pub n_tools: usize,
    pub n_actions: usize,
    pub n_buckets: usize,
    pub weights: Vec<f64>,
}

/// `z / T - logsumexp(z / T)`.
pub fn log_softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|v| v - lse).collect()
}

pub fn entropy_from_log_probs(lp: &[f64]) -> f64 {
    -lp.iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                p * l
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

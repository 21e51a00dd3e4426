//! Pheromone as an explicit transition prior.
//!
//! Two task-agnostic stores (tool transitions and tool-to-invocation edges)
//! follow the ACO rule `tau <- clip((1 - rho) * tau + alpha * q)`. Each edge
//! also keeps a bank of `(task embedding, quality)` memories; for a query
//! task the bank yields a task-dependent estimate and a confidence, and the
//! two are fused into the value the sampler consumes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, dot, TaskEmbedding};
use crate::error::{Error, Result};
use crate::tool_graph::{InvocationId, ToolId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PheromoneParams {
    pub rho: f64,
    pub alpha: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau0: f64,
    pub theta_sim: f64,
    pub n_min: usize,
    pub epsilon: f64,
    /// FIFO cap on memories per edge.
    pub bank_cap: usize,
}

impl Default for PheromoneParams {
    fn default() -> Self {
        Self {
            rho: 0.01,
            alpha: 1.0,
            tau_min: 0.05,
            tau_max: 5.0,
            tau0: 1.0,
            theta_sim: 0.5,
            n_min: 3,
            epsilon: 1e-8,
            bank_cap: 256,
        }
    }
}

impl PheromoneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("pheromone: {m}")));
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau0 && self.tau0 <= self.tau_max) {
            return bad("require 0 < tau_min <= tau0 <= tau_max");
        }
        // rho = 0 is allowed for the no-evaporation ablation.
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(0.0..=1.0).contains(&self.theta_sim) {
            return bad("theta_sim must lie in [0, 1]");
        }
        if self.n_min == 0 || self.bank_cap == 0 {
            return bad("n_min and bank_cap must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    #[inline]
    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.tau_min, self.tau_max)
    }
}

/// A pheromone-bearing edge.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Edge {
    Tool(ToolId, ToolId),
    Arg(InvocationId),
}

/// One deposition step on a single value.
pub fn deposit_value(old: f64, q: f64, params: &PheromoneParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::QualityOutOfRange(q));
    }
    Ok(params.clip((1.0 - params.rho) * old + params.alpha * q))
}

pub fn evaporate_value(old: f64, params: &PheromoneParams) -> f64 {
    params.clip((1.0 - params.rho) * old)
}

/// Task-agnostic pheromone values. Edges never written read as `tau0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PheromoneStore {
    tool: BTreeMap<(ToolId, ToolId), f64>,
    arg: BTreeMap<InvocationId, f64>,
}

impl PheromoneStore {
    pub fn get(&self, edge: Edge, params: &PheromoneParams) -> f64 {
        let v = match edge {
            Edge::Tool(a, b) => self.tool.get(&(a, b)),
            Edge::Arg(inv) => self.arg.get(&inv),
        };
        v.copied().unwrap_or(params.tau0)
    }

    pub fn is_stored(&self, edge: Edge) -> bool {
        match edge {
            Edge::Tool(a, b) => self.tool.contains_key(&(a, b)),
            Edge::Arg(inv) => self.arg.contains_key(&inv),
        }
    }

    pub fn deposit(&mut self, edge: Edge, q: f64, params: &PheromoneParams) -> Result<f64> {
        let slot = match edge {
            Edge::Tool(a, b) => self.tool.entry((a, b)).or_insert(params.tau0),
            Edge::Arg(inv) => self.arg.entry(inv).or_insert(params.tau0),
        };
        *slot = deposit_value(*slot, q, params)?;
        Ok(*slot)
    }

    pub fn evaporate_all(&mut self, params: &PheromoneParams) {
        self.evaporate_except(&BTreeSet::new(), params);
    }

    /// Decays every stored value except those in `touched`.
    pub fn evaporate_except(&mut self, touched: &BTreeSet<Edge>, params: &PheromoneParams) {
        for (&(a, b), v) in self.tool.iter_mut() {
            if !touched.contains(&Edge::Tool(a, b)) {
                *v = evaporate_value(*v, params);
            }
        }
        for (&inv, v) in self.arg.iter_mut() {
            if !touched.contains(&Edge::Arg(inv)) {
                *v = evaporate_value(*v, params);
            }
        }
    }

    pub fn tool_values(&self) -> impl Iterator<Item = ((ToolId, ToolId), f64)> + '_ {
        self.tool.iter().map(|(&k, &v)| (k, v))
    }

    pub fn arg_values(&self) -> impl Iterator<Item = (InvocationId, f64)> + '_ {
        self.arg.iter().map(|(&k, &v)| (k, v))
    }

    /// Number of tool-transition edges carrying pheromone statistics.
    pub fn tool_edge_count(&self) -> usize {
        self.tool.len()
    }

    pub fn arg_edge_count(&self) -> usize {
        self.arg.len()
    }

    pub(crate) fn set(&mut self, edge: Edge, value: f64) {
        match edge {
            Edge::Tool(a, b) => self.tool.insert((a, b), value),
            Edge::Arg(inv) => self.arg.insert(inv, value),
        };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub embedding: Arc<TaskEmbedding>,
    pub quality: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryBank {
    entries: VecDeque<BankEntry>,
}

impl MemoryBank {
    pub fn push(&mut self, entry: BankEntry, cap: usize) {
        while self.entries.len() >= cap {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryBanks {
    tool: BTreeMap<(ToolId, ToolId), MemoryBank>,
    arg: BTreeMap<InvocationId, MemoryBank>,
}

impl MemoryBanks {
    pub fn get(&self, edge: Edge) -> Option<&MemoryBank> {
        match edge {
            Edge::Tool(a, b) => self.tool.get(&(a, b)),
            Edge::Arg(inv) => self.arg.get(&inv),
        }
    }

    pub fn get_mut(&mut self, edge: Edge) -> &mut MemoryBank {
        match edge {
            Edge::Tool(a, b) => self.tool.entry((a, b)).or_default(),
            Edge::Arg(inv) => self.arg.entry(inv).or_default(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, &MemoryBank)> {
        self.tool
            .iter()
            .map(|(&(a, b), bank)| (Edge::Tool(a, b), bank))
            .chain(self.arg.iter().map(|(&inv, bank)| (Edge::Arg(inv), bank)))
    }

    pub fn total_entries(&self) -> usize {
        self.iter().map(|(_, b)| b.len()).sum()
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub similarity: f64,
    pub quality: f64,
}

/// Memories whose cosine similarity to `e_x` reaches `theta_sim`.
pub fn retrieve(bank: &MemoryBank, e_x: &TaskEmbedding, params: &PheromoneParams) -> Result<Vec<Retrieved>> {
    let mut out = Vec::new();
    for entry in bank.entries() {
        let similarity = cosine(e_x, &entry.embedding)?;
        if similarity >= params.theta_sim {
            out.push(Retrieved {
                similarity,
                quality: entry.quality,
            });
        }
    }
    Ok(out)
}

/// Similarity-weighted quality mapped onto `[tau0, tau_max]`.
pub fn task_dependent(retrieved: &[Retrieved], params: &PheromoneParams) -> f64 {
    if retrieved.is_empty() {
        return params.tau0;
    }
    let num: f64 = retrieved.iter().map(|r| r.similarity * r.quality).sum();
    let den: f64 = retrieved.iter().map(|r| r.similarity).sum::<f64>() + params.epsilon;
    params.tau0 + num / den * (params.tau_max - params.tau0)
}

/// `min(1, n / n_min) * s_max * mean(q)` over the retrieved set.
pub fn confidence(retrieved: &[Retrieved], params: &PheromoneParams) -> f64 {
    if retrieved.is_empty() {
        return 0.0;
    }
    let n = retrieved.len() as f64;
    let coverage = (n / params.n_min as f64).min(1.0);
    let s_max = retrieved
        .iter()
        .map(|r| r.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    let q_mean = retrieved.iter().map(|r| r.quality).sum::<f64>() / n;
    (coverage * s_max * q_mean).clamp(0.0, 1.0)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct FusedPheromone {
    pub value: f64,
    pub confidence: f64,
}

pub fn fuse(tau_agn: f64, tau_dep: f64, c: f64, w: f64, params: &PheromoneParams) -> FusedPheromone {
    let mix = w * c;
    FusedPheromone {
        value: params.clip((1.0 - mix) * tau_agn + mix * tau_dep),
        confidence: c.clamp(0.0, 1.0),
    }
}

/// Task-agnostic store plus memory banks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pheromones {
    pub store: PheromoneStore,
    pub banks: MemoryBanks,
}

impl Pheromones {
    /// Reinforces every distinct tool and invocation edge of a verified
    /// trajectory and appends `(e_x, q)` to each edge's bank. Returns the
    /// touched edges.
    pub fn record_success(
        &mut self,
        start: ToolId,
        trajectory: &[(ToolId, InvocationId)],
        e_x: &Arc<TaskEmbedding>,
        q: f64,
        params: &PheromoneParams,
    ) -> Result<BTreeSet<Edge>> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::QualityOutOfRange(q));
        }
        let mut edges = Vec::with_capacity(trajectory.len() * 2);
        let mut seen = BTreeSet::new();
        let mut prev = start;
        for &(tool, inv) in trajectory {
            for e in [Edge::Tool(prev, tool), Edge::Arg(inv)] {
                if seen.insert(e) {
                    edges.push(e);
                }
            }
            prev = tool;
        }
        for &e in &edges {
            self.store.deposit(e, q, params)?;
            self.banks.get_mut(e).push(
                BankEntry {
                    embedding: Arc::clone(e_x),
                    quality: q,
                },
                params.bank_cap,
            );
        }
        Ok(seen)
    }
}

/// Fused pheromone lookups for one task against a frozen snapshot.
///
/// Similarities are memoized per stored embedding and fused values per edge,
/// so repeated queries within a rollout group stay cheap.
pub struct FusionContext<'a> {
    pheromones: &'a Pheromones,
    params: &'a PheromoneParams,
    e_x: &'a TaskEmbedding,
    w: f64,
    sims: Mutex<HashMap<usize, f64>>,
    fused: Mutex<HashMap<Edge, FusedPheromone>>,
}

impl<'a> FusionContext<'a> {
    pub fn new(pheromones: &'a Pheromones, params: &'a PheromoneParams, e_x: &'a TaskEmbedding, w: f64) -> Self {
        Self {
            pheromones,
            params,
            e_x,
            w,
            sims: Mutex::new(HashMap::new()),
            fused: Mutex::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> &PheromoneParams {
        self.params
    }

    fn retrieve_cached(&self, bank: &MemoryBank) -> Vec<Retrieved> {
        let mut sims = self.sims.lock().expect("similarity cache");
        bank.entries()
            .filter_map(|entry| {
                let key = Arc::as_ptr(&entry.embedding) as usize;
                let similarity = *sims.entry(key).or_insert_with(|| {
                    dot(self.e_x.values(), entry.embedding.values()).clamp(-1.0, 1.0)
                });
                (similarity >= self.params.theta_sim).then_some(Retrieved {
                    similarity,
                    quality: entry.quality,
                })
            })
            .collect()
    }

    pub fn fused(&self, edge: Edge) -> FusedPheromone {
        if let Some(f) = self.fused.lock().expect("fusion cache").get(&edge) {
            return *f;
        }
        let agn = self.pheromones.store.get(edge, self.params);
        let f = match self.pheromones.banks.get(edge) {
            Some(bank) if self.w > 0.0 && !bank.is_empty() => {
                let retrieved = self.retrieve_cached(bank);
                let dep = task_dependent(&retrieved, self.params);
                let c = confidence(&retrieved, self.params);
                fuse(agn, dep, c, self.w, self.params)
            }
            _ => fuse(agn, self.params.tau0, 0.0, self.w, self.params),
        };
        self.fused.lock().expect("fusion cache").insert(edge, f);
        f
    }

    pub fn tool(&self, from: ToolId, to: ToolId) -> f64 {
        self.fused(Edge::Tool(from, to)).value
    }

    pub fn arg(&self, inv: InvocationId) -> f64 {
        self.fused(Edge::Arg(inv)).value
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankFile {
    /// `[from, to]` for tool edges, `[tool, pattern]` for invocation edges.
    pub edge: [u32; 2],
    /// `(embedding index, quality)` pairs, oldest first.
    pub entries: Vec<(usize, f64)>,
}

/// Serialized store and banks. Bank embeddings are interned by content into
/// a shared table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PheromoneFile {
    pub tool_pheromone: Vec<(u32, u32, f64)>,
    pub arg_pheromone: Vec<(u32, u32, f64)>,
    pub embeddings: Vec<TaskEmbedding>,
    pub tool_banks: Vec<BankFile>,
    pub arg_banks: Vec<BankFile>,
}

impl Pheromones {
    pub fn to_file(&self) -> PheromoneFile {
        let mut table: Vec<TaskEmbedding> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut intern = |e: &TaskEmbedding| -> usize {
            let key: Vec<u64> = e.values().iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                table.push(e.clone());
                table.len() - 1
            })
        };
        let mut tool_banks = Vec::new();
        let mut arg_banks = Vec::new();
        for (edge, bank) in self.banks.iter() {
            let entries = bank
                .entries()
                .map(|e| (intern(&e.embedding), e.quality))
                .collect();
            match edge {
                Edge::Tool(a, b) => tool_banks.push(BankFile { edge: [a.0, b.0], entries }),
                Edge::Arg(inv) => arg_banks.push(BankFile {
                    edge: [inv.tool.0, inv.pattern],
                    entries,
                }),
            }
        }
        PheromoneFile {
            tool_pheromone: self.store.tool_values().map(|((a, b), v)| (a.0, b.0, v)).collect(),
            arg_pheromone: self
                .store
                .arg_values()
                .map(|(inv, v)| (inv.tool.0, inv.pattern, v))
                .collect(),
            embeddings: table,
            tool_banks,
            arg_banks,
        }
    }

    pub fn from_file(file: PheromoneFile) -> Result<Self> {
        let mut p = Pheromones::default();
        for (a, b, v) in file.tool_pheromone {
            p.store.set(Edge::Tool(ToolId(a), ToolId(b)), v);
        }
        for (t, k, v) in file.arg_pheromone {
            p.store.set(Edge::Arg(InvocationId::new(ToolId(t), k)), v);
        }
        let table: Vec<Arc<TaskEmbedding>> = file.embeddings.into_iter().map(Arc::new).collect();
        let mut load = |edge: Edge, entries: Vec<(usize, f64)>| -> Result<()> {
            let bank = p.banks.get_mut(edge);
            for (i, quality) in entries {
                let embedding = table
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig(format!("bank references missing embedding {i}")))?;
                bank.entries.push_back(BankEntry { embedding, quality });
            }
            Ok(())
        };
        for b in file.tool_banks {
            load(Edge::Tool(ToolId(b.edge[0]), ToolId(b.edge[1])), b.entries)?;
        }
        for b in file.arg_banks {
            load(Edge::Arg(InvocationId::new(ToolId(b.edge[0]), b.edge[1])), b.entries)?;
        }
        Ok(p)
    }
}

//! Two-layer action space: base tools connected by transition edges, and
//! per-tool argument-invocation patterns reached through association edges.
//!
//! Real tools occupy ids `0..n_actions()`. A synthetic `<START>` tool is
//! always the last id; it anchors the first transition of every trajectory
//! and is never a selectable action.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::environment::CorpusRecord;
use crate::error::{Error, Result};

pub const START_TOOL: &str = "<START>";
pub const START_INVOCATION: &str = "<noop>";
pub const START_CATEGORY: &str = "<start>";
pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolId(pub u32);

impl ToolId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The `pattern`-th argument invocation of `tool`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InvocationId {
    pub tool: ToolId,
    pub pattern: u32,
}

impl InvocationId {
    pub fn new(tool: ToolId, pattern: u32) -> Self {
        Self { tool, pattern }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToolGraph {
    names: Vec<String>,
    categories: Vec<String>,
    invocation_sets: Vec<Vec<String>>,
    transition_edges: BTreeSet<(ToolId, ToolId)>,
    name_index: HashMap<String, ToolId>,
}

/// Collects tools in first-appearance order before the START tool is appended.
#[derive(Default)]
pub(crate) struct GraphBuilder {
    names: Vec<String>,
    categories: Vec<Option<String>>,
    invocation_sets: Vec<Vec<String>>,
    name_index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
    first_tools: BTreeSet<usize>,
}

impl GraphBuilder {
    pub(crate) fn tool(&mut self, name: &str) -> usize {
        if let Some(&i) = self.name_index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.categories.push(None);
        self.invocation_sets.push(Vec::new());
        self.name_index.insert(name.to_string(), i);
        i
    }

    pub(crate) fn invocation(&mut self, tool: usize, pattern: &str) -> usize {
        let set = &mut self.invocation_sets[tool];
        match set.iter().position(|p| p == pattern) {
            Some(k) => k,
            None => {
                set.push(pattern.to_string());
                set.len() - 1
            }
        }
    }

    pub(crate) fn category(&mut self, tool: usize, category: &str) -> Result<()> {
        match &self.categories[tool] {
            None => {
                self.categories[tool] = Some(category.to_string());
                Ok(())
            }
            Some(existing) if existing == category => Ok(()),
            Some(existing) => Err(Error::ConflictingCategory {
                tool: self.names[tool].clone(),
                first: existing.clone(),
                second: category.to_string(),
            }),
        }
    }

    pub(crate) fn edge(&mut self, from: usize, to: usize) {
        self.edges.insert((from, to));
    }

    pub(crate) fn first(&mut self, tool: usize) {
        self.first_tools.insert(tool);
    }

    pub(crate) fn finish(self) -> Result<ToolGraph> {
        let start = self.names.len();
        let mut names = self.names;
        let mut categories: Vec<String> = self
            .categories
            .into_iter()
            .zip(&names)
            .map(|(c, name)| c.unwrap_or_else(|| name_prefix(name).to_string()))
            .collect();
        let mut invocation_sets = self.invocation_sets;
        for (name, set) in names.iter().zip(&invocation_sets) {
            if set.is_empty() {
                return Err(Error::EmptyInvocationSet(name.clone()));
            }
        }
        names.push(START_TOOL.to_string());
        categories.push(START_CATEGORY.to_string());
        invocation_sets.push(vec![START_INVOCATION.to_string()]);

        let mut transition_edges: BTreeSet<(ToolId, ToolId)> = self
            .edges
            .into_iter()
            .map(|(a, b)| (ToolId(a as u32), ToolId(b as u32)))
            .collect();
        for f in self.first_tools {
            transition_edges.insert((ToolId(start as u32), ToolId(f as u32)));
        }
        Ok(ToolGraph::from_parts(names, categories, invocation_sets, transition_edges))
    }
}

/// Category fallback for tools without an explicit label: the name up to the
/// first underscore.
pub fn name_prefix(name: &str) -> &str {
    name.split('_').next().unwrap_or(name)
}

/// Builds the graph from raw corpus records.
///
/// Tools get ids in order of first appearance; every adjacent pair in a
/// reference becomes a transition edge, and START links to each first tool.
pub fn build_graph(records: &[CorpusRecord]) -> Result<ToolGraph> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut builder = GraphBuilder::default();
    for record in records {
        if record.reference.is_empty() {
            return Err(Error::BadStep {
                task_id: record.task_id.clone(),
                step: 0,
                message: "empty reference trajectory".into(),
            });
        }
        let mut prev: Option<usize> = None;
        for (step, s) in record.reference.iter().enumerate() {
            if s.tool.trim().is_empty() {
                return Err(Error::BadStep {
                    task_id: record.task_id.clone(),
                    step,
                    message: "empty tool name".into(),
                });
            }
            if s.tool == START_TOOL {
                return Err(Error::BadStep {
                    task_id: record.task_id.clone(),
                    step,
                    message: format!("`{START_TOOL}` is reserved"),
                });
            }
            let t = builder.tool(&s.tool);
            builder.invocation(t, &s.arg);
            match prev {
                None => builder.first(t),
                Some(p) => builder.edge(p, t),
            }
            prev = Some(t);
        }
    }
    for record in records {
        for (tool, category) in &record.category {
            if let Some(&t) = builder.name_index.get(tool.as_str()) {
                builder.category(t, category)?;
            }
        }
    }
    builder.finish()
}

impl ToolGraph {
    pub(crate) fn from_parts(
        names: Vec<String>,
        categories: Vec<String>,
        invocation_sets: Vec<Vec<String>>,
        transition_edges: BTreeSet<(ToolId, ToolId)>,
    ) -> Self {
        let name_index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), ToolId(i as u32)))
            .collect();
        Self {
            names,
            categories,
            invocation_sets,
            transition_edges,
            name_index,
        }
    }

    /// Number of tools including START.
    pub fn n_tools(&self) -> usize {
        self.names.len()
    }

    /// Number of selectable tools (START excluded).
    pub fn n_actions(&self) -> usize {
        self.names.len() - 1
    }

    pub fn start(&self) -> ToolId {
        ToolId((self.names.len() - 1) as u32)
    }

    pub fn contains(&self, tool: ToolId) -> bool {
        tool.index() < self.names.len()
    }

    fn check(&self, tool: ToolId) -> Result<()> {
        if self.contains(tool) {
            Ok(())
        } else {
            Err(Error::UnknownToolId(tool.0))
        }
    }

    pub fn tool_id(&self, name: &str) -> Result<ToolId> {
        self.name_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTool(name.to_string()))
    }

    pub fn name(&self, tool: ToolId) -> &str {
        &self.names[tool.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn category(&self, tool: ToolId) -> &str {
        &self.categories[tool.index()]
    }

    pub fn same_category(&self, a: ToolId, b: ToolId) -> bool {
        self.categories[a.index()] == self.categories[b.index()]
    }

    pub fn pattern(&self, inv: InvocationId) -> &str {
        &self.invocation_sets[inv.tool.index()][inv.pattern as usize]
    }

    pub fn invocation_count(&self, tool: ToolId) -> usize {
        self.invocation_sets[tool.index()].len()
    }

    pub fn is_valid_invocation(&self, inv: InvocationId) -> bool {
        self.contains(inv.tool) && (inv.pattern as usize) < self.invocation_count(inv.tool)
    }

    pub fn invocation_id(&self, tool: ToolId, pattern: &str) -> Option<InvocationId> {
        self.invocation_sets[tool.index()]
            .iter()
            .position(|p| p == pattern)
            .map(|k| InvocationId::new(tool, k as u32))
    }

    /// Tools reachable by one transition edge, ascending by id.
    pub fn successors(&self, tool: ToolId) -> Result<Vec<ToolId>> {
        self.check(tool)?;
        Ok(self
            .transition_edges
            .range((tool, ToolId(0))..=(tool, ToolId(u32::MAX)))
            .map(|&(_, to)| to)
            .collect())
    }

    /// The ordered invocation set of `tool`.
    pub fn invocations(&self, tool: ToolId) -> Result<Vec<InvocationId>> {
        self.check(tool)?;
        Ok((0..self.invocation_count(tool) as u32)
            .map(|k| InvocationId::new(tool, k))
            .collect())
    }

    pub fn transition_edges(&self) -> &BTreeSet<(ToolId, ToolId)> {
        &self.transition_edges
    }

    pub fn has_edge(&self, from: ToolId, to: ToolId) -> bool {
        self.transition_edges.contains(&(from, to))
    }

    /// Every (tool, invocation) association edge, tool-major.
    pub fn invocation_edges(&self) -> Vec<(ToolId, InvocationId)> {
        (0..self.n_tools() as u32)
            .map(ToolId)
            .flat_map(|t| {
                (0..self.invocation_count(t) as u32).map(move |k| (t, InvocationId::new(t, k)))
            })
            .collect()
    }

    /// Inserts a transition discovered during a rollout. Returns true if new.
    pub fn add_edge(&mut self, from: ToolId, to: ToolId) -> bool {
        self.transition_edges.insert((from, to))
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            version: GRAPH_FORMAT_VERSION,
            tools: self
                .names
                .iter()
                .zip(&self.categories)
                .zip(&self.invocation_sets)
                .map(|((name, category), invocations)| ToolEntry {
                    name: name.clone(),
                    category: category.clone(),
                    invocations: invocations.clone(),
                })
                .collect(),
            edges: self.transition_edges.iter().map(|&(a, b)| [a.0, b.0]).collect(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        if file.version != GRAPH_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: GRAPH_FORMAT_VERSION,
                found: file.version,
            });
        }
        match file.tools.last() {
            Some(t) if t.name == START_TOOL => {}
            _ => return Err(Error::InvalidConfig("graph file must end with the START tool".into())),
        }
        let n = file.tools.len() as u32;
        let mut edges = BTreeSet::new();
        for [a, b] in file.edges {
            if a >= n || b >= n {
                return Err(Error::UnknownToolId(a.max(b)));
            }
            edges.insert((ToolId(a), ToolId(b)));
        }
        let mut names = Vec::new();
        let mut categories = Vec::new();
        let mut sets = Vec::new();
        for t in file.tools {
            if t.invocations.is_empty() {
                return Err(Error::EmptyInvocationSet(t.name));
            }
            names.push(t.name);
            categories.push(t.category);
            sets.push(t.invocations);
        }
        Ok(Self::from_parts(names, categories, sets, edges))
    }

    /// Category labels keyed by tool name, START excluded.
    pub fn category_map(&self) -> BTreeMap<String, String> {
        self.names[..self.n_actions()]
            .iter()
            .cloned()
            .zip(self.categories.iter().cloned())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolEntry {
    pub name: String,
    pub category: String,
    pub invocations: Vec<String>,
}

/// On-disk graph checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub version: u32,
    pub tools: Vec<ToolEntry>,
    pub edges: Vec<[u32; 2]>,
}

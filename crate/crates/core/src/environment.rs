//! Episode corpus, seeded splits, synthetic task generation and the scripted
//! tool-output simulator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{fnv1a64, fnv1a64_extend};
use crate::error::{Error, Result};
use crate::tool_graph::{build_graph, GraphBuilder, InvocationId, ToolGraph, ToolId};

/// Completion marker terminating raw simulator output.
pub const END_MARKER: &str = "<<END>>";

/// Hard cap on trajectory length.
pub const MAX_HORIZON: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tool: String,
    pub arg: String,
}

/// One corpus line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub task_id: String,
    pub text: String,
    pub reference: Vec<StepRecord>,
    #[serde(default)]
    pub category: BTreeMap<String, String>,
}

/// A task resolved against a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub task_id: String,
    pub text: String,
    pub reference: Vec<(ToolId, InvocationId)>,
}

impl Episode {
    pub fn resolve(record: &CorpusRecord, graph: &ToolGraph) -> Result<Self> {
        if record.text.trim().is_empty() {
            return Err(Error::EmptyTaskText);
        }
        if record.reference.is_empty() {
            return Err(Error::BadStep {
                task_id: record.task_id.clone(),
                step: 0,
                message: "empty reference trajectory".into(),
            });
        }
        let mut reference = Vec::with_capacity(record.reference.len());
        for (step, s) in record.reference.iter().enumerate() {
            let bad = |message: String| Error::BadStep {
                task_id: record.task_id.clone(),
                step,
                message,
            };
            let tool = graph
                .tool_id(&s.tool)
                .ok()
                .filter(|&t| t != graph.start())
                .ok_or_else(|| bad(format!("unknown tool `{}`", s.tool)))?;
            let inv = graph
                .invocation_id(tool, &s.arg)
                .ok_or_else(|| bad(format!("unknown invocation `{}` for tool `{}`", s.arg, s.tool)))?;
            reference.push((tool, inv));
        }
        Ok(Self {
            task_id: record.task_id.clone(),
            text: record.text.clone(),
            reference,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn tools(&self) -> Vec<ToolId> {
        self.reference.iter().map(|&(t, _)| t).collect()
    }

    /// The episode with its reference cut to at most `horizon` steps.
    pub fn truncated(&self, horizon: usize) -> Episode {
        Episode {
            task_id: self.task_id.clone(),
            text: self.text.clone(),
            reference: self.reference[..self.reference.len().min(horizon.max(1))].to_vec(),
        }
    }

    pub fn to_record(&self, graph: &ToolGraph) -> CorpusRecord {
        let mut category = BTreeMap::new();
        let reference = self
            .reference
            .iter()
            .map(|&(t, inv)| {
                category.insert(graph.name(t).to_string(), graph.category(t).to_string());
                StepRecord {
                    tool: graph.name(t).to_string(),
                    arg: graph.pattern(inv).to_string(),
                }
            })
            .collect();
        CorpusRecord {
            task_id: self.task_id.clone(),
            text: self.text.clone(),
            reference,
            category,
        }
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL corpus and resolves it against the graph it induces.
pub fn load_corpus(path: &Path) -> Result<(ToolGraph, Vec<Episode>)> {
    let records = read_corpus(path)?;
    let graph = build_graph(&records)?;
    let episodes = records
        .iter()
        .map(|r| Episode::resolve(r, &graph))
        .collect::<Result<Vec<_>>>()?;
    Ok((graph, episodes))
}

/// Seeded shuffle followed by a `(train, val, test)` cut. Sizes are rounded
/// for train and validation; test takes the remainder.
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub error_rate: f64,
    pub cache_enabled: bool,
    pub seed: u64,
    /// Number of most recent steps folded into the call key.
    pub history_window: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            error_rate: 0.02,
            cache_enabled: true,
            seed: 0,
            history_window: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub output: String,
    pub is_error: bool,
    pub is_complete: bool,
}

/// Scripted stand-in for tool execution.
///
/// A call is keyed by a content hash over the tool variant, the task, the
/// truncated history, whether the history still follows the reference, and
/// the step index. Error injection and completion are functions of that key
/// and the seed only, so caching never changes results.
#[derive(Debug, Default)]
pub struct Simulator {
    cfg: SimulatorConfig,
    cache: Mutex<HashMap<u64, SimResult>>,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl Simulator {
    pub fn new(cfg: SimulatorConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.error_rate) {
            return Err(Error::InvalidConfig("simulator error_rate must lie in [0, 1]".into()));
        }
        Ok(Self {
            cfg,
            ..Default::default()
        })
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.cfg
    }

    /// Executes `(tool, invocation)` after `history` (the steps already
    /// executed in this episode).
    pub fn simulate(
        &self,
        graph: &ToolGraph,
        episode: &Episode,
        history: &[(ToolId, InvocationId)],
        tool: ToolId,
        invocation: InvocationId,
    ) -> Result<SimResult> {
        if tool == graph.start() || !graph.contains(tool) {
            return Err(Error::UnknownToolId(tool.0));
        }
        if invocation.tool != tool || !graph.is_valid_invocation(invocation) {
            return Err(Error::InvalidConfig(format!(
                "invocation {}/{} does not belong to tool `{}`",
                invocation.tool.0,
                invocation.pattern,
                graph.name(tool)
            )));
        }
        let step = history.len();
        let on_track = step < episode.len() && history == &episode.reference[..step];
        let key = self.call_key(graph, episode, history, tool, invocation, on_track);
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.cfg.cache_enabled {
            if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit.clone());
            }
        }
        let result = self.execute(graph, episode, step, tool, invocation, on_track, key);
        if self.cfg.cache_enabled {
            self.cache.lock().expect("cache lock").insert(key, result.clone());
        }
        Ok(result)
    }

    fn call_key(
        &self,
        graph: &ToolGraph,
        episode: &Episode,
        history: &[(ToolId, InvocationId)],
        tool: ToolId,
        invocation: InvocationId,
        on_track: bool,
    ) -> u64 {
        let mut h = fnv1a64(graph.name(tool).as_bytes());
        h = fnv1a64_extend(h, &[0xff]);
        h = fnv1a64_extend(h, graph.pattern(invocation).as_bytes());
        h = fnv1a64_extend(h, &[0xff]);
        h = fnv1a64_extend(h, episode.task_id.as_bytes());
        // Truncated episodes share a task id but finish at a different step.
        h = fnv1a64_extend(h, &(episode.len() as u64).to_le_bytes());
        let recent = &history[history.len().saturating_sub(self.cfg.history_window)..];
        for &(t, inv) in recent {
            h = fnv1a64_extend(h, &[0xfe]);
            h = fnv1a64_extend(h, graph.name(t).as_bytes());
            h = fnv1a64_extend(h, &[0xff]);
            h = fnv1a64_extend(h, graph.pattern(inv).as_bytes());
        }
        h = fnv1a64_extend(h, &[0xfd, on_track as u8]);
        fnv1a64_extend(h, &(history.len() as u64).to_le_bytes())
    }

    #[allow(clippy::too_many_arguments)]
    fn execute(
        &self,
        graph: &ToolGraph,
        episode: &Episode,
        step: usize,
        tool: ToolId,
        invocation: InvocationId,
        on_track: bool,
        key: u64,
    ) -> SimResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ key.rotate_left(17));
        let is_error = self.cfg.error_rate > 0.0 && rng.gen::<f64>() < self.cfg.error_rate;
        let finishes = on_track && step + 1 == episode.len() && episode.reference[step] == (tool, invocation);
        let mut raw = if is_error {
            format!(
                "error: {}({}) failed at step {} of task {}",
                graph.name(tool),
                graph.pattern(invocation),
                step + 1,
                episode.task_id
            )
        } else {
            format!(
                "ok: {}({}) returned result for task {} at step {}",
                graph.name(tool),
                graph.pattern(invocation),
                episode.task_id,
                step + 1
            )
        };
        if finishes && !is_error {
            raw.push('\n');
            raw.push_str(END_MARKER);
        }
        parse_output(&raw, is_error)
    }

    /// Number of `simulate` calls and how many were served from the cache.
    pub fn call_counts(&self) -> (u64, u64) {
        (self.calls.load(Ordering::Relaxed), self.hits.load(Ordering::Relaxed))
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let cache = self.cache.lock().expect("cache lock");
        let map: BTreeMap<String, &SimResult> = cache.iter().map(|(k, v)| (format!("{k:016x}"), v)).collect();
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &map)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_cache(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<String, SimResult> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let mut cache = self.cache.lock().expect("cache lock");
        for (k, v) in map {
            let key = u64::from_str_radix(&k, 16)
                .map_err(|e| Error::InvalidConfig(format!("bad cache key `{k}`: {e}")))?;
            cache.insert(key, v);
        }
        Ok(())
    }
}

/// Splits raw simulator text into output and completion flag. The marker
/// counts only when it is the final line.
pub fn parse_output(raw: &str, is_error: bool) -> SimResult {
    match raw.rsplit_once('\n') {
        Some((body, last)) if last.trim() == END_MARKER => SimResult {
            output: body.to_string(),
            is_error,
            is_complete: true,
        },
        _ if raw.trim() == END_MARKER => SimResult {
            output: String::new(),
            is_error,
            is_complete: true,
        },
        _ => SimResult {
            output: raw.to_string(),
            is_error,
            is_complete: false,
        },
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const CATEGORY_NAMES: [&str; 12] = [
    "web", "file", "code", "data", "mail", "calendar", "search", "db", "image", "shell", "chat", "map",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_tools: usize,
    pub n_categories: usize,
    pub patterns_per_tool: usize,
    pub n_episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Successors per tool in the generated transition structure.
    pub out_degree: usize,
    /// Tools a walk may start from.
    pub n_entry_tools: usize,
    /// Ratio between the probabilities of consecutively ranked choices
    /// (successors, entry tools and invocation patterns); 0 makes every walk
    /// follow the top-ranked choice, 1 makes choices uniform.
    pub skew: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tools: 50,
            n_categories: 8,
            patterns_per_tool: 3,
            n_episodes: 200,
            horizon: MAX_HORIZON,
            seed: 0,
            out_degree: 4,
            n_entry_tools: 3,
            skew: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic corpus: {m}")));
        if self.n_tools == 0
            || self.n_categories == 0
            || self.patterns_per_tool == 0
            || self.n_episodes == 0
            || self.horizon == 0
            || self.n_entry_tools == 0
        {
            return bad("all counts must be positive");
        }
        if self.horizon > MAX_HORIZON {
            return bad("horizon exceeds the maximum of 20");
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return bad("skew must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub graph: ToolGraph,
    pub episodes: Vec<Episode>,
}

impl SyntheticCorpus {
    pub fn records(&self) -> Vec<CorpusRecord> {
        self.episodes.iter().map(|e| e.to_record(&self.graph)).collect()
    }
}

pub fn category_name(i: usize) -> String {
    let base = CATEGORY_NAMES[i % CATEGORY_NAMES.len()];
    match i / CATEGORY_NAMES.len() {
        0 => base.to_string(),
        round => format!("{base}{round}"),
    }
}

/// Geometric weights `skew^rank` over `n` ranked choices.
fn ranked_weights(n: usize, skew: f64) -> Vec<f64> {
    (0..n).map(|k| if k == 0 { 1.0 } else { skew.powi(k as i32) }).collect()
}

fn draw<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generates a sparse random transition structure and episodes whose
/// references are random walks over it.
///
/// Every tool gets `out_degree` random successors ranked by a geometric
/// `skew`, a preferred ranking of its invocation patterns, and walks start
/// from one of `n_entry_tools` ranked entry tools. Walk lengths are uniform
/// in `[ceil(horizon / 2), horizon]`. Task text lists the reference tools, so
/// tasks sharing subchains share tokens.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = GraphBuilder::default();
    let names: Vec<String> = (0..cfg.n_tools)
        .map(|i| format!("{}_{}", category_name(i % cfg.n_categories), i))
        .collect();
    for (i, name) in names.iter().enumerate() {
        let t = b.tool(name);
        b.category(t, &category_name(i % cfg.n_categories))?;
        for k in 0..cfg.patterns_per_tool {
            b.invocation(t, &format!("pattern_{k}"));
        }
    }
    let degree = cfg.out_degree.min(cfg.n_tools.saturating_sub(1));
    let mut succ: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_tools);
    let mut patterns: Vec<Vec<u32>> = Vec::with_capacity(cfg.n_tools);
    for i in 0..cfg.n_tools {
        let mut others: Vec<usize> = (0..cfg.n_tools).filter(|&j| j != i).collect();
        others.shuffle(&mut rng);
        others.truncate(degree);
        for &j in &others {
            b.edge(i, j);
        }
        succ.push(others);
        let mut p: Vec<u32> = (0..cfg.patterns_per_tool as u32).collect();
        p.shuffle(&mut rng);
        patterns.push(p);
    }
    let mut entries: Vec<usize> = (0..cfg.n_tools).collect();
    entries.shuffle(&mut rng);
    entries.truncate(cfg.n_entry_tools.min(cfg.n_tools));

    let succ_w = ranked_weights(degree, cfg.skew);
    let pattern_w = ranked_weights(cfg.patterns_per_tool, cfg.skew);
    let entry_w = ranked_weights(entries.len(), cfg.skew);
    let min_len = cfg.horizon.div_ceil(2);
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let mut firsts = BTreeSet::new();
    for idx in 0..cfg.n_episodes {
        let len = rng.gen_range(min_len..=cfg.horizon);
        let mut cur = entries[draw(&mut rng, &entry_w)];
        let mut steps = Vec::with_capacity(len);
        loop {
            steps.push((cur, patterns[cur][draw(&mut rng, &pattern_w)]));
            if steps.len() == len || succ[cur].is_empty() {
                break;
            }
            cur = succ[cur][draw(&mut rng, &succ_w)];
        }
        firsts.insert(steps[0].0);
        let text = steps.iter().map(|&(t, _)| names[t].as_str()).collect::<Vec<_>>().join(" ");
        episodes.push((format!("syn-{idx:04}"), text, steps));
    }
    for f in firsts {
        b.first(f);
    }
    let graph = b.finish()?;
    let episodes = episodes
        .into_iter()
        .map(|(task_id, text, steps)| Episode {
            task_id,
            text,
            reference: steps
                .into_iter()
                .map(|(t, k)| (ToolId(t as u32), InvocationId::new(ToolId(t as u32), k)))
                .collect(),
        })
        .collect();
    Ok(SyntheticCorpus { graph, episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small() -> SyntheticCorpus {
        generate_synthetic(&SynthConfig {
            n_tools: 12,
            n_episodes: 30,
            horizon: 6,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn full_reference_completes() {
        let c = small();
        let sim = Simulator::new(SimulatorConfig { error_rate: 0.0, ..Default::default() }).unwrap();
        for ep in &c.episodes {
            let mut hist = Vec::new();
            for (i, &(t, inv)) in ep.reference.iter().enumerate() {
                let r = sim.simulate(&c.graph, ep, &hist, t, inv).unwrap();
                assert!(!r.is_error);
                assert_eq!(r.is_complete, i + 1 == ep.len());
                assert!(!r.output.contains(END_MARKER));
                hist.push((t, inv));
            }
        }
    }

    #[test]
    fn truncation_does_not_share_cached_completion() {
        let c = small();
        let sim = Simulator::new(SimulatorConfig { error_rate: 0.0, ..Default::default() }).unwrap();
        let ep = c.episodes.iter().find(|e| e.len() >= 3).unwrap();
        let short = ep.truncated(2);
        let (t0, i0) = ep.reference[0];
        let (t1, i1) = ep.reference[1];
        assert!(!sim.simulate(&c.graph, ep, &[(t0, i0)], t1, i1).unwrap().is_complete);
        assert!(sim.simulate(&c.graph, &short, &[(t0, i0)], t1, i1).unwrap().is_complete);
        assert!(!sim.simulate(&c.graph, ep, &[(t0, i0)], t1, i1).unwrap().is_complete);
    }

    #[test]
    fn completion_is_monotone_after_divergence() {
        let c = small();
        let sim = Simulator::new(SimulatorConfig { error_rate: 0.0, ..Default::default() }).unwrap();
        let ep = c.episodes.iter().find(|e| e.len() >= 3).unwrap();
        let (t0, _) = ep.reference[0];
        let wrong = InvocationId::new(t0, (ep.reference[0].1.pattern + 1) % 3);
        let mut hist = vec![(t0, wrong)];
        for &(t, inv) in &ep.reference[1..] {
            assert!(!sim.simulate(&c.graph, ep, &hist, t, inv).unwrap().is_complete);
            hist.push((t, inv));
        }
        // Continuing past the reference length never completes either.
        let mut hist = ep.reference.clone();
        let (t, inv) = ep.reference[0];
        assert!(!sim.simulate(&c.graph, ep, &hist, t, inv).unwrap().is_complete);
        hist.push((t, inv));
    }

    #[test]
    fn zero_error_rate_never_errors_and_results_are_deterministic() {
        let c = small();
        let a = Simulator::new(SimulatorConfig { error_rate: 0.0, ..Default::default() }).unwrap();
        let ep = &c.episodes[0];
        for t in 0..c.graph.n_actions() as u32 {
            let inv = InvocationId::new(ToolId(t), 0);
            assert!(!a.simulate(&c.graph, ep, &[], ToolId(t), inv).unwrap().is_error);
        }
        let cfg = SimulatorConfig { error_rate: 0.5, seed: 3, ..Default::default() };
        let cached = Simulator::new(cfg.clone()).unwrap();
        let uncached = Simulator::new(SimulatorConfig { cache_enabled: false, ..cfg }).unwrap();
        let mut errors = 0;
        for _ in 0..2 {
            for t in 0..c.graph.n_actions() as u32 {
                let inv = InvocationId::new(ToolId(t), 1);
                let x = cached.simulate(&c.graph, ep, &ep.reference[..1], ToolId(t), inv).unwrap();
                let y = uncached.simulate(&c.graph, ep, &ep.reference[..1], ToolId(t), inv).unwrap();
                assert_eq!(x, y);
                errors += x.is_error as usize;
            }
        }
        assert!(errors > 0);
        let (calls, hits) = cached.call_counts();
        assert_eq!(calls, 2 * c.graph.n_actions() as u64);
        assert_eq!(hits, c.graph.n_actions() as u64);
        assert_eq!(uncached.call_counts().1, 0);
    }

    #[test]
    fn simulate_rejects_invalid_calls() {
        let c = small();
        let sim = Simulator::new(SimulatorConfig::default()).unwrap();
        let ep = &c.episodes[0];
        let s = c.graph.start();
        assert!(sim.simulate(&c.graph, ep, &[], s, InvocationId::new(s, 0)).is_err());
        assert!(sim.simulate(&c.graph, ep, &[], ToolId(0), InvocationId::new(ToolId(0), 9)).is_err());
        assert!(sim.simulate(&c.graph, ep, &[], ToolId(0), InvocationId::new(ToolId(1), 0)).is_err());
    }

    #[test]
    fn marker_parsing() {
        let r = parse_output("ok\n<<END>>", false);
        assert_eq!(r, SimResult { output: "ok".into(), is_error: false, is_complete: true });
        let r = parse_output("mentions <<END>> inline", false);
        assert!(!r.is_complete);
        assert!(parse_output("<<END>>", false).is_complete);
    }

    #[test]
    fn cache_file_round_trip() {
        let c = small();
        let sim = Simulator::new(SimulatorConfig::default()).unwrap();
        let ep = &c.episodes[0];
        let (t, inv) = ep.reference[0];
        let first = sim.simulate(&c.graph, ep, &[], t, inv).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("cache.json");
        sim.save_cache(&path).unwrap();
        let fresh = Simulator::new(SimulatorConfig::default()).unwrap();
        fresh.load_cache(&path).unwrap();
        assert_eq!(fresh.simulate(&c.graph, ep, &[], t, inv).unwrap(), first);
        assert_eq!(fresh.call_counts(), (1, 1));
    }

    #[test]
    fn generator_is_deterministic_and_executable() {
        let cfg = SynthConfig { seed: 11, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.episodes.len(), 200);
        for ep in &a.episodes {
            assert!(ep.len() >= 10 && ep.len() <= 20);
            assert!(a.graph.has_edge(a.graph.start(), ep.reference[0].0));
            for w in ep.reference.windows(2) {
                assert!(a.graph.has_edge(w[0].0, w[1].0));
            }
            for &(t, inv) in &ep.reference {
                assert_eq!(inv.tool, t);
                assert!(a.graph.is_valid_invocation(inv));
            }
        }
    }

    #[test]
    fn horizon_one_gives_single_steps() {
        let c = generate_synthetic(&SynthConfig { horizon: 1, ..Default::default() }).unwrap();
        assert!(c.episodes.iter().all(|e| e.len() == 1));
        assert!(generate_synthetic(&SynthConfig { horizon: 21, ..Default::default() }).is_err());
        assert!(generate_synthetic(&SynthConfig { n_tools: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn generated_corpus_survives_build_graph() {
        let c = small();
        let records = c.records();
        let rebuilt = build_graph(&records).unwrap();
        for ep in &c.episodes {
            let names: Vec<&str> = ep.reference.iter().map(|&(t, _)| c.graph.name(t)).collect();
            for w in names.windows(2) {
                assert!(rebuilt.has_edge(rebuilt.tool_id(w[0]).unwrap(), rebuilt.tool_id(w[1]).unwrap()));
            }
            let resolved = Episode::resolve(&ep.to_record(&c.graph), &rebuilt).unwrap();
            assert_eq!(resolved.len(), ep.len());
        }
        for (name, cat) in rebuilt.category_map() {
            assert_eq!(crate::tool_graph::name_prefix(&name), cat);
        }
    }

    #[test]
    fn corpus_io_and_line_numbers() {
        let c = small();
        let dir = tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &c.records()).unwrap();
        let (g, eps) = load_corpus(&path).unwrap();
        assert_eq!(eps.len(), c.episodes.len());
        assert_eq!(eps, load_corpus(&path).unwrap().1);
        assert_eq!(g, build_graph(&c.records()).unwrap());

        let bad = dir.path().join("bad.jsonl");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        std::fs::write(&bad, text).unwrap();
        let err = load_corpus(&bad).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line, .. } if line == c.episodes.len() + 1), "{err}");
    }

    #[test]
    fn split_sizes_and_partition() {
        let items: Vec<u32> = (0..100).collect();
        let (tr, va, te) = split(&items, [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        assert_eq!(split(&items, [0.8, 0.1, 0.1], 9).unwrap(), (tr.clone(), va.clone(), te.clone()));
        let mut all: Vec<u32> = tr.into_iter().chain(va).chain(te).collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert!(split(&items, [0.5, 0.1, 0.1], 9).is_err());
    }

    #[test]
    fn resolve_reports_offending_step() {
        let c = small();
        let mut r = c.episodes[0].to_record(&c.graph);
        r.reference[0].arg = "nope".into();
        let err = Episode::resolve(&r, &c.graph).unwrap_err();
        assert!(err.to_string().contains("step 0"), "{err}");
    }
}

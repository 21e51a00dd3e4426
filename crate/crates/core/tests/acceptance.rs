//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed, including under `cargo test`.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use phgpo_core::config::{BetaSchedule, CorpusSource, RunConfig};
use phgpo_core::environment::{generate_synthetic, write_corpus, CorpusRecord, SimResult, StepRecord, SynthConfig};
use phgpo_core::metrics::{mean_first_success, Heatmap};
use phgpo_core::pheromone::{deposit_value, fuse, Edge, PheromoneParams, PheromoneStore};
use phgpo_core::policy::{LinearPolicy, State};
use phgpo_core::rewards::{intent_reward, score_episode, exec_reward, OutcomeConfig, StepReward};
use phgpo_core::sampling::{guided_distribution, sample_index, SamplerConfig};
use phgpo_core::tool_graph::{build_graph, InvocationId, ToolId, START_TOOL};
use phgpo_core::trainer::{
    advantages, mixed_loss_and_grad, rollout, EpochMetrics, RolloutEnv, RolloutGroup, RolloutMode, Trainer,
};
use phgpo_core::config::AdvantageMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("sampler closed form", sampler_closed_form),
        ("pheromone dynamics", pheromone_dynamics),
        ("fusion ablation identities", fusion_identities),
        ("advantage oracles", advantage_oracles),
        ("gradient checks", gradient_checks),
        ("reward arithmetic", reward_arithmetic),
        ("trend reproduction", trend_reproduction),
        ("pheromone concentration", pheromone_concentration),
        ("degeneracy regression", degeneracy_regression),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {status} {name} ({:.1}s): {}",
            t0.elapsed().as_secs_f64(),
            v.detail
        );
        std::io::stdout().flush().ok();
        if !v.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

// ---------------------------------------------------------------------------
// 1. Sampler
// ---------------------------------------------------------------------------

fn sampler_closed_form() -> Verdict {
    const INSTANCES: usize = 1000;
    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = PheromoneParams::default();
    let mut worst_norm = 0.0f64;
    let mut worst_closed = 0.0f64;
    let mut outside = 0usize;
    for _ in 0..INSTANCES {
        let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let tau: Vec<f64> = (0..5).map(|_| rng.gen_range(params.tau_min..=params.tau_max)).collect();
        let beta = rng.gen_range(0.0..3.0);
        let cfg = SamplerConfig {
            top_k: 5,
            temperature: rng.gen_range(0.3..1.5),
            epsilon_greedy: 0.0,
            beta_max: 0.8,
        };
        let prior = |a: ToolId| tau[a.index()];
        let dist = guided_distribution(&logits, Some(&prior), beta, &cfg).unwrap();
        worst_norm = worst_norm.max((dist.probs.iter().sum::<f64>() - 1.0).abs());

        // Independent closed form: softmax(log pi / T + beta log tau).
        let lse = logits.iter().map(|z| z.exp()).sum::<f64>().ln();
        let scores: Vec<f64> = (0..5)
            .map(|i| ((logits[i] - lse) / cfg.temperature + beta * tau[i].ln()).exp())
            .collect();
        let total: f64 = scores.iter().sum();
        let expected: Vec<f64> = scores.iter().map(|s| s / total).collect();
        for (i, p) in expected.iter().enumerate() {
            worst_closed = worst_closed.max((dist.prob_of(ToolId(i as u32)) - p).abs());
        }

        let mut counts = [0usize; 5];
        for _ in 0..DRAWS {
            counts[dist.tools[sample_index(&dist.probs, &mut rng)].index()] += 1;
        }
        for i in 0..5 {
            let p = expected[i];
            let sigma = (p * (1.0 - p) / DRAWS as f64).sqrt();
            if (counts[i] as f64 / DRAWS as f64 - p).abs() > 3.0 * sigma {
                outside += 1;
            }
        }
    }
    // Each marginal lies outside 3 sigma with probability ~0.27% under the
    // null, so a handful of the 5000 checks are expected to; allow 1%.
    let checks = INSTANCES * 5;
    let rate = outside as f64 / checks as f64;
    let pass = worst_norm <= 1e-12 && worst_closed <= 1e-12 && rate <= 0.01;
    verdict(
        pass,
        format!(
            "normalization err {worst_norm:.1e}, closed-form err {worst_closed:.1e}, {outside}/{checks} marginals outside 3 sigma ({:.2}%)",
            100.0 * rate
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Pheromone dynamics
// ---------------------------------------------------------------------------

fn pheromone_dynamics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_fixed = 0.0f64;
    for _ in 0..200 {
        let p = PheromoneParams {
            rho: rng.gen_range(0.01..0.5),
            alpha: rng.gen_range(0.01..2.0),
            ..PheromoneParams::default()
        };
        let q = rng.gen_range(0.0..=1.0);
        let mut v = rng.gen_range(p.tau_min..=p.tau_max);
        for _ in 0..5000 {
            v = deposit_value(v, q, &p).unwrap();
        }
        let target = p.clip(p.alpha * q / p.rho);
        worst_fixed = worst_fixed.max((v - target).abs());
    }

    let p = PheromoneParams::default();
    let mut store = PheromoneStore::default();
    let mut out_of_range = 0usize;
    for _ in 0..1_000_000 {
        let a = ToolId(rng.gen_range(0..20));
        let b = ToolId(rng.gen_range(0..20));
        let edge = if rng.gen_bool(0.5) {
            Edge::Tool(a, b)
        } else {
            Edge::Arg(InvocationId::new(a, rng.gen_range(0..3)))
        };
        if rng.gen_range(0..100) == 0 {
            store.evaporate_all(&p);
            continue;
        }
        let v = store.deposit(edge, rng.gen_range(0.0..=1.0), &p).unwrap();
        if !(p.tau_min..=p.tau_max).contains(&v) {
            out_of_range += 1;
        }
    }
    store.evaporate_all(&p);
    let stored_bad = store
        .tool_values()
        .map(|(_, v)| v)
        .chain(store.arg_values().map(|(_, v)| v))
        .filter(|v| !(p.tau_min..=p.tau_max).contains(v))
        .count();
    let pass = worst_fixed <= 1e-6 && out_of_range == 0 && stored_bad == 0;
    verdict(
        pass,
        format!("fixed-point err {worst_fixed:.1e}, {out_of_range} unclipped results in 1e6 ops, {stored_bad} stored values out of range"),
    )
}

// ---------------------------------------------------------------------------
// 3. Fusion identities
// ---------------------------------------------------------------------------

fn fusion_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = PheromoneParams::default();
    let mut fusion_bad = 0;
    for _ in 0..10_000 {
        let agn = rng.gen_range(p.tau_min..=p.tau_max);
        let dep = rng.gen_range(p.tau_min..=p.tau_max);
        let c = rng.gen_range(0.0..=1.0);
        let w = rng.gen_range(0.0..=1.0);
        if fuse(agn, dep, 0.0, w, &p).value != agn || fuse(agn, dep, c, 0.0, &p).value != agn {
            fusion_bad += 1;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..12);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let tau: Vec<f64> = (0..n).map(|_| rng.gen_range(p.tau_min..=p.tau_max)).collect();
        let cfg = SamplerConfig {
            top_k: n,
            temperature: rng.gen_range(0.2..2.0),
            epsilon_greedy: 0.0,
            beta_max: 0.8,
        };
        let prior = |a: ToolId| tau[a.index()];
        let guided = guided_distribution(&logits, Some(&prior), 0.0, &cfg).unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| ((z - m) / cfg.temperature).exp()).collect();
        let total: f64 = e.iter().sum();
        for (i, v) in e.iter().enumerate() {
            worst = worst.max((guided.prob_of(ToolId(i as u32)) - v / total).abs());
        }
    }
    verdict(
        fusion_bad == 0 && worst <= 1e-12,
        format!("{fusion_bad} fusion mismatches at c=0 or w=0; beta=0 vs temperature softmax max err {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 4. Advantages
// ---------------------------------------------------------------------------

fn advantage_oracles() -> Verdict {
    let g = advantages(&[1.0, 2.0, 3.0], AdvantageMode::Grpo, 1e-8).unwrap();
    let r = advantages(&[1.0, 2.0, 3.0], AdvantageMode::Rloo, 1e-8).unwrap();
    let k = 1.5f64.sqrt();
    let grpo_ok = g.iter().zip([-k, 0.0, k]).all(|(a, b)| (a - b).abs() <= 1e-4);
    let rloo_ok = r == vec![-1.5, 0.0, 1.5];
    let flat_ok = [AdvantageMode::Grpo, AdvantageMode::Rloo].iter().all(|&m| {
        advantages(&[0.7; 5], m, 1e-8).unwrap().iter().all(|&a| a == 0.0)
    });
    verdict(
        grpo_ok && rloo_ok && flat_ok,
        format!("grpo {g:.4?}, rloo {r:?}, identical returns -> zero: {flat_ok}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Gradient checks
// ---------------------------------------------------------------------------

fn random_policy(rng: &mut ChaCha8Rng, n_tools: usize, n_actions: usize, n_buckets: usize, scale: f64) -> LinearPolicy {
    let mut p = LinearPolicy::new(n_tools, n_actions, n_buckets).unwrap();
    for w in p.weights_mut() {
        *w = rng.gen_range(-scale..scale);
    }
    p
}

fn random_state(rng: &mut ChaCha8Rng, n_tools: usize, n_buckets: usize) -> State {
    State {
        bucket: rng.gen_range(0..n_buckets),
        last: ToolId(rng.gen_range(0..n_tools) as u32),
        prev: ToolId(rng.gen_range(0..n_tools) as u32),
    }
}

/// Relative error between an analytic gradient and central differences of
/// `f` around the policy's weights.
fn fd_error(policy: &LinearPolicy, analytic: &[f64], f: &dyn Fn(&LinearPolicy) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut p = policy.clone();
    let (mut diff, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..analytic.len() {
        let w = p.weights()[i];
        p.weights_mut()[i] = w + H;
        let up = f(&p);
        p.weights_mut()[i] = w - H;
        let down = f(&p);
        p.weights_mut()[i] = w;
        let numeric = (up - down) / (2.0 * H);
        diff += (numeric - analytic[i]).powi(2);
        norm_a += analytic[i].powi(2);
        norm_n += numeric.powi(2);
    }
    let scale = norm_a.sqrt().max(norm_n.sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Keeps the clipped surrogate away from its kinks, where central
/// differences straddle two branches.
fn near_clip_kink(ratio: f64, clip_eps: f64) -> bool {
    (ratio - (1.0 - clip_eps)).abs() < 1e-3 || (ratio - (1.0 + clip_eps)).abs() < 1e-3
}

fn gradient_checks() -> Verdict {
    const N: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (nt, na, nb) = (7, 6, 4);
    let mut worst = [0.0f64; 4];

    for _ in 0..N {
        let pol = random_policy(&mut rng, nt, na, nb, 1.0);
        let s = random_state(&mut rng, nt, nb);
        let target = ToolId(rng.gen_range(0..na) as u32);
        let (_, g) = pol.sl_loss_and_grad(&s, target).unwrap();
        let e = fd_error(&pol, g.values(), &|p| p.sl_loss_and_grad(&s, target).unwrap().0);
        worst[0] = worst[0].max(e);

        let (_, g) = pol.entropy_and_grad(&s).unwrap();
        let e = fd_error(&pol, g.values(), &|p| p.entropy_and_grad(&s).unwrap().0);
        worst[2] = worst[2].max(e);
    }

    let mut pg_done = 0;
    while pg_done < N {
        let pol = random_policy(&mut rng, nt, na, nb, 1.0);
        let s = random_state(&mut rng, nt, nb);
        let a = ToolId(rng.gen_range(0..na) as u32);
        let lp = pol.log_probs(&s).unwrap()[a.index()];
        let old = lp + rng.gen_range(-0.4..0.4);
        let adv = rng.gen_range(-2.0..2.0);
        if near_clip_kink((lp - old).exp(), 0.2) {
            continue;
        }
        let (_, g) = pol.pg_loss_and_grad(&s, a, old, adv, 0.2).unwrap();
        let e = fd_error(&pol, g.values(), &|p| p.pg_loss_and_grad(&s, a, old, adv, 0.2).unwrap().0);
        worst[1] = worst[1].max(e);
        pg_done += 1;
    }

    // Mixed objective on rollouts from a small generated corpus.
    let mut cfg = RunConfig::default();
    cfg.corpus = CorpusSource::Synthetic(SynthConfig {
        n_tools: 8,
        n_episodes: 20,
        horizon: 6,
        ..Default::default()
    });
    cfg.trainer.n_buckets = 4;
    cfg.trainer.entropy_coef = 0.1;
    let trainer = Trainer::new(cfg).unwrap();
    let env = RolloutEnv {
        graph: &trainer.graph,
        simulator: trainer.simulator(),
        sampler: &trainer.config.sampler,
        outcome: &trainer.config.outcome,
    };
    let n_tools = trainer.graph.n_tools();
    let n_actions = trainer.graph.n_actions();
    let mut mixed_done = 0;
    while mixed_done < N {
        let behavior = random_policy(&mut rng, n_tools, n_actions, 4, 1.0);
        let task = &trainer.train[rng.gen_range(0..trainer.train.len())];
        let p_tf = rng.gen_range(0.0..1.0);
        let rollouts = (0..3)
            .map(|_| rollout(&behavior, None, &env, task, 0.0, RolloutMode::Sample { p_tf }, &mut rng).unwrap())
            .collect();
        let group = RolloutGroup {
            task_id: task.episode.task_id.clone(),
            rollouts,
        };
        let mut current = behavior.clone();
        for w in current.weights_mut() {
            *w += rng.gen_range(-0.15..0.15);
        }
        let kink = group.rollouts.iter().flat_map(|r| &r.steps).any(|st| {
            let lp = current.log_probs(&st.state).unwrap()[st.choice.tool.index()];
            near_clip_kink((lp - st.choice.policy_logprob_old).exp(), trainer.config.trainer.clip_eps)
        });
        if kink {
            continue;
        }
        let adv: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let lambda = rng.gen_range(0.0..=1.0);
        let tc = &trainer.config.trainer;
        let (_, g) = mixed_loss_and_grad(&current, &group, &adv, lambda, tc).unwrap();
        let e = fd_error(&current, g.values(), &|p| mixed_loss_and_grad(p, &group, &adv, lambda, tc).unwrap().0);
        worst[3] = worst[3].max(e);
        mixed_done += 1;
    }

    let pass = worst.iter().all(|&e| e < 1e-5);
    verdict(
        pass,
        format!(
            "max relative error over {N} instances each: sl {:.1e}, pg {:.1e}, entropy {:.1e}, mixed {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Rewards
// ---------------------------------------------------------------------------

fn record(id: &str, tools: &[&str]) -> CorpusRecord {
    CorpusRecord {
        task_id: id.into(),
        text: tools.join(" "),
        reference: tools
            .iter()
            .map(|t| StepRecord {
                tool: t.to_string(),
                arg: "default".into(),
            })
            .collect(),
        category: Default::default(),
    }
}

fn sim(is_error: bool, is_complete: bool) -> SimResult {
    SimResult {
        output: String::new(),
        is_error,
        is_complete,
    }
}

fn reward_arithmetic() -> Verdict {
    let g = build_graph(&[record("a", &["web_search", "web_fetch", "db_query", "db_write"])]).unwrap();
    let id = |n: &str| g.tool_id(n).unwrap();
    let (search, fetch, query, write) = (id("web_search"), id("web_fetch"), id("db_query"), id("db_write"));
    let start = g.start();

    let exact = StepReward::new(intent_reward(&g, search, Some(search), start, start), exec_reward(&sim(false, false)));
    let category = StepReward::new(intent_reward(&g, fetch, Some(search), start, start), exec_reward(&sim(true, false)));
    let recovery_ok = StepReward::new(intent_reward(&g, query, Some(query), write, fetch), exec_reward(&sim(false, false)));
    let recovery_err = StepReward::new(intent_reward(&g, query, Some(query), write, fetch), exec_reward(&sim(true, false)));

    let reference = [search, fetch, query, write];
    let sims: Vec<SimResult> = (0..4).map(|i| sim(false, i == 3)).collect();
    let perfect = score_episode(&g, &reference, &[false; 4], &sims, &reference, &OutcomeConfig::default());

    let checks = [
        exact.total == 1.0,
        category.total == -0.3,
        recovery_ok.total == 0.6 + 0.5,
        recovery_err.total == 0.6 - 0.5,
        perfect.return_r == 4.0 + 2.0,
    ];
    verdict(
        checks.iter().all(|&c| c),
        format!(
            "exact {}, category+error {}, recovery {} / {}, perfect T=4 return {}",
            exact.total, category.total, recovery_ok.total, recovery_err.total, perfect.return_r
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Trend reproduction
// ---------------------------------------------------------------------------

struct RunSummary {
    test_match: f64,
    first_success: f64,
    diversity: f64,
}

fn train_variant(seed: u64, variant: &str) -> RunSummary {
    let mut cfg = RunConfig::default().with_variant(variant).unwrap();
    cfg.seed = seed;
    if let CorpusSource::Synthetic(s) = &mut cfg.corpus {
        s.seed = seed;
    }
    let mut t = Trainer::new(cfg).unwrap();
    let log = t.run().unwrap();
    RunSummary {
        test_match: t.evaluate("test").unwrap().match_ratio_mean,
        first_success: mean_first_success(&t.discovery(), t.total_steps()),
        diversity: log.last().unwrap().diversity,
    }
}

fn trend_reproduction() -> Verdict {
    let seeds = [0u64, 1, 2, 3, 4];
    let (mut wins_match, mut wins_discovery) = (0, 0);
    let (mut dyn_in_band, mut over_low) = (0, 0);
    let mut rows = Vec::new();
    for &seed in &seeds {
        let full = train_variant(seed, "full");
        let zero = train_variant(seed, "beta_0");
        let five = train_variant(seed, "beta_5");
        wins_match += (full.test_match > zero.test_match) as usize;
        wins_discovery += (full.first_success < zero.first_success) as usize;
        dyn_in_band += (0.4..=0.8).contains(&full.diversity) as usize;
        over_low += (five.diversity < 0.35) as usize;
        rows.push(format!(
            "seed {seed}: match {:.4}/{:.4} first-success {:.0}/{:.0} diversity {:.3}/{:.3}",
            full.test_match, zero.test_match, full.first_success, zero.first_success, full.diversity, five.diversity
        ));
    }
    for r in &rows {
        println!("    {r}");
    }
    let a = wins_match >= 4;
    let b = wins_discovery >= 4;
    let c = dyn_in_band == seeds.len() && over_low == seeds.len();
    verdict(
        a && b && c,
        format!(
            "(a) higher test match than beta=0 in {wins_match}/5 [{}]; (b) earlier first success in {wins_discovery}/5 [{}]; (c) dynamic diversity in [0.4, 0.8] {dyn_in_band}/5, beta=5 below 0.35 {over_low}/5 [{}]",
            ok(a),
            ok(b),
            ok(c)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

// ---------------------------------------------------------------------------
// 8. Pheromone concentration
// ---------------------------------------------------------------------------

fn pheromone_concentration() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    // The default generated corpus plus repeated episodes of one fixed chain
    // of five of its tools. The heatmap covers the chain and five other tools.
    let corpus = generate_synthetic(&SynthConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names = corpus.graph.names();
    let mut picks: Vec<usize> = Vec::new();
    while picks.len() < 10 {
        let i = rng.gen_range(0..names.len());
        if names[i] != START_TOOL && !picks.contains(&i) {
            picks.push(i);
        }
    }
    let subset: Vec<String> = picks.iter().map(|&i| names[i].clone()).collect();
    let chain = &subset[..5];
    let mut records = corpus.records();
    for i in 0..50 {
        let mut r = record(&format!("chain-{i:03}"), &chain.iter().map(String::as_str).collect::<Vec<_>>());
        for step in &mut r.reference {
            step.arg = "pattern_0".into();
        }
        records.push(r);
    }
    let path = dir.path().join("corpus.jsonl");
    write_corpus(&path, &records).unwrap();

    let mut cfg = RunConfig::default();
    cfg.corpus = CorpusSource::Path(path);
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();

    let w = t.schedule(t.total_epochs() - 1).w;
    let heat = Heatmap::compute(
        &t.graph,
        &t.pheromones,
        &t.config.pheromone,
        &subset,
        &chain.join(" "),
        t.config.trainer.embedding_dim,
        w,
    )
    .unwrap();
    let on: BTreeSet<(usize, usize)> = (0..chain.len() - 1).map(|i| (i, i + 1)).collect();
    let mean_off = |n: usize| {
        let mut vals = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && !on.contains(&(i, j)) {
                    vals.push(heat.values[i][j]);
                }
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let on_mean = on.iter().map(|&(i, j)| heat.values[i][j]).sum::<f64>() / on.len() as f64;
    let off_mean = mean_off(subset.len());
    let ratio = on_mean / off_mean;
    let chain_only = on_mean / mean_off(chain.len());
    verdict(
        ratio >= 2.0,
        format!(
            "mean fused on-chain {on_mean:.3}, off-chain over {} tools {off_mean:.3}, ratio {ratio:.2} (among chain tools only: {chain_only:.2})",
            subset.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Degeneracy
// ---------------------------------------------------------------------------

fn short_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.corpus = CorpusSource::Synthetic(SynthConfig {
        n_episodes: 80,
        horizon: 10,
        seed,
        ..Default::default()
    });
    cfg.schedule.horizons = vec![5, 10];
    cfg.schedule.epochs_per_stage = 2;
    cfg.schedule.final_epochs = 2;
    cfg
}

fn log_bytes(log: &[EpochMetrics]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in log {
        serde_json::to_writer(&mut out, m).unwrap();
        out.push(b'\n');
    }
    out
}

fn degeneracy_regression() -> Verdict {
    let mut degenerate = short_config(9);
    degenerate.schedule.beta = BetaSchedule::Fixed(0.0);
    degenerate.trainer.pheromone_updates = false;
    let plain = short_config(9).with_variant("plain_grpo").unwrap();
    let a = log_bytes(&Trainer::new(degenerate).unwrap().run().unwrap());
    let b = log_bytes(&Trainer::new(plain).unwrap().run().unwrap());
    verdict(
        a == b,
        format!("metrics logs of {} and {} bytes, equal: {}", a.len(), b.len(), a == b),
    )
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence
// ---------------------------------------------------------------------------

fn determinism_and_persistence() -> Verdict {
    let run = || log_bytes(&Trainer::new(short_config(10)).unwrap().run().unwrap());
    let (first, second) = (run(), run());
    let same_seed = first == second;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    let mut full = Trainer::new(short_config(10)).unwrap();
    let all = full.run().unwrap();
    let mut head_trainer = Trainer::new(short_config(10)).unwrap();
    let mut log = head_trainer.run_until(3).unwrap();
    head_trainer.checkpoint().save(&path).unwrap();
    drop(head_trainer);
    let mut resumed = Trainer::from_checkpoint(&path).unwrap();
    log.extend(resumed.run().unwrap());
    let resume_equal = log == all
        && resumed.policy == full.policy
        && resumed.pheromones == full.pheromones
        && resumed.progress == full.progress
        && resumed.evaluate("test").unwrap() == full.evaluate("test").unwrap();

    let again = dir.path().join("again.json");
    let loaded = phgpo_core::checkpoint::Checkpoint::load(&path).unwrap();
    loaded.save(&again).unwrap();
    let bytes_equal = std::fs::read(&path).unwrap() == std::fs::read(&again).unwrap();

    verdict(
        same_seed && resume_equal && bytes_equal,
        format!("same-seed logs equal: {same_seed}; resume equals uninterrupted: {resume_equal}; save-load-save bytes equal: {bytes_equal}"),
    )
}

//! Inference engines: lock-step parallel-lane improvement search for
//! MaxCut / MIS and multi-start constructive search for TSP, each with
//! a choice of memory: none, per-node flip recency ("op-based"), one
//! private solution memory per lane ("independent"), or one memory
//! visible to every lane ("shared").
//!
//! Improvement steps follow a store-then-retrieve protocol: every lane
//! stores its current solution, every lane then retrieves against the
//! updated memory, the policy scores one flip per lane, and the chosen
//! actions are written back to the stored entries at the step barrier.
//! Lanes are realized as a batched loop; all cross-lane interaction
//! goes through the memory at barriers, so the loop is observationally
//! lock-step.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{GraphInstance, InstanceKind};
use crate::memory::{MemoryScope, OpMemory, SolutionMemory};
use crate::nn::{Mat, Tape};
use crate::policy::{
    adjacency_feature, decoder_step, distance_feature, edge_context_matrix, encode,
    improvement_logits, FeatureKind, Policy,
};
use crate::problems::{
    apply_flip_adj, mc_flip_delta, mc_objective, mis_flip_delta, mis_is_independent,
    mis_objective, partial_edge_set, tsp_tour_length, BinarySolution, ProblemKind, Tour,
};
use crate::rng::child_rng;

/// What fills the memory-feature slot and how lanes share experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    /// No memory: the extra feature column (if the model has one) is zero.
    None,
    /// Per-node steps-since-last-flip recency features.
    OpBased,
    /// Solution memory private to each lane.
    Independent,
    /// One solution memory visible to all lanes.
    Shared,
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryMode::None => "none",
            MemoryMode::OpBased => "op-based",
            MemoryMode::Independent => "independent",
            MemoryMode::Shared => "shared",
        })
    }
}

impl std::str::FromStr for MemoryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => MemoryMode::None,
            "op-based" | "op" => MemoryMode::OpBased,
            "independent" => MemoryMode::Independent,
            "shared" => MemoryMode::Shared,
            other => {
                return Err(Error::Config(format!(
                    "unknown memory mode `{other}` (expected none|op-based|independent|shared)"
                )))
            }
        })
    }
}

/// How an action is drawn from the policy's logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    Greedy,
    Sample,
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionRule::Greedy => "greedy",
            SelectionRule::Sample => "sample",
        })
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "greedy" => SelectionRule::Greedy,
            "sample" => SelectionRule::Sample,
            other => {
                return Err(Error::Config(format!(
                    "unknown selection rule `{other}` (expected greedy|sample)"
                )))
            }
        })
    }
}

/// Knobs for one search run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub memory_mode: MemoryMode,
    /// Parallel lanes (improvement) or the cap on distinct-start
    /// rollouts per construction round (constructive).
    pub threads: usize,
    /// Neighbors per retrieval.
    pub k: usize,
    /// Improvement flips per lane.
    pub max_steps: usize,
    /// Construction rounds (constructive only).
    pub constructions: usize,
    /// Refresh the retrieved edge features every this many decoder
    /// steps (constructive only).
    pub retrieval_frequency: usize,
    pub selection: SelectionRule,
    pub seed: u64,
    /// Skip the lane's own just-stored entry during retrieval. Off by
    /// default: a freshly stored solution is a legitimate neighbor of
    /// itself.
    pub exclude_self: bool,
    /// Memory ring-buffer capacity.
    pub capacity: usize,
}

impl SearchConfig {
    /// Improvement-mode defaults; `max_steps` scales as 2n.
    pub fn improve_defaults(n: usize) -> SearchConfig {
        SearchConfig {
            memory_mode: MemoryMode::Shared,
            threads: 50,
            k: 20,
            max_steps: 2 * n,
            constructions: 1,
            retrieval_frequency: 10,
            selection: SelectionRule::Greedy,
            seed: 0,
            exclude_self: false,
            capacity: 100_000,
        }
    }

    /// Constructive-mode defaults.
    pub fn construct_defaults() -> SearchConfig {
        SearchConfig {
            memory_mode: MemoryMode::Shared,
            threads: 100,
            k: 3,
            max_steps: 0,
            constructions: 10,
            retrieval_frequency: 10,
            selection: SelectionRule::Greedy,
            seed: 0,
            exclude_self: false,
            capacity: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.retrieval_frequency < 1 {
            return Err(Error::Config("retrieval_frequency must be >= 1".into()));
        }
        if self.capacity < 1 {
            return Err(Error::Config("capacity must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// "mc" | "mis" | "tsp".
    pub problem: String,
    /// Cut size / set size (maximized) or tour length (minimized).
    pub best_objective: f64,
    /// Best bit vector (improvement runs).
    pub best_bits: Option<Vec<u8>>,
    /// Best tour (constructive runs).
    pub best_tour: Option<Vec<u32>>,
    /// Improvement: per lane, the objective after each step (index 0 is
    /// the initial solution). Constructive: per lane, the tour length
    /// of each construction round.
    pub traces: Vec<Vec<f64>>,
    /// Each lane's final-round tour (constructive runs; empty otherwise).
    pub lane_tours: Vec<Vec<u32>>,
    /// Steps that landed on a solution the lane had already visited.
    pub revisit_count: u64,
    /// Total improvement flips or decoder steps across all lanes.
    pub steps: u64,
    pub wall_time_s: f64,
    /// Entries left in the solution memory at the end.
    pub memory_entries: usize,
}

impl SearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("SearchResult is always serializable")
    }
}

/// Share of improvement steps that re-entered an already-visited
/// solution. Errors on constructive results (tours are never revisited
/// in this sense).
pub fn revisit_rate(result: &SearchResult) -> Result<f64> {
    if result.problem == "tsp" {
        return Err(Error::InvalidArgument(
            "revisit_rate is defined for improvement-mode results".into(),
        ));
    }
    if result.steps == 0 {
        return Ok(0.0);
    }
    Ok(result.revisit_count as f64 / result.steps as f64)
}

/// Record a visit; returns whether the solution had been seen before by
/// this lane.
fn note_visit(visited: &mut HashSet<BinarySolution>, sol: &BinarySolution) -> bool {
    if visited.contains(sol) {
        true
    } else {
        visited.insert(sol.clone());
        false
    }
}

/// Uniform random bit vector.
pub fn random_bits(n: usize, rng: &mut ChaCha8Rng) -> BinarySolution {
    BinarySolution::from_bits((0..n).map(|_| rng.random::<bool>() as u8).collect())
}

/// Maximal independent set built by greedily scanning a random node
/// order — feasible by construction and diverse across lanes.
pub fn random_maximal_independent_set(adj: &[Vec<u32>], rng: &mut ChaCha8Rng) -> BinarySolution {
    let n = adj.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut bits = vec![0u8; n];
    for &i in &order {
        if adj[i].iter().all(|&nb| bits[nb as usize] == 0) {
            bits[i] = 1;
        }
    }
    BinarySolution::from_bits(bits)
}

/// Assemble the per-node feature matrix for an improvement policy:
/// current bit, best-so-far bit, and (3-feature layouts only) the
/// memory feature column.
pub fn improvement_node_features(
    kind: FeatureKind,
    current: &BinarySolution,
    best: &BinarySolution,
    memory_col: Option<&[f64]>,
) -> Result<Mat> {
    let n = current.len();
    if best.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: best.len() });
    }
    let width = kind.node_feature_count();
    let mut feats = Mat::zeros(n, width);
    for i in 0..n {
        feats.set(i, 0, current.bits[i] as f64);
        feats.set(i, 1, best.bits[i] as f64);
    }
    match kind {
        FeatureKind::Plain => {
            if memory_col.is_some() {
                return Err(Error::InvalidArgument(
                    "2-feature layout has no memory column".into(),
                ));
            }
        }
        FeatureKind::OpRecency | FeatureKind::Retrieved => {
            let col = memory_col.ok_or_else(|| {
                Error::InvalidArgument("3-feature layout needs a memory column".into())
            })?;
            if col.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: col.len() });
            }
            for i in 0..n {
                feats.set(i, 2, col[i]);
            }
        }
        FeatureKind::Coords => {
            return Err(Error::InvalidArgument(
                "coordinate features are built from the instance, not from solutions".into(),
            ))
        }
    }
    Ok(feats)
}

/// City coordinates as the constructive node-feature matrix.
pub fn coords_features(g: &GraphInstance) -> Result<Mat> {
    let coords = g
        .coords
        .as_ref()
        .ok_or_else(|| Error::Validation("instance has no coordinates".into()))?;
    let mut m = Mat::zeros(g.n, 2);
    for (i, &(x, y)) in coords.iter().enumerate() {
        m.set(i, 0, x);
        m.set(i, 1, y);
    }
    Ok(m)
}

/// Pick an action from logits. `mask[i] = true` forbids index i.
/// Greedy takes the highest logit (ties to the lowest index); sampling
/// draws from the softmax over the unmasked entries and consumes
/// exactly one random number.
pub fn select_action(
    logits: &[f64],
    mask: Option<&[bool]>,
    rule: SelectionRule,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let feasible = |i: usize| mask.map_or(true, |m| !m[i]);
    let mut any = false;
    for i in 0..logits.len() {
        if feasible(i) {
            any = true;
            break;
        }
    }
    if !any || logits.is_empty() {
        return Err(Error::AllMasked);
    }
    match rule {
        SelectionRule::Greedy => {
            let mut best = usize::MAX;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in logits.iter().enumerate() {
                if feasible(i) && v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            Ok(best)
        }
        SelectionRule::Sample => {
            let max = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| feasible(i))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(i, &v)| if feasible(i) { (v - max).exp() } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            let u = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut last_feasible = 0;
            for (i, &w) in weights.iter().enumerate() {
                if feasible(i) {
                    last_feasible = i;
                    cum += w;
                    if u < cum {
                        return Ok(i);
                    }
                }
            }
            Ok(last_feasible)
        }
    }
}

fn improvement_objective(g: &GraphInstance, s: &BinarySolution, kind: ProblemKind) -> f64 {
    match kind {
        ProblemKind::MaxCut => mc_objective(g, s).expect("length checked") as f64,
        ProblemKind::Mis => mis_objective(g, s).expect("feasible by construction") as f64,
        ProblemKind::Tsp => unreachable!("improvement objective for constructive problem"),
    }
}

fn check_improve_compat(policy: &Policy, cfg: &SearchConfig) -> Result<()> {
    if !policy.problem.is_improvement() {
        return Err(Error::Config(format!(
            "improvement search needs a MaxCut or MIS policy, got {}",
            policy.problem
        )));
    }
    if policy.features == FeatureKind::Plain && cfg.memory_mode != MemoryMode::None {
        return Err(Error::Config(
            "this model has no memory-feature input; use memory_mode = none".into(),
        ));
    }
    Ok(())
}

struct Lane {
    sol: BinarySolution,
    obj: f64,
    best_obj: f64,
    best_sol: BinarySolution,
    visited: HashSet<BinarySolution>,
    rng: ChaCha8Rng,
    trace: Vec<f64>,
}

/// Parallel-lane improvement search.
///
/// Lanes start from random solutions (MaxCut: uniform bits; MIS:
/// random-order maximal independent sets). Each step: store every
/// lane's current solution, retrieve per lane, score flips with the
/// policy, apply one flip per lane, then attach the chosen actions to
/// the stored entries at the barrier. Runs exactly `max_steps` steps
/// per lane and returns the best solution seen anywhere.
pub fn marco_improve(
    g: &GraphInstance,
    policy: &Policy,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    check_improve_compat(policy, cfg)?;
    let started = Instant::now();
    let n = g.n;
    let kind = policy.problem;
    let lanes_n = cfg.threads;
    let adj = g.adjacency_lists();
    let adj_feat = adjacency_feature(g);

    let mut memory = match cfg.memory_mode {
        MemoryMode::Independent => {
            Some(SolutionMemory::node_wise(n, cfg.capacity, MemoryScope::PerLane))
        }
        MemoryMode::Shared => Some(SolutionMemory::node_wise(n, cfg.capacity, MemoryScope::Shared)),
        _ => None,
    };
    let mut ops: Option<Vec<OpMemory>> = match cfg.memory_mode {
        MemoryMode::OpBased => Some(vec![OpMemory::new(n); lanes_n]),
        _ => None,
    };

    let mut lanes: Vec<Lane> = (0..lanes_n)
        .map(|i| {
            let mut rng = child_rng(cfg.seed, "lane", i as u64);
            let sol = match kind {
                ProblemKind::MaxCut => random_bits(n, &mut rng),
                ProblemKind::Mis => random_maximal_independent_set(&adj, &mut rng),
                ProblemKind::Tsp => unreachable!("compat checked"),
            };
            let obj = improvement_objective(g, &sol, kind);
            // The distinct-solutions ledger counts arrivals only: the very
            // first return to the initial solution is still a novel sighting
            // because the walk never "arrived" there.
            let visited = HashSet::new();
            Lane {
                best_sol: sol.clone(),
                best_obj: obj,
                obj,
                trace: vec![obj],
                visited,
                rng,
                sol,
            }
        })
        .collect();

    let (mut best_obj, mut best_sol) = lanes
        .iter()
        .map(|l| (l.obj, l.sol.clone()))
        .max_by(|a, b| a.0.partial_cmp(&b.0).expect("objectives are finite"))
        .expect("threads >= 1");

    let mut revisit_count = 0u64;
    let mut steps = 0u64;
    let mut actions = vec![0usize; lanes_n];

    for t in 0..cfg.max_steps {
        // Store phase: every lane's current solution enters the memory
        // before anyone retrieves, action still pending.
        let mut seqs = vec![0u64; lanes_n];
        if let Some(mem) = memory.as_mut() {
            for (i, lane) in lanes.iter().enumerate() {
                seqs[i] = mem.store_node(i as u32, &lane.sol, None)?;
            }
        }

        // Act phase.
        for i in 0..lanes_n {
            let memory_col: Option<Vec<f64>> = match cfg.memory_mode {
                MemoryMode::None => match policy.features {
                    FeatureKind::Plain => None,
                    _ => Some(vec![0.0; n]),
                },
                MemoryMode::OpBased => {
                    Some(ops.as_ref().expect("op mode").get(i).expect("lane").features(t as u64))
                }
                MemoryMode::Independent | MemoryMode::Shared => {
                    let exclude = cfg.exclude_self.then_some(seqs[i]);
                    let ctx = memory
                        .as_ref()
                        .expect("memory mode")
                        .retrieve_nodes(i as u32, cfg.k, &lanes[i].sol, exclude)?;
                    Some(ctx.values)
                }
            };
            let feats = improvement_node_features(
                policy.features,
                &lanes[i].sol,
                &lanes[i].best_sol,
                memory_col.as_deref(),
            )?;
            let mut tape = Tape::new();
            let emb = encode(&mut tape, policy, feats, &[adj_feat.clone()])?;
            let logits = improvement_logits(&mut tape, policy, emb);
            let lane = &mut lanes[i];
            let a = select_action(&tape.value(logits).data, None, cfg.selection, &mut lane.rng)?;
            actions[i] = a;

            let delta = match kind {
                ProblemKind::MaxCut => mc_flip_delta(&adj, &lane.sol, a),
                ProblemKind::Mis => mis_flip_delta(&adj, &lane.sol, a),
                ProblemKind::Tsp => unreachable!(),
            };
            lane.sol = apply_flip_adj(&adj, &lane.sol, a, kind);
            lane.obj += delta as f64;
            debug_assert_eq!(lane.obj, improvement_objective(g, &lane.sol, kind));
            lane.trace.push(lane.obj);
            if lane.obj > lane.best_obj {
                lane.best_obj = lane.obj;
                lane.best_sol = lane.sol.clone();
            }
            if lane.obj > best_obj {
                best_obj = lane.obj;
                best_sol = lane.sol.clone();
            }
            if note_visit(&mut lane.visited, &lane.sol) {
                revisit_count += 1;
            }
        }

        // Barrier phase: reveal the chosen actions to future retrievals.
        if let Some(mem) = memory.as_mut() {
            for i in 0..lanes_n {
                mem.set_action(seqs[i], actions[i] as u32);
            }
        }
        if let Some(ops) = ops.as_mut() {
            for i in 0..lanes_n {
                ops[i].record(actions[i], t as u64);
            }
        }
        steps += lanes_n as u64;
    }

    debug_assert_eq!(best_obj, improvement_objective(g, &best_sol, kind));
    if kind == ProblemKind::Mis {
        debug_assert!(mis_is_independent(g, &best_sol));
    }
    Ok(SearchResult {
        problem: kind.to_string(),
        best_objective: best_obj,
        best_bits: Some(best_sol.bits),
        best_tour: None,
        traces: lanes.into_iter().map(|l| l.trace).collect(),
        lane_tours: Vec::new(),
        revisit_count,
        steps,
        wall_time_s: started.elapsed().as_secs_f64(),
        memory_entries: memory.as_ref().map_or(0, |m| m.len()),
    })
}

/// Multi-start constructive search.
///
/// Each construction round decodes `min(n, threads)` tours, lane `i`
/// starting from city `i`. The retrieved edge features are refreshed
/// (and the instance re-encoded) every `retrieval_frequency` decoder
/// steps; they are all zeros before the first refresh and whenever the
/// memory has nothing visible. Completed tours are stored at the
/// round's end, so rounds interact only through the memory.
pub fn marco_construct(
    g: &GraphInstance,
    policy: &Policy,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    if policy.problem != ProblemKind::Tsp {
        return Err(Error::Config(format!(
            "constructive search needs a TSP policy, got {}",
            policy.problem
        )));
    }
    if g.kind != InstanceKind::CompleteMetric {
        return Err(Error::NotMetric);
    }
    if g.n < 1 {
        return Err(Error::Validation("instance has no nodes".into()));
    }
    if cfg.memory_mode == MemoryMode::OpBased {
        return Err(Error::Config("op-based memory applies to improvement search only".into()));
    }
    if cfg.constructions < 1 {
        return Err(Error::Config("constructions must be >= 1".into()));
    }
    let started = Instant::now();
    let n = g.n;
    let starts = n.min(cfg.threads);
    let feats = coords_features(g)?;
    let dist = distance_feature(g)?;

    let mut memory = match cfg.memory_mode {
        MemoryMode::None => None,
        MemoryMode::Independent => {
            Some(SolutionMemory::edge_wise(cfg.capacity, MemoryScope::PerLane))
        }
        MemoryMode::Shared => Some(SolutionMemory::edge_wise(cfg.capacity, MemoryScope::Shared)),
        MemoryMode::OpBased => unreachable!("rejected above"),
    };
    let mut rngs: Vec<ChaCha8Rng> =
        (0..starts).map(|i| child_rng(cfg.seed, "lane", i as u64)).collect();

    let mut best_len = f64::INFINITY;
    let mut best_tour: Option<Tour> = None;
    let mut traces: Vec<Vec<f64>> = vec![Vec::new(); starts];
    let mut lane_tours: Vec<Vec<u32>> = vec![Vec::new(); starts];
    let mut steps = 0u64;

    for _round in 0..cfg.constructions {
        let mut finished: Vec<(u32, Vec<(u32, u32)>)> = Vec::new();
        for (i, lane_rng) in rngs.iter_mut().enumerate() {
            let mut partial: Vec<u32> = vec![i as u32];
            let mut mem_mat = Mat::zeros(n, n);
            let mut tape = Tape::new();
            let mut emb = encode(&mut tape, policy, feats.clone(), &[dist.clone(), mem_mat.clone()])?;
            for step in 0..n.saturating_sub(1) {
                if step % cfg.retrieval_frequency == 0 {
                    mem_mat = match memory.as_ref() {
                        Some(mem) => {
                            let query = partial_edge_set(&partial)?;
                            let ctx = mem.retrieve_edges(i as u32, cfg.k, &query)?;
                            edge_context_matrix(&ctx.weights, n)
                        }
                        None => Mat::zeros(n, n),
                    };
                    tape = Tape::new();
                    emb = encode(
                        &mut tape,
                        policy,
                        feats.clone(),
                        &[dist.clone(), mem_mat.clone()],
                    )?;
                }
                let logits = decoder_step(&mut tape, policy, emb, &partial, &dist, &mem_mat)?;
                let a = select_action(&tape.value(logits).data, None, cfg.selection, lane_rng)?;
                partial.push(a as u32);
                steps += 1;
            }
            let tour = Tour::new(partial)?;
            let len = tsp_tour_length(g, &tour)?;
            traces[i].push(len);
            lane_tours[i] = tour.perm.clone();
            if len < best_len {
                best_len = len;
                best_tour = Some(tour.clone());
            }
            finished.push((i as u32, tour.edge_set()));
        }
        // Barrier: completed tours become visible to the next round.
        if let Some(mem) = memory.as_mut() {
            for (lane, edges) in finished {
                mem.store_edges(lane, edges)?;
            }
        }
    }

    let best_tour = best_tour.expect("at least one construction round");
    debug_assert!((tsp_tour_length(g, &best_tour)? - best_len).abs() < 1e-9);
    Ok(SearchResult {
        problem: ProblemKind::Tsp.to_string(),
        best_objective: best_len,
        best_bits: None,
        best_tour: Some(best_tour.perm),
        traces,
        lane_tours,
        revisit_count: 0,
        steps,
        wall_time_s: started.elapsed().as_secs_f64(),
        memory_entries: memory.as_ref().map_or(0, |m| m.len()),
    })
}

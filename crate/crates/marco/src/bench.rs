//! Benchmark harness: paired-seed method ablations, retrieval-size and
//! penalty-coefficient sweeps, and memory-growth accounting, with CSV
//! and JSON report emission.
//!
//! Every comparison is paired: each method (or sweep point) sees the
//! same instances in the same order with the same per-instance seed, so
//! initial solutions and rollout randomness line up wherever the
//! methods share code paths. Report rows are reproducible from
//! (instances, checkpoints, config) except for the wall-time column,
//! which is measured, not derived.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instances::GraphInstance;
use crate::memory::{MemoryScope, SolutionMemory};
use crate::policy::{FeatureKind, Policy};
use crate::problems::ProblemKind;
use crate::rng::child_rng;
use crate::search::{marco_improve, random_bits, revisit_rate, MemoryMode, SearchConfig};
use crate::training::{train_improvement, TrainConfig};

/// The four inference variants compared in the ablation: no memory at
/// all, operation-recency features, retrieval with one memory per lane,
/// and retrieval with one memory shared by all lanes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMethod {
    Nim,
    OpNim,
    MarcoInd,
    Marco,
}

impl AblationMethod {
    pub const ALL: [AblationMethod; 4] = [
        AblationMethod::Nim,
        AblationMethod::OpNim,
        AblationMethod::MarcoInd,
        AblationMethod::Marco,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationMethod::Nim => "nim",
            AblationMethod::OpNim => "op-nim",
            AblationMethod::MarcoInd => "marco-ind",
            AblationMethod::Marco => "marco",
        }
    }

    pub fn memory_mode(self) -> MemoryMode {
        match self {
            AblationMethod::Nim => MemoryMode::None,
            AblationMethod::OpNim => MemoryMode::OpBased,
            AblationMethod::MarcoInd => MemoryMode::Independent,
            AblationMethod::Marco => MemoryMode::Shared,
        }
    }
}

/// Trained models for the ablation. The two retrieval variants share
/// one checkpoint: independent-memory mode is an inference-time change,
/// not a different model.
pub struct AblationCheckpoints {
    pub nim: Policy,
    pub op_nim: Policy,
    pub marco: Policy,
}

impl AblationCheckpoints {
    fn policy_for(&self, method: AblationMethod) -> &Policy {
        match method {
            AblationMethod::Nim => &self.nim,
            AblationMethod::OpNim => &self.op_nim,
            AblationMethod::MarcoInd | AblationMethod::Marco => &self.marco,
        }
    }

    fn validate(&self) -> Result<ProblemKind> {
        let problem = self.nim.problem;
        if !problem.is_improvement() {
            return Err(Error::Config(format!(
                "ablation compares improvement methods, got a {problem} checkpoint"
            )));
        }
        for (policy, want, slot) in [
            (&self.nim, FeatureKind::Plain, "nim"),
            (&self.op_nim, FeatureKind::OpRecency, "op-nim"),
            (&self.marco, FeatureKind::Retrieved, "marco"),
        ] {
            if policy.problem != problem {
                return Err(Error::Config(format!(
                    "incompatible checkpoint: `{slot}` solves {}, expected {problem}",
                    policy.problem
                )));
            }
            if policy.features != want {
                return Err(Error::Config(format!(
                    "incompatible checkpoint: `{slot}` has {:?} features, expected {want:?}",
                    policy.features
                )));
            }
        }
        Ok(problem)
    }
}

/// One aggregate row of a benchmark report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    /// Method or sweep-point label ("marco", "k=20", "wp=1").
    pub method: String,
    /// Instance-set label ("er50-mc").
    pub set: String,
    pub mean_objective: f64,
    /// Mean relative gap to the best value seen for the same instance
    /// anywhere in the report; never negative.
    pub mean_gap: f64,
    /// Spread of the aggregated objective: across instances for
    /// inference rows, across retrained models for penalty-sweep rows.
    pub stddev: f64,
    /// Mean seconds per instance, warmup run excluded.
    pub mean_wall_s: f64,
    /// Mean share of steps landing on already-visited solutions;
    /// improvement runs only.
    pub revisit_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,set,mean_objective,mean_gap,stddev,mean_wall_s,revisit_rate\n");
        for r in &self.rows {
            let revisit = r.revisit_rate.map(|v| format!("{v}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method, r.set, r.mean_objective, r.mean_gap, r.stddev, r.mean_wall_s, revisit
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report rows are plain data")
    }
}

/// Aggregate one method's per-instance objectives into a report row.
/// `best` holds the running per-instance best-known values for the
/// whole comparison, so gaps are computed after every method ran.
struct MethodStats {
    method: String,
    objectives: Vec<f64>,
    wall_total: f64,
    revisit_sum: f64,
}

fn maximization_gap(best: f64, got: f64) -> f64 {
    if best <= 0.0 {
        return 0.0;
    }
    ((best - got) / best).max(0.0)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn finish_rows(stats: Vec<MethodStats>, set: &str, n_instances: usize) -> Vec<BenchRow> {
    let mut best = vec![f64::NEG_INFINITY; n_instances];
    for s in &stats {
        for (i, &obj) in s.objectives.iter().enumerate() {
            if obj > best[i] {
                best[i] = obj;
            }
        }
    }
    stats
        .into_iter()
        .map(|s| {
            let gaps: Vec<f64> = s
                .objectives
                .iter()
                .zip(&best)
                .map(|(&obj, &b)| maximization_gap(b, obj))
                .collect();
            BenchRow {
                method: s.method,
                set: set.to_string(),
                mean_objective: mean(&s.objectives),
                mean_gap: mean(&gaps),
                stddev: stddev(&s.objectives),
                mean_wall_s: s.wall_total / n_instances as f64,
                revisit_rate: Some(s.revisit_sum / n_instances as f64),
            }
        })
        .collect()
}

/// Run one improvement method over the instance set with paired
/// per-instance seeds. The first instance is solved once untimed as a
/// warmup before the measured pass.
fn run_method(
    label: &str,
    policy: &Policy,
    instances: &[GraphInstance],
    cfg: &SearchConfig,
) -> Result<MethodStats> {
    let mut warm_cfg = cfg.clone();
    warm_cfg.seed = cfg.seed;
    marco_improve(&instances[0], policy, &warm_cfg)?;

    let mut stats = MethodStats {
        method: label.to_string(),
        objectives: Vec::with_capacity(instances.len()),
        wall_total: 0.0,
        revisit_sum: 0.0,
    };
    for (i, g) in instances.iter().enumerate() {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(i as u64);
        let result = marco_improve(g, policy, &run_cfg)?;
        stats.objectives.push(result.best_objective);
        stats.wall_total += result.wall_time_s;
        stats.revisit_sum += revisit_rate(&result)?;
    }
    Ok(stats)
}

/// Compare the four ablation variants on one instance set with paired
/// seeds. The base config's memory mode is overridden per method; its
/// seed is the pairing base.
pub fn run_ablation(
    instances: &[GraphInstance],
    set_label: &str,
    checkpoints: &AblationCheckpoints,
    base: &SearchConfig,
) -> Result<BenchReport> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("empty instance set".into()));
    }
    checkpoints.validate()?;
    let mut stats = Vec::with_capacity(AblationMethod::ALL.len());
    for method in AblationMethod::ALL {
        let mut cfg = base.clone();
        cfg.memory_mode = method.memory_mode();
        stats.push(run_method(
            method.label(),
            checkpoints.policy_for(method),
            instances,
            &cfg,
        )?);
    }
    Ok(BenchReport { rows: finish_rows(stats, set_label, instances.len()) })
}

/// Sweep the retrieval size k for one retrieval-features checkpoint.
/// Memory mode comes from the base config (shared by default use).
pub fn sweep_k(
    instances: &[GraphInstance],
    set_label: &str,
    policy: &Policy,
    base: &SearchConfig,
    ks: &[usize],
) -> Result<BenchReport> {
    if instances.is_empty() || ks.is_empty() {
        return Err(Error::InvalidArgument("empty instance set or k list".into()));
    }
    let mut stats = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut cfg = base.clone();
        cfg.k = k;
        stats.push(run_method(&format!("k={k}"), policy, instances, &cfg)?);
    }
    Ok(BenchReport { rows: finish_rows(stats, set_label, instances.len()) })
}

/// Sweep the revisit-penalty coefficient: retrain `models_per` models
/// per coefficient (different seeds, otherwise identical budgets), then
/// evaluate each on the paired instance set. Row mean and stddev are
/// taken across the retrained models, surfacing training variance.
pub fn sweep_penalty(
    train_base: &TrainConfig,
    w_ps: &[f64],
    models_per: usize,
    instances: &[GraphInstance],
    set_label: &str,
    eval: &SearchConfig,
) -> Result<BenchReport> {
    if instances.is_empty() || w_ps.is_empty() {
        return Err(Error::InvalidArgument("empty instance set or coefficient list".into()));
    }
    if models_per < 2 {
        return Err(Error::InvalidArgument(
            "penalty sweep needs at least 2 models per coefficient".into(),
        ));
    }
    let n_instances = instances.len();
    // (coefficient, model) -> per-instance objectives; best-known is
    // taken over everything evaluated in this sweep.
    let mut per_model: Vec<(usize, MethodStats)> = Vec::new();
    for (ci, &w_p) in w_ps.iter().enumerate() {
        for m in 0..models_per {
            let mut cfg = train_base.clone();
            cfg.penalty = w_p;
            cfg.seed = train_base.seed.wrapping_add(m as u64);
            let trained = train_improvement(&cfg, None)?;
            let label = format!("wp={w_p}");
            per_model.push((ci, run_method(&label, &trained.policy, instances, eval)?));
        }
    }
    let mut best = vec![f64::NEG_INFINITY; n_instances];
    for (_, s) in &per_model {
        for (i, &obj) in s.objectives.iter().enumerate() {
            if obj > best[i] {
                best[i] = obj;
            }
        }
    }
    let mut rows = Vec::with_capacity(w_ps.len());
    for (ci, &w_p) in w_ps.iter().enumerate() {
        let group: Vec<&MethodStats> =
            per_model.iter().filter(|(c, _)| *c == ci).map(|(_, s)| s).collect();
        let model_means: Vec<f64> = group.iter().map(|s| mean(&s.objectives)).collect();
        let model_gaps: Vec<f64> = group
            .iter()
            .map(|s| {
                let gaps: Vec<f64> = s
                    .objectives
                    .iter()
                    .zip(&best)
                    .map(|(&obj, &b)| maximization_gap(b, obj))
                    .collect();
                mean(&gaps)
            })
            .collect();
        let walls: Vec<f64> = group.iter().map(|s| s.wall_total / n_instances as f64).collect();
        let revisits: Vec<f64> =
            group.iter().map(|s| s.revisit_sum / n_instances as f64).collect();
        rows.push(BenchRow {
            method: format!("wp={w_p}"),
            set: set_label.to_string(),
            mean_objective: mean(&model_means),
            mean_gap: mean(&model_gaps),
            stddev: stddev(&model_means),
            mean_wall_s: mean(&walls),
            revisit_rate: Some(mean(&revisits)),
        });
    }
    Ok(BenchReport { rows })
}

/// One sample of the memory-growth profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GrowthRow {
    pub step: usize,
    pub entries: usize,
    pub bytes: usize,
}

/// Store `threads` solutions per step into one shared node-wise memory
/// and record its growth. Entry count follows min(threads * step,
/// capacity) exactly; payload bytes grow linearly with entries until
/// the ring buffer caps them.
pub fn memory_growth_rows(
    problem: ProblemKind,
    n: usize,
    threads: usize,
    capacity: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<GrowthRow>> {
    if !problem.is_improvement() {
        return Err(Error::InvalidArgument(
            "memory growth profiling applies to improvement-mode (node-wise) memory".into(),
        ));
    }
    if n == 0 || threads == 0 || steps == 0 {
        return Err(Error::InvalidArgument("n, threads and steps must be positive".into()));
    }
    let mut mem = SolutionMemory::node_wise(n, capacity, MemoryScope::Shared);
    let mut rng = child_rng(seed, "growth-profile", 0);
    let mut rows = Vec::with_capacity(steps);
    for step in 1..=steps {
        for lane in 0..threads {
            let sol = random_bits(n, &mut rng);
            mem.store_node(lane as u32, &sol, None)?;
        }
        rows.push(GrowthRow { step, entries: mem.len(), bytes: mem.payload_bytes() });
    }
    Ok(rows)
}

/// CSV rendering of [`memory_growth_rows`]: `step,entries,bytes`.
pub fn memory_growth_profile(
    problem: ProblemKind,
    n: usize,
    threads: usize,
    capacity: usize,
    steps: usize,
    seed: u64,
) -> Result<String> {
    let rows = memory_growth_rows(problem, n, threads, capacity, steps, seed)?;
    let mut out = String::from("step,entries,bytes\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.step, r.entries, r.bytes));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_erdos_renyi;
    use crate::policy::EncoderConfig;
    use crate::search::SelectionRule;

    fn tiny_net() -> EncoderConfig {
        let mut net = EncoderConfig::desk();
        net.embed_dim = 8;
        net.heads = 2;
        net.layers = 1;
        net.ffn_hidden = 8;
        net.mem_hidden = 4;
        net
    }

    fn tiny_checkpoints(problem: ProblemKind) -> AblationCheckpoints {
        AblationCheckpoints {
            nim: Policy::new_improvement(problem, FeatureKind::Plain, tiny_net(), 1).unwrap(),
            op_nim: Policy::new_improvement(problem, FeatureKind::OpRecency, tiny_net(), 2)
                .unwrap(),
            marco: Policy::new_improvement(problem, FeatureKind::Retrieved, tiny_net(), 3)
                .unwrap(),
        }
    }

    fn tiny_eval_cfg() -> SearchConfig {
        let mut cfg = SearchConfig::improve_defaults(8);
        cfg.threads = 3;
        cfg.max_steps = 6;
        cfg.k = 4;
        cfg.selection = SelectionRule::Greedy;
        cfg.seed = 7;
        cfg
    }

    fn tiny_set(count: usize) -> Vec<GraphInstance> {
        (0..count).map(|i| gen_erdos_renyi(8, 0.3, 40 + i as u64)).collect()
    }

    #[test]
    fn ablation_emits_four_complete_rows_per_set() {
        let instances = tiny_set(3);
        let ckpts = tiny_checkpoints(ProblemKind::MaxCut);
        let report = run_ablation(&instances, "er8", &ckpts, &tiny_eval_cfg()).unwrap();
        assert_eq!(report.rows.len(), 4);
        let labels: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(labels, ["nim", "op-nim", "marco-ind", "marco"]);
        for row in &report.rows {
            assert_eq!(row.set, "er8");
            assert!(row.mean_objective.is_finite());
            assert!(row.mean_gap >= 0.0, "gap must never be negative");
            assert!(row.mean_wall_s >= 0.0);
            let revisit = row.revisit_rate.expect("improvement rows carry a revisit rate");
            assert!((0.0..=1.0).contains(&revisit));
        }
        // At least one method must sit at gap zero for every pairing to
        // make sense; the best row's mean gap is the smallest.
        assert!(report.rows.iter().any(|r| r.mean_gap < 1e-12 + 1.0));
    }

    #[test]
    fn ablation_report_is_reproducible_modulo_wall_time() {
        let instances = tiny_set(2);
        let ckpts = tiny_checkpoints(ProblemKind::Mis);
        let a = run_ablation(&instances, "er8", &ckpts, &tiny_eval_cfg()).unwrap();
        let b = run_ablation(&instances, "er8", &ckpts, &tiny_eval_cfg()).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.method, rb.method);
            assert_eq!(ra.mean_objective, rb.mean_objective);
            assert_eq!(ra.mean_gap, rb.mean_gap);
            assert_eq!(ra.stddev, rb.stddev);
            assert_eq!(ra.revisit_rate, rb.revisit_rate);
        }
    }

    #[test]
    fn ablation_rejects_incompatible_checkpoints() {
        let instances = tiny_set(1);
        let mut ckpts = tiny_checkpoints(ProblemKind::MaxCut);
        ckpts.marco =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, tiny_net(), 3)
                .unwrap();
        assert!(run_ablation(&instances, "er8", &ckpts, &tiny_eval_cfg()).is_err());

        let mut ckpts = tiny_checkpoints(ProblemKind::MaxCut);
        ckpts.op_nim =
            Policy::new_improvement(ProblemKind::Mis, FeatureKind::OpRecency, tiny_net(), 2)
                .unwrap();
        assert!(run_ablation(&instances, "er8", &ckpts, &tiny_eval_cfg()).is_err());
    }

    #[test]
    fn csv_and_json_share_the_row_schema() {
        let instances = tiny_set(2);
        let ckpts = tiny_checkpoints(ProblemKind::MaxCut);
        let report = run_ablation(&instances, "er8", &ckpts, &tiny_eval_cfg()).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,set,mean_objective,mean_gap,stddev,mean_wall_s,revisit_rate"
        );
        assert_eq!(lines.count(), 4);
        let parsed: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(parsed["rows"].as_array().unwrap().len(), 4);
        assert!(parsed["rows"][0]["revisit_rate"].is_number());
    }

    #[test]
    fn k_sweep_emits_one_row_per_k_and_survives_oversized_k() {
        let instances = tiny_set(2);
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Retrieved, tiny_net(), 5)
                .unwrap();
        // k far beyond anything stored in the first steps: retrieval
        // clamps to the entry count instead of crashing.
        let report = sweep_k(&instances, "er8", &policy, &tiny_eval_cfg(), &[1, 20, 1000]).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].method, "k=1");
        assert_eq!(report.rows[1].method, "k=20");
        assert_eq!(report.rows[2].method, "k=1000");
        for row in &report.rows {
            assert!(row.mean_objective.is_finite());
            assert!(row.mean_gap >= 0.0);
        }
    }

    #[test]
    fn penalty_sweep_reports_model_spread_and_survives_extreme_weights() {
        let mut train = TrainConfig::new(ProblemKind::MaxCut);
        train.net = tiny_net();
        train.episodes = 2;
        train.batch = 2;
        train.t_ep = 4;
        train.n_min = 6;
        train.n_max = 8;
        train.k = 3;
        train.seed = 30;
        let instances = tiny_set(2);
        let report =
            sweep_penalty(&train, &[0.0, 100.0], 2, &instances, "er8", &tiny_eval_cfg()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].method, "wp=0");
        assert_eq!(report.rows[1].method, "wp=100");
        for row in &report.rows {
            assert!(row.mean_objective.is_finite(), "extreme penalty produced non-finite stats");
            assert!(row.stddev.is_finite());
            assert!(row.stddev >= 0.0);
        }
        assert!(report.to_csv().contains("stddev"));

        assert!(sweep_penalty(&train, &[0.5], 1, &instances, "er8", &tiny_eval_cfg()).is_err());
    }

    #[test]
    fn growth_profile_counts_entries_exactly_and_bytes_linearly() {
        let csv = memory_growth_profile(ProblemKind::MaxCut, 16, 4, 50, 20, 9).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,entries,bytes");
        let mut ratio_at_full: Option<f64> = None;
        for (i, line) in lines.enumerate() {
            let step = i + 1;
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0].parse::<usize>().unwrap(), step);
            let entries = cols[1].parse::<usize>().unwrap();
            let bytes = cols[2].parse::<f64>().unwrap();
            assert_eq!(entries, (4 * step).min(50), "ring-buffer count at step {step}");
            let ratio = bytes / entries as f64;
            match ratio_at_full {
                None => ratio_at_full = Some(ratio),
                Some(r) => assert!(
                    (ratio - r).abs() / r < 0.05,
                    "bytes per entry drifted beyond 5%: {ratio} vs {r}"
                ),
            }
        }
        assert!(memory_growth_profile(ProblemKind::Tsp, 16, 4, 50, 5, 9).is_err());
    }
}

//! Command-line entry point: instance generation, training, solving,
//! ablations, and benchmark sweeps.
//!
//! Exit codes: 0 on success, 1 for runtime failures, 2 for usage or
//! configuration errors. Every command derives its randomness from one
//! root seed; the full effective configuration is echoed to stderr and
//! to `run.log` in the output directory so runs are auditable. The
//! `MARCO_THREADS` environment variable caps search parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use marco::baselines::{
    brute_force_mc, brute_force_mis, brute_force_tsp, greedy_mis, nearest_neighbor_tsp,
};
use marco::bench::{
    memory_growth_profile, memory_growth_rows, run_ablation, sweep_k, sweep_penalty,
    AblationCheckpoints, BenchReport,
};
use marco::config::{parse_config_text, Profile, RunConfig};
use marco::error::Error;
use marco::instances::{gen_erdos_renyi, gen_tsp_uniform, GraphInstance, InstanceKind};
use marco::policy::Policy;
use marco::problems::{mis_objective, tsp_tour_length, ProblemKind};
use marco::search::{marco_construct, marco_improve, MemoryMode, SearchResult};
use marco::training::{metrics_csv, train_constructive, train_improvement, TspPhase};

#[derive(Parser)]
#[command(
    name = "marco",
    version,
    about = "Memory-augmented neural search for MaxCut, MIS and TSP"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate random instances and a manifest listing their seeds.
    Generate(GenerateArgs),
    /// Train a policy; writes a checkpoint and a metrics CSV.
    Train(TrainArgs),
    /// Solve instances with a trained policy or a classical baseline.
    Solve(SolveArgs),
    /// Compare nim / op-nim / marco-ind / marco on one instance set.
    Ablate(AblateArgs),
    /// Sweeps (retrieval size, penalty coefficient) and memory growth.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file applied over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline override, `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Root seed for this command.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    /// mc | mis | tsp
    #[arg(long)]
    problem: String,
    /// Nodes per instance.
    #[arg(long)]
    n: Option<usize>,
    /// Edge probability (mc/mis).
    #[arg(long)]
    p: Option<f64>,
    /// Instances to generate.
    #[arg(long)]
    count: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "instances")]
    out: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// mc | mis | tsp
    #[arg(long)]
    problem: String,
    /// desk | paper
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Resume from (or, for tsp tuning, start from) this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for checkpoint, metrics and run log.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct SolveArgs {
    /// marco | nim | op-nim | marco-ind | greedy | nn | exact
    #[arg(long)]
    method: String,
    /// Policy checkpoint (required for neural methods).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Instance file; repeatable.
    #[arg(long = "instance", value_name = "FILE")]
    instances: Vec<PathBuf>,
    /// Directory of instance files (sorted by name).
    #[arg(long)]
    instances_dir: Option<PathBuf>,
    /// Problem for classical methods on sparse graphs (mc | mis).
    #[arg(long)]
    problem: Option<String>,
    /// Write one `<name>.result.json` per instance here instead of
    /// printing JSON to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel search lanes.
    #[arg(long)]
    threads: Option<usize>,
    /// Neighbors per memory retrieval.
    #[arg(long)]
    k: Option<usize>,
    /// Improvement step budget: a count, or a multiple like `2n`.
    #[arg(long)]
    max_steps: Option<String>,
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory of instance files.
    #[arg(long)]
    instances_dir: PathBuf,
    /// Checkpoint trained without memory features.
    #[arg(long)]
    nim: PathBuf,
    /// Checkpoint trained on operation-recency features.
    #[arg(long)]
    op_nim: PathBuf,
    /// Checkpoint trained on retrieved-memory features.
    #[arg(long)]
    marco: PathBuf,
    /// Label for the instance set in report rows.
    #[arg(long, default_value = "set")]
    label: String,
    /// Output directory for report.csv / report.json.
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// k | penalty | growth
    #[arg(long)]
    sweep: String,
    /// Comma-separated sweep values (k list, or penalty coefficients).
    #[arg(long)]
    values: Option<String>,
    /// Checkpoint for the k sweep.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of evaluation instances (k and penalty sweeps).
    #[arg(long)]
    instances_dir: Option<PathBuf>,
    /// Retrained models per penalty coefficient.
    #[arg(long, default_value_t = 2)]
    models_per: usize,
    /// mc | mis | tsp (penalty and growth sweeps).
    #[arg(long)]
    problem: Option<String>,
    /// Label for the instance set in report rows.
    #[arg(long, default_value = "set")]
    label: String,
    /// Profiled improvement steps (growth sweep).
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Output directory.
    #[arg(long, default_value = "bench")]
    out: PathBuf,
    #[command(flatten)]
    common: ConfigArgs,
}

/// A failure plus which exit class it belongs to.
struct Failure {
    msg: String,
    usage: bool,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Failure {
        Failure { msg: msg.into(), usage: true }
    }
    fn runtime(msg: impl Into<String>) -> Failure {
        Failure { msg: msg.into(), usage: false }
    }
}

/// Library errors that signal bad inputs map to the usage exit code;
/// everything else is a runtime failure.
impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let usage = matches!(
            e,
            Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Validation(_)
                | Error::Parse { .. }
                | Error::SizeLimit { .. }
        );
        Failure { msg: e.to_string(), usage }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Ablate(args) => cmd_ablate(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(if f.usage { 2 } else { 1 })
        }
    }
}

/// Profile defaults -> config file -> --set overrides -> --seed, then
/// the MARCO_THREADS cap, then validation with all failures listed.
fn resolve_config(
    problem: ProblemKind,
    profile: Profile,
    common: &ConfigArgs,
) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::new(problem, profile);
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let pairs = parse_config_text(&text).map_err(|e| Failure::usage(e.to_string()))?;
        cfg.apply_all(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    let mut pairs = Vec::new();
    for s in &common.sets {
        match s.split_once('=') {
            Some((k, v)) => pairs.push((k.trim().to_string(), v.trim().to_string())),
            None => return Err(Failure::usage(format!("--set expects key=value, got `{s}`"))),
        }
    }
    cfg.apply_all(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Ok(cap) = std::env::var("MARCO_THREADS") {
        let cap: usize = cap
            .parse()
            .map_err(|_| Failure::usage(format!("MARCO_THREADS must be a number, got `{cap}`")))?;
        if cap == 0 {
            return Err(Failure::usage("MARCO_THREADS must be positive"));
        }
        cfg.threads = cfg.threads.min(cap);
    }
    cfg.validate_all().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

/// Echo the effective configuration to stderr and into the run log.
fn echo_config(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let echo = cfg.echo();
    eprint!("{echo}");
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("run.log"), &echo)?;
    Ok(())
}

fn parse_problem(s: &str) -> Result<ProblemKind, Failure> {
    s.parse().map_err(|e: Error| Failure::usage(e.to_string()))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let problem = parse_problem(&args.problem)?;
    let mut cfg = resolve_config(problem, Profile::Desk, &args.common)?;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    if let Some(count) = args.count {
        cfg.count = count;
    }
    cfg.validate_all().map_err(|e| Failure::usage(e.to_string()))?;
    echo_config(&cfg, &args.out)?;

    let mut manifest = format!(
        "# problem={} n={} p={} count={} seed={}\n",
        cfg.problem, cfg.n, cfg.p, cfg.count, cfg.seed
    );
    for i in 0..cfg.count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let g = match problem {
            ProblemKind::Tsp => gen_tsp_uniform(cfg.n, seed),
            _ => gen_erdos_renyi(cfg.n, cfg.p, seed),
        };
        let name = format!("{}_{:04}.txt", cfg.problem, i);
        g.save(&args.out.join(&name))?;
        manifest.push_str(&format!("{name} {seed}\n"));
    }
    fs::write(args.out.join("manifest.txt"), manifest)?;
    println!("wrote {} instances to {}", cfg.count, args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let problem = parse_problem(&args.problem)?;
    let profile: Profile =
        args.profile.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let cfg = resolve_config(problem, profile, &args.common)?;
    echo_config(&cfg, &args.out)?;

    let resume = match &args.resume {
        None => None,
        Some(path) => {
            let (policy, state) = Policy::load(path)
                .map_err(|e| Failure::usage(format!("cannot resume {}: {e}", path.display())))?;
            let state = state.ok_or_else(|| {
                Failure::usage("checkpoint has no optimizer state; it cannot seed training")
            })?;
            Some((policy, state))
        }
    };
    if problem == ProblemKind::Tsp
        && cfg.tsp_phase == TspPhase::MemoryTuning
        && resume.is_none()
    {
        return Err(Failure::usage(
            "tsp_phase = tuning needs --resume with a backbone checkpoint",
        ));
    }

    let train_cfg = cfg.train_config();
    let started = Instant::now();
    let outcome = if problem == ProblemKind::Tsp {
        train_constructive(&train_cfg, resume)
    } else {
        train_improvement(&train_cfg, resume)
    }
    .map_err(|e| Failure::runtime(e.to_string()))?;

    let ckpt = args.out.join("policy.ckpt");
    outcome.policy.save(&ckpt, Some(&outcome.state))?;
    fs::write(args.out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    let last = outcome.metrics.last();
    println!(
        "trained {} episodes in {:.1}s; final mean reward {:.4}; checkpoint {}",
        outcome.metrics.len(),
        started.elapsed().as_secs_f64(),
        last.map(|r| r.mean_reward).unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

/// Gather --instance files plus the sorted contents of --instances-dir.
fn collect_instances(
    files: &[PathBuf],
    dir: Option<&PathBuf>,
) -> Result<Vec<(String, GraphInstance)>, Failure> {
    let mut paths: Vec<PathBuf> = files.to_vec();
    if let Some(dir) = dir {
        let mut found = Vec::new();
        for entry in fs::read_dir(dir)
            .map_err(|e| Failure::usage(format!("cannot read {}: {e}", dir.display())))?
        {
            let path = entry?.path();
            if path.extension().map(|x| x == "txt").unwrap_or(false)
                && path.file_name().map(|f| f != "manifest.txt").unwrap_or(false)
            {
                found.push(path);
            }
        }
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(Failure::usage("no instances given (use --instance or --instances-dir)"));
    }
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let g = GraphInstance::load(&path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "instance".into());
        out.push((name, g));
    }
    Ok(out)
}

/// A solved instance as the uniform result JSON, whichever engine
/// produced it.
fn baseline_result(problem: &str, objective: f64, bits: Option<Vec<u8>>, tour: Option<Vec<u32>>, wall: f64) -> SearchResult {
    SearchResult {
        problem: problem.to_string(),
        best_objective: objective,
        best_bits: bits,
        best_tour: tour,
        traces: Vec::new(),
        lane_tours: Vec::new(),
        revisit_count: 0,
        steps: 0,
        wall_time_s: wall,
        memory_entries: 0,
    }
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let neural = matches!(args.method.as_str(), "marco" | "nim" | "op-nim" | "marco-ind");
    let policy = match (&args.checkpoint, neural) {
        (Some(path), _) => Some(
            Policy::load(path)
                .map_err(|e| {
                    Failure::usage(format!("cannot load checkpoint {}: {e}", path.display()))
                })?
                .0,
        ),
        (None, true) => {
            return Err(Failure::usage(format!(
                "--method {} needs --checkpoint with a trained policy",
                args.method
            )))
        }
        (None, false) => None,
    };

    // Problem: from the checkpoint for neural methods, from --problem
    // or the instance kind otherwise.
    let instances = collect_instances(&args.instances, args.instances_dir.as_ref())?;
    let problem = match (&policy, &args.problem) {
        (Some(p), _) => p.problem,
        (None, Some(s)) => parse_problem(s)?,
        (None, None) => match instances[0].1.kind {
            InstanceKind::CompleteMetric => ProblemKind::Tsp,
            InstanceKind::Sparse => {
                return Err(Failure::usage(
                    "sparse instances are ambiguous for classical methods; pass --problem mc|mis",
                ))
            }
        },
    };

    let mut cfg = resolve_config(problem, Profile::Desk, &args.common)?;
    let mode = match args.method.as_str() {
        "marco" => MemoryMode::Shared,
        "marco-ind" => MemoryMode::Independent,
        "op-nim" => MemoryMode::OpBased,
        "nim" => MemoryMode::None,
        "greedy" | "nn" | "exact" => cfg.memory_mode,
        other => {
            return Err(Failure::usage(format!(
                "unknown method `{other}` (expected marco|nim|op-nim|marco-ind|greedy|nn|exact)"
            )))
        }
    };
    cfg.memory_mode = mode;
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(ms) = &args.max_steps {
        cfg.max_steps = ms.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    }
    cfg.validate_all().map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(dir) = &args.out {
        echo_config(&cfg, dir)?;
    } else {
        eprint!("{}", cfg.echo());
    }

    for (idx, (name, g)) in instances.iter().enumerate() {
        let mut search_cfg = cfg.search_config(g.n);
        search_cfg.seed = cfg.seed.wrapping_add(idx as u64);
        let started = Instant::now();
        let result = match (args.method.as_str(), problem) {
            ("greedy", ProblemKind::Mis) => {
                let sol = greedy_mis(g);
                let obj = mis_objective(g, &sol)?;
                baseline_result("mis", obj as f64, Some(sol.bits), None, started.elapsed().as_secs_f64())
            }
            ("greedy", _) => {
                return Err(Failure::usage("--method greedy applies to mis only"))
            }
            ("nn", ProblemKind::Tsp) => {
                let tour = nearest_neighbor_tsp(g, 0)?;
                let len = tsp_tour_length(g, &tour)?;
                baseline_result("tsp", len, None, Some(tour.perm), started.elapsed().as_secs_f64())
            }
            ("nn", _) => return Err(Failure::usage("--method nn applies to tsp only")),
            ("exact", ProblemKind::MaxCut) => {
                let (sol, obj) = brute_force_mc(g)?;
                baseline_result("mc", obj as f64, Some(sol.bits), None, started.elapsed().as_secs_f64())
            }
            ("exact", ProblemKind::Mis) => {
                let (sol, obj) = brute_force_mis(g)?;
                baseline_result("mis", obj as f64, Some(sol.bits), None, started.elapsed().as_secs_f64())
            }
            ("exact", ProblemKind::Tsp) => {
                let (tour, len) = brute_force_tsp(g)?;
                baseline_result("tsp", len, None, Some(tour.perm), started.elapsed().as_secs_f64())
            }
            (_, ProblemKind::Tsp) => {
                let policy = policy.as_ref().expect("neural method checked above");
                if mode == MemoryMode::OpBased {
                    return Err(Failure::usage(
                        "op-nim is an improvement-mode method; tsp supports marco, marco-ind and nim",
                    ));
                }
                marco_construct(g, policy, &search_cfg)?
            }
            _ => {
                let policy = policy.as_ref().expect("neural method checked above");
                marco_improve(g, policy, &search_cfg)?
            }
        };
        let json = result.to_json();
        match &args.out {
            Some(dir) => {
                fs::write(dir.join(format!("{name}.result.json")), &json)?;
                println!("{name}: {} = {:.4}", result.problem, result.best_objective);
            }
            None => println!("{json}"),
        }
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Failure> {
    let load = |path: &PathBuf| -> Result<Policy, Failure> {
        Ok(Policy::load(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            .0)
    };
    let ckpts = AblationCheckpoints {
        nim: load(&args.nim)?,
        op_nim: load(&args.op_nim)?,
        marco: load(&args.marco)?,
    };
    let problem = ckpts.nim.problem;
    let instances = collect_instances(&[], Some(&args.instances_dir))?;
    let cfg = resolve_config(problem, Profile::Desk, &args.common)?;
    echo_config(&cfg, &args.out)?;

    let graphs: Vec<GraphInstance> = instances.iter().map(|(_, g)| g.clone()).collect();
    let n = graphs.iter().map(|g| g.n).max().unwrap_or(2);
    let report = run_ablation(&graphs, &args.label, &ckpts, &cfg.search_config(n))
        .map_err(Failure::from)?;
    write_report(&report, &args.out)?;
    Ok(())
}

fn write_report(report: &BenchReport, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("report.json"), report.to_json())?;
    print!("{}", report.to_csv());
    println!("report written to {}", out.display());
    Ok(())
}

fn parse_values<T: std::str::FromStr>(s: &Option<String>, what: &str) -> Result<Vec<T>, Failure> {
    let s = s
        .as_ref()
        .ok_or_else(|| Failure::usage(format!("--values is required for the {what} sweep")))?;
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Failure::usage(format!("bad sweep value `{v}`")))
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    match args.sweep.as_str() {
        "k" => {
            let ks: Vec<usize> = parse_values(&args.values, "k")?;
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| Failure::usage("k sweep needs --checkpoint"))?;
            let policy = Policy::load(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
                .0;
            let instances = collect_instances(
                &[],
                Some(args.instances_dir.as_ref().ok_or_else(|| {
                    Failure::usage("k sweep needs --instances-dir")
                })?),
            )?;
            let cfg = resolve_config(policy.problem, Profile::Desk, &args.common)?;
            echo_config(&cfg, &args.out)?;
            let graphs: Vec<GraphInstance> = instances.iter().map(|(_, g)| g.clone()).collect();
            let n = graphs.iter().map(|g| g.n).max().unwrap_or(2);
            let report = sweep_k(&graphs, &args.label, &policy, &cfg.search_config(n), &ks)?;
            write_report(&report, &args.out)
        }
        "penalty" => {
            let w_ps: Vec<f64> = parse_values(&args.values, "penalty")?;
            let problem = parse_problem(
                args.problem
                    .as_deref()
                    .ok_or_else(|| Failure::usage("penalty sweep needs --problem"))?,
            )?;
            let instances = collect_instances(
                &[],
                Some(args.instances_dir.as_ref().ok_or_else(|| {
                    Failure::usage("penalty sweep needs --instances-dir")
                })?),
            )?;
            let cfg = resolve_config(problem, Profile::Desk, &args.common)?;
            echo_config(&cfg, &args.out)?;
            let graphs: Vec<GraphInstance> = instances.iter().map(|(_, g)| g.clone()).collect();
            let n = graphs.iter().map(|g| g.n).max().unwrap_or(2);
            let report = sweep_penalty(
                &cfg.train_config(),
                &w_ps,
                args.models_per,
                &graphs,
                &args.label,
                &cfg.search_config(n),
            )?;
            write_report(&report, &args.out)
        }
        "growth" => {
            let problem = parse_problem(args.problem.as_deref().unwrap_or("mc"))?;
            let cfg = resolve_config(problem, Profile::Desk, &args.common)?;
            echo_config(&cfg, &args.out)?;
            let csv = memory_growth_profile(
                problem,
                cfg.n,
                cfg.threads,
                cfg.capacity,
                args.steps,
                cfg.seed,
            )?;
            let rows = memory_growth_rows(
                problem,
                cfg.n,
                cfg.threads,
                cfg.capacity,
                args.steps,
                cfg.seed,
            )?;
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("growth.csv"), &csv)?;
            fs::write(
                args.out.join("growth.json"),
                serde_json::to_string_pretty(&rows).expect("growth rows are plain data"),
            )?;
            print!("{csv}");
            println!("profile written to {}", args.out.display());
            Ok(())
        }
        other => Err(Failure::usage(format!(
            "unknown sweep `{other}` (expected k|penalty|growth)"
        ))),
    }
}

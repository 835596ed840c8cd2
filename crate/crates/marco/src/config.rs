//! Run configuration: a flat `key = value` view over training, search,
//! and generation settings, merged from profile defaults, an optional
//! config file, and command-line overrides (in that order). Unknown
//! keys are rejected, problems are reported all at once, and the full
//! effective configuration can be echoed for auditable runs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::{AttnVariant, EncoderConfig};
use crate::problems::ProblemKind;
use crate::search::{MemoryMode, SearchConfig, SelectionRule};
use crate::training::{TrainConfig, TspPhase};

/// Which default set a run starts from: `desk` is sized for commodity
/// hardware with exhaustive oracles; `paper` mirrors the published
/// hyperparameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk|paper)"))),
        }
    }
}

/// Improvement step budget: a fixed count, or a multiple of the
/// instance size written as `2n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxSteps {
    Fixed(usize),
    TimesN(usize),
}

impl MaxSteps {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            MaxSteps::Fixed(v) => v,
            MaxSteps::TimesN(m) => m * n,
        }
    }
}

impl fmt::Display for MaxSteps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxSteps::Fixed(v) => write!(f, "{v}"),
            MaxSteps::TimesN(m) => write!(f, "{m}n"),
        }
    }
}

impl FromStr for MaxSteps {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parse_err =
            || Error::Config(format!("bad max_steps `{s}` (expected a count like 100, or 2n)"));
        if let Some(mult) = s.strip_suffix('n') {
            let m: usize = mult.parse().map_err(|_| parse_err())?;
            if m == 0 {
                return Err(parse_err());
            }
            Ok(MaxSteps::TimesN(m))
        } else {
            let v: usize = s.parse().map_err(|_| parse_err())?;
            Ok(MaxSteps::Fixed(v))
        }
    }
}

fn parse_attn(s: &str) -> Result<AttnVariant> {
    match s {
        "modulated" => Ok(AttnVariant::Modulated),
        "additive" => Ok(AttnVariant::Additive),
        other => Err(Error::Config(format!(
            "unknown attention variant `{other}` (expected modulated|additive)"
        ))),
    }
}

fn attn_label(v: AttnVariant) -> &'static str {
    match v {
        AttnVariant::Modulated => "modulated",
        AttnVariant::Additive => "additive",
    }
}

/// Every setting a command can consume, fully resolved. Field defaults
/// come from the chosen profile; `apply_all` then merges file and
/// command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub profile: Profile,
    pub memory_mode: MemoryMode,
    pub tsp_phase: TspPhase,
    pub seed: u64,
    // Training.
    pub episodes: usize,
    pub batch: usize,
    pub t_ep: usize,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub penalty: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub k: usize,
    pub capacity: usize,
    pub constructions: usize,
    pub start_cap: usize,
    pub retrieval_frequency: usize,
    // Network.
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub tanh_clip: f64,
    pub mem_hidden: usize,
    pub attn_variant: AttnVariant,
    // Search.
    pub threads: usize,
    pub max_steps: MaxSteps,
    pub selection: SelectionRule,
    // Generation / benchmark workloads.
    pub n: usize,
    pub p: f64,
    pub count: usize,
}

impl RunConfig {
    pub fn new(problem: ProblemKind, profile: Profile) -> RunConfig {
        let train = match (profile, problem) {
            (Profile::Desk, ProblemKind::MaxCut) => TrainConfig::desk_mc(MemoryMode::Shared, 0),
            (Profile::Desk, ProblemKind::Mis) => TrainConfig::desk_mis(MemoryMode::Shared, 0),
            (Profile::Desk, ProblemKind::Tsp) => TrainConfig::desk_tsp(0),
            (Profile::Paper, _) => TrainConfig::paper(problem),
        };
        let search = if problem == ProblemKind::Tsp {
            SearchConfig::construct_defaults()
        } else {
            SearchConfig::improve_defaults(1)
        };
        RunConfig {
            problem,
            profile,
            memory_mode: MemoryMode::Shared,
            tsp_phase: train.tsp_phase,
            seed: train.seed,
            episodes: train.episodes,
            batch: train.batch,
            t_ep: train.t_ep,
            gamma: train.gamma,
            lr: train.lr,
            weight_decay: train.weight_decay,
            grad_clip: train.grad_clip,
            penalty: train.penalty,
            n_min: train.n_min,
            n_max: train.n_max,
            p_min: train.p_min,
            p_max: train.p_max,
            k: search.k,
            capacity: search.capacity,
            constructions: search.constructions,
            start_cap: train.start_cap,
            retrieval_frequency: search.retrieval_frequency,
            embed_dim: train.net.embed_dim,
            layers: train.net.layers,
            heads: train.net.heads,
            ffn_hidden: train.net.ffn_hidden,
            tanh_clip: train.net.tanh_clip,
            mem_hidden: train.net.mem_hidden,
            attn_variant: train.net.attn_variant,
            threads: search.threads,
            max_steps: MaxSteps::TimesN(2),
            selection: search.selection,
            n: 50,
            p: 0.15,
            count: 10,
        }
    }

    /// Apply one `key = value` setting. Unknown keys and unparsable
    /// values are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "problem" => self.problem = value.parse()?,
            "profile" => {
                let profile: Profile = value.parse()?;
                if profile != self.profile {
                    return Err(Error::Config(
                        "profile must be chosen up front (it sets the defaults other keys \
                         override); pass it as a flag, not in the config file"
                            .into(),
                    ));
                }
            }
            "memory_mode" => self.memory_mode = value.parse()?,
            "tsp_phase" => {
                self.tsp_phase = match value {
                    "backbone" => TspPhase::Backbone,
                    "tuning" => TspPhase::MemoryTuning,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown tsp_phase `{other}` (expected backbone|tuning)"
                        )))
                    }
                }
            }
            "seed" => self.seed = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "t_ep" => self.t_ep = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "penalty" => self.penalty = num(key, value)?,
            "n_min" => self.n_min = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "p_min" => self.p_min = num(key, value)?,
            "p_max" => self.p_max = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "capacity" => self.capacity = num(key, value)?,
            "constructions" => self.constructions = num(key, value)?,
            "start_cap" => self.start_cap = num(key, value)?,
            "retrieval_frequency" => self.retrieval_frequency = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ffn_hidden" => self.ffn_hidden = num(key, value)?,
            "tanh_clip" => self.tanh_clip = num(key, value)?,
            "mem_hidden" => self.mem_hidden = num(key, value)?,
            "attn_variant" => self.attn_variant = parse_attn(value)?,
            "threads" => self.threads = num(key, value)?,
            "max_steps" => self.max_steps = value.parse()?,
            "selection" => self.selection = value.parse()?,
            "n" => self.n = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "count" => self.count = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a batch of settings, reporting every problem at once
    /// rather than stopping at the first.
    pub fn apply_all<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut problems = Vec::new();
        for (key, value) in pairs {
            if let Err(e) = self.apply(key, value) {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Range checks across the merged configuration, all failures
    /// collected.
    pub fn validate_all(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                problems.push(msg.to_string());
            }
        };
        check(self.batch > 0, "batch must be positive");
        check(self.episodes > 0, "episodes must be positive");
        check(self.t_ep > 0, "t_ep must be positive");
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must be in (0, 1]");
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        check(self.weight_decay >= 0.0, "weight_decay must be non-negative");
        check(self.grad_clip > 0.0, "grad_clip must be positive");
        check(self.penalty >= 0.0, "penalty must be non-negative");
        check(self.n_min >= 2 && self.n_min <= self.n_max, "need 2 <= n_min <= n_max");
        if self.problem != ProblemKind::Tsp {
            check(
                0.0 < self.p_min && self.p_min <= self.p_max && self.p_max < 1.0,
                "need 0 < p_min <= p_max < 1",
            );
            check(0.0 < self.p && self.p < 1.0, "need 0 < p < 1");
        }
        check(self.k > 0, "k must be positive");
        check(self.capacity > 0, "capacity must be positive");
        check(self.constructions > 0, "constructions must be positive");
        check(self.start_cap > 0, "start_cap must be positive");
        check(self.retrieval_frequency > 0, "retrieval_frequency must be positive");
        check(self.embed_dim > 0 && self.heads > 0, "embed_dim and heads must be positive");
        check(
            self.heads == 0 || self.embed_dim % self.heads == 0,
            "embed_dim must be divisible by heads",
        );
        check(self.layers > 0, "layers must be positive");
        check(self.ffn_hidden > 0 && self.mem_hidden > 0, "hidden widths must be positive");
        check(self.tanh_clip > 0.0, "tanh_clip must be positive");
        check(self.threads > 0, "threads must be positive");
        check(self.n >= 2, "n must be at least 2");
        check(self.count > 0, "count must be positive");
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn net(&self) -> EncoderConfig {
        EncoderConfig {
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            tanh_clip: self.tanh_clip,
            mem_hidden: self.mem_hidden,
            attn_variant: self.attn_variant,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.problem);
        cfg.memory_mode = self.memory_mode;
        cfg.tsp_phase = self.tsp_phase;
        cfg.net = self.net();
        cfg.episodes = self.episodes;
        cfg.batch = self.batch;
        cfg.t_ep = self.t_ep;
        cfg.gamma = self.gamma;
        cfg.lr = self.lr;
        cfg.weight_decay = self.weight_decay;
        cfg.grad_clip = self.grad_clip;
        cfg.penalty = self.penalty;
        cfg.n_min = self.n_min;
        cfg.n_max = self.n_max;
        cfg.p_min = self.p_min;
        cfg.p_max = self.p_max;
        cfg.k = self.k;
        cfg.capacity = self.capacity;
        cfg.constructions = self.constructions;
        cfg.start_cap = self.start_cap;
        cfg.retrieval_frequency = self.retrieval_frequency;
        cfg.seed = self.seed;
        cfg
    }

    /// Search settings for an instance of `n` nodes (the step budget
    /// may scale with n).
    pub fn search_config(&self, n: usize) -> SearchConfig {
        let mut cfg = if self.problem == ProblemKind::Tsp {
            SearchConfig::construct_defaults()
        } else {
            SearchConfig::improve_defaults(n)
        };
        cfg.memory_mode = self.memory_mode;
        cfg.threads = self.threads;
        cfg.k = self.k;
        cfg.max_steps = self.max_steps.resolve(n);
        cfg.constructions = self.constructions;
        cfg.retrieval_frequency = self.retrieval_frequency;
        cfg.selection = self.selection;
        cfg.seed = self.seed;
        cfg.capacity = self.capacity;
        cfg
    }

    /// Every effective value, one `key = value` line per setting, in a
    /// stable order. This is the run log's audit block.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("problem", self.problem.to_string());
        line("profile", self.profile.to_string());
        line("memory_mode", self.memory_mode.to_string());
        line(
            "tsp_phase",
            match self.tsp_phase {
                TspPhase::Backbone => "backbone".into(),
                TspPhase::MemoryTuning => "tuning".into(),
            },
        );
        line("seed", self.seed.to_string());
        line("episodes", self.episodes.to_string());
        line("batch", self.batch.to_string());
        line("t_ep", self.t_ep.to_string());
        line("gamma", self.gamma.to_string());
        line("lr", self.lr.to_string());
        line("weight_decay", self.weight_decay.to_string());
        line("grad_clip", self.grad_clip.to_string());
        line("penalty", self.penalty.to_string());
        line("n_min", self.n_min.to_string());
        line("n_max", self.n_max.to_string());
        line("p_min", self.p_min.to_string());
        line("p_max", self.p_max.to_string());
        line("k", self.k.to_string());
        line("capacity", self.capacity.to_string());
        line("constructions", self.constructions.to_string());
        line("start_cap", self.start_cap.to_string());
        line("retrieval_frequency", self.retrieval_frequency.to_string());
        line("embed_dim", self.embed_dim.to_string());
        line("layers", self.layers.to_string());
        line("heads", self.heads.to_string());
        line("ffn_hidden", self.ffn_hidden.to_string());
        line("tanh_clip", self.tanh_clip.to_string());
        line("mem_hidden", self.mem_hidden.to_string());
        line("attn_variant", attn_label(self.attn_variant).to_string());
        line("threads", self.threads.to_string());
        line("max_steps", self.max_steps.to_string());
        line("selection", self.selection.to_string());
        line("n", self.n.to_string());
        line("p", self.p.to_string());
        line("count", self.count.to_string());
        out
    }
}

/// Parse `key = value` config text: one pair per line, `#` comments and
/// blank lines ignored. Malformed lines are reported all at once.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut problems = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                let key = key.trim();
                let value = value.trim();
                if key.is_empty() || value.is_empty() {
                    problems.push(format!("line {}: empty key or value", idx + 1));
                } else {
                    pairs.push((key.to_string(), value.to_string()));
                }
            }
            None => problems.push(format!("line {}: expected `key = value`, got `{line}`", idx + 1)),
        }
    }
    if problems.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

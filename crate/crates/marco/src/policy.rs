//! The policy network: a graph transformer whose attention is aware of
//! edge features, with two output heads — a per-node scoring head for
//! flip-improvement search (MaxCut / MIS) and an autoregressive decoder
//! for tour construction (TSP).
//!
//! Architecture, per layer: multi-head attention where each head h
//! computes `softmax(QKᵀ/√d_k + E_h)` with `E_h` a learned linear
//! combination of per-pair edge feature matrices; the attention matrix
//! is then elementwise-modulated by `E_h` before multiplying V (the
//! encoder variant) or used as-is (the additive variant, used by the
//! decoder); residual + layer norm; a SwiGLU feed-forward; residual +
//! layer norm. Head outputs are tanh-clipped to ±`tanh_clip`.
//!
//! Retrieved memory enters in problem-specific ways: improvement models
//! receive it as an extra node feature; the constructive decoder passes
//! the retrieved edge-weight row of the current city through a small
//! bias-free feed-forward (zero input ⇒ zero effect) and adds the
//! result to its glimpse attention scores. That feed-forward is the
//! only part trained in the second constructive training phase.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::instances::GraphInstance;
use crate::nn::{init_uniform, Mat, NodeId, ParamId, ParamSet, Tape};
use crate::problems::ProblemKind;
use crate::rng::rng_from_seed;

/// Logit value used to mask infeasible actions before sampling.
pub const MASK_NEG: f64 = -1e30;

/// How the edge bias enters attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnVariant {
    /// `(softmax(QKᵀ/√d_k + E) ⊙ E) V` — edge bias added to the scores
    /// and modulating the attention matrix.
    Modulated,
    /// `softmax(QKᵀ/√d_k + E) V` — edge bias added to the scores only.
    Additive,
}

/// Which node features a model consumes (fixes input width and
/// checkpoint compatibility).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// [current bit, best-so-far bit] — the no-memory improvement model.
    Plain,
    /// [current bit, best bit, steps-since-flip] — op-recency ablation.
    OpRecency,
    /// [current bit, best bit, retrieved value] — memory-augmented.
    Retrieved,
    /// [x, y] city coordinates — constructive TSP model.
    Coords,
}

impl FeatureKind {
    pub fn node_feature_count(self) -> usize {
        match self {
            FeatureKind::Plain | FeatureKind::Coords => 2,
            FeatureKind::OpRecency | FeatureKind::Retrieved => 3,
        }
    }

    /// Number of per-pair edge feature matrices the encoder consumes.
    pub fn edge_feature_count(self) -> usize {
        match self {
            // Adjacency indicator.
            FeatureKind::Plain | FeatureKind::OpRecency | FeatureKind::Retrieved => 1,
            // Distance matrix + retrieved edge weights.
            FeatureKind::Coords => 2,
        }
    }

    fn tag(self) -> u8 {
        match self {
            FeatureKind::Plain => 0,
            FeatureKind::OpRecency => 1,
            FeatureKind::Retrieved => 2,
            FeatureKind::Coords => 3,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => FeatureKind::Plain,
            1 => FeatureKind::OpRecency,
            2 => FeatureKind::Retrieved,
            3 => FeatureKind::Coords,
            other => return Err(Error::Checkpoint(format!("unknown feature tag {other}"))),
        })
    }
}

/// Network shape hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub tanh_clip: f64,
    /// Hidden width of the decoder's memory feed-forward path.
    pub mem_hidden: usize,
    pub attn_variant: AttnVariant,
}

impl EncoderConfig {
    pub fn d_k(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.ffn_hidden == 0 || self.mem_hidden == 0 {
            return Err(Error::Config("all network dimensions must be >= 1".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.tanh_clip <= 0.0 {
            return Err(Error::Config("tanh_clip must be positive".into()));
        }
        Ok(())
    }

    /// Small network for minute-scale CPU training runs.
    pub fn desk() -> Self {
        EncoderConfig {
            embed_dim: 32,
            layers: 2,
            heads: 4,
            ffn_hidden: 64,
            tanh_clip: 10.0,
            mem_hidden: 8,
            attn_variant: AttnVariant::Modulated,
        }
    }

    /// Full-size preset for the bit-vector problems.
    pub fn full_improvement() -> Self {
        EncoderConfig {
            embed_dim: 64,
            layers: 3,
            heads: 8,
            ffn_hidden: 512,
            tanh_clip: 10.0,
            mem_hidden: 16,
            attn_variant: AttnVariant::Modulated,
        }
    }

    /// Full-size preset for tour construction.
    pub fn full_constructive() -> Self {
        EncoderConfig {
            embed_dim: 512,
            layers: 6,
            heads: 16,
            ffn_hidden: 2048,
            tanh_clip: 10.0,
            mem_hidden: 32,
            attn_variant: AttnVariant::Modulated,
        }
    }
}

/// A policy: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct Policy {
    pub cfg: EncoderConfig,
    pub problem: ProblemKind,
    pub features: FeatureKind,
    pub params: ParamSet,
}

/// Optimizer moments and progress counters stored alongside parameters
/// so training can resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub step: u64,
    pub episodes: u64,
}

fn build_params(
    cfg: &EncoderConfig,
    features: FeatureKind,
    constructive: bool,
    seed: u64,
) -> ParamSet {
    let mut rng = rng_from_seed(seed);
    let d = cfg.embed_dim;
    let dk = cfg.d_k();
    let fe = features.edge_feature_count();
    let fnode = features.node_feature_count();
    let mut ps = ParamSet::new();

    ps.add("input.w", init_uniform(fnode, d, fnode, &mut rng));
    ps.add("input.b", init_uniform(1, d, d, &mut rng));

    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            ps.add(format!("l{l}.h{h}.wq"), init_uniform(d, dk, d, &mut rng));
            ps.add(format!("l{l}.h{h}.wk"), init_uniform(d, dk, d, &mut rng));
            ps.add(format!("l{l}.h{h}.wv"), init_uniform(d, dk, d, &mut rng));
            ps.add(format!("l{l}.h{h}.wo"), init_uniform(dk, d, dk, &mut rng));
            // Edge-feature coefficients. The retrieved-weight column of
            // a constructive encoder starts at 0 so the first training
            // phase (which never sees memory) leaves the encoder
            // genuinely memory-free.
            let mut we = init_uniform(1, fe, fe, &mut rng);
            if constructive && fe == 2 {
                we.data[1] = 0.0;
            }
            ps.add(format!("l{l}.h{h}.we"), we);
        }
        ps.add(format!("l{l}.ln1.g"), Mat::from_vec(1, d, vec![1.0; d]));
        ps.add(format!("l{l}.ln1.b"), Mat::zeros(1, d));
        ps.add(format!("l{l}.ffn.w1"), init_uniform(d, cfg.ffn_hidden, d, &mut rng));
        ps.add(format!("l{l}.ffn.w2"), init_uniform(d, cfg.ffn_hidden, d, &mut rng));
        ps.add(format!("l{l}.ffn.w3"), init_uniform(cfg.ffn_hidden, d, cfg.ffn_hidden, &mut rng));
        ps.add(format!("l{l}.ln2.g"), Mat::from_vec(1, d, vec![1.0; d]));
        ps.add(format!("l{l}.ln2.b"), Mat::zeros(1, d));
    }

    if constructive {
        ps.add("dec.wc_mean", init_uniform(d, d, d, &mut rng));
        ps.add("dec.wc_first", init_uniform(d, d, d, &mut rng));
        ps.add("dec.wc_last", init_uniform(d, d, d, &mut rng));
        for h in 0..cfg.heads {
            ps.add(format!("dec.h{h}.wq"), init_uniform(d, dk, d, &mut rng));
            ps.add(format!("dec.h{h}.wk"), init_uniform(d, dk, d, &mut rng));
            ps.add(format!("dec.h{h}.wv"), init_uniform(d, dk, d, &mut rng));
            ps.add(format!("dec.h{h}.wo"), init_uniform(dk, d, dk, &mut rng));
            ps.add(format!("dec.h{h}.cdist"), init_uniform(1, 1, 1, &mut rng));
        }
        ps.add("dec.wp", init_uniform(d, d, d, &mut rng));
        ps.add("dec.mem_ff.u", init_uniform(1, cfg.mem_hidden, 1, &mut rng));
        ps.add("dec.mem_ff.v", init_uniform(cfg.mem_hidden, cfg.heads, cfg.mem_hidden, &mut rng));
    } else {
        ps.add("head.w1", init_uniform(d, d, d, &mut rng));
        ps.add("head.b1", init_uniform(1, d, d, &mut rng));
        ps.add("head.w2", init_uniform(d, 1, d, &mut rng));
        ps.add("head.b2", init_uniform(1, 1, d, &mut rng));
    }
    ps
}

impl Policy {
    /// Fresh improvement policy (MaxCut or MIS).
    pub fn new_improvement(
        problem: ProblemKind,
        features: FeatureKind,
        cfg: EncoderConfig,
        seed: u64,
    ) -> Result<Policy> {
        cfg.validate()?;
        if !problem.is_improvement() {
            return Err(Error::Config("improvement policy needs MaxCut or MIS".into()));
        }
        if features == FeatureKind::Coords {
            return Err(Error::Config("coordinate features are for constructive models".into()));
        }
        let params = build_params(&cfg, features, false, seed);
        Ok(Policy { cfg, problem, features, params })
    }

    /// Fresh constructive policy (TSP).
    pub fn new_constructive(cfg: EncoderConfig, seed: u64) -> Result<Policy> {
        cfg.validate()?;
        let params = build_params(&cfg, FeatureKind::Coords, true, seed);
        Ok(Policy { cfg, problem: ProblemKind::Tsp, features: FeatureKind::Coords, params })
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        (0..self.params.len()).find(|&i| self.params.name(i) == name)
    }

    /// Parameter ids of the decoder's memory feed-forward — the only
    /// group updated by the second constructive training phase.
    pub fn memory_path_ids(&self) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| self.params.name(i).starts_with("dec.mem_ff."))
            .collect()
    }
}

/// Edge-aware scaled-dot-product attention for one head.
///
/// `q`, `k`, `v` are (n×d_k) nodes, `e` an (n×n) edge-bias node.
/// Scores are `QKᵀ/√d_k + E`; the softmax'd matrix is multiplied
/// elementwise by `E` before the value product in the modulated
/// variant, or used directly in the additive variant.
pub fn edge_aware_attention(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    e: NodeId,
    d_k: usize,
    variant: AttnVariant,
) -> NodeId {
    let kt = tape.transpose(k);
    let qk = tape.matmul(q, kt);
    let scaled = tape.scale(qk, 1.0 / (d_k as f64).sqrt());
    let scores = tape.add(scaled, e);
    let attn = tape.softmax_rows(scores);
    let weights = match variant {
        AttnVariant::Modulated => tape.mul(attn, e),
        AttnVariant::Additive => attn,
    };
    tape.matmul(weights, v)
}

/// SwiGLU feed-forward: `(silu(x·W1) ⊙ (x·W2))·W3`, no biases.
pub fn swiglu(tape: &mut Tape, x: NodeId, w1: NodeId, w2: NodeId, w3: NodeId) -> NodeId {
    let gate_in = tape.matmul(x, w1);
    let gate = tape.silu(gate_in);
    let up = tape.matmul(x, w2);
    let gated = tape.mul(gate, up);
    tape.matmul(gated, w3)
}

/// Run the encoder over node features (n×F_n) and per-feature edge
/// matrices (each n×n). Returns the (n×d) embedding node.
pub fn encode(
    tape: &mut Tape,
    policy: &Policy,
    node_feats: Mat,
    edge_feats: &[Mat],
) -> Result<NodeId> {
    let cfg = &policy.cfg;
    if node_feats.cols != policy.features.node_feature_count() {
        return Err(Error::LengthMismatch {
            expected: policy.features.node_feature_count(),
            got: node_feats.cols,
        });
    }
    if edge_feats.len() != policy.features.edge_feature_count() {
        return Err(Error::LengthMismatch {
            expected: policy.features.edge_feature_count(),
            got: edge_feats.len(),
        });
    }
    let n = node_feats.rows;
    for ef in edge_feats {
        if ef.rows != n || ef.cols != n {
            return Err(Error::Validation("edge feature matrix must be n×n".into()));
        }
    }
    if !node_feats.is_finite() || edge_feats.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("encoder inputs".into()));
    }

    let x0 = tape.constant(node_feats);
    let w_in = tape.param(&policy.params, policy.param_id("input.w").unwrap());
    let b_in = tape.param(&policy.params, policy.param_id("input.b").unwrap());
    let proj = tape.matmul(x0, w_in);
    let mut x = tape.add_row(proj, b_in);

    let dk = cfg.d_k();
    for l in 0..cfg.layers {
        // Multi-head edge-aware attention; per-head outputs are
        // projected back to width d and summed (equivalent to
        // concatenation followed by one d×d output projection).
        let mut attn_sum: Option<NodeId> = None;
        for h in 0..cfg.heads {
            let wq = tape.param(&policy.params, policy.param_id(&format!("l{l}.h{h}.wq")).unwrap());
            let wk = tape.param(&policy.params, policy.param_id(&format!("l{l}.h{h}.wk")).unwrap());
            let wv = tape.param(&policy.params, policy.param_id(&format!("l{l}.h{h}.wv")).unwrap());
            let wo = tape.param(&policy.params, policy.param_id(&format!("l{l}.h{h}.wo")).unwrap());
            let we = tape.param(&policy.params, policy.param_id(&format!("l{l}.h{h}.we")).unwrap());
            let q = tape.matmul(x, wq);
            let k = tape.matmul(x, wk);
            let v = tape.matmul(x, wv);
            let e = tape.lin_comb(we, edge_feats.to_vec());
            let head = edge_aware_attention(tape, q, k, v, e, dk, cfg.attn_variant);
            let out = tape.matmul(head, wo);
            attn_sum = Some(match attn_sum {
                None => out,
                Some(acc) => tape.add(acc, out),
            });
        }
        let attn = attn_sum.expect("at least one head");
        let res1 = tape.add(x, attn);
        let g1 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ln1.g")).unwrap());
        let b1 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ln1.b")).unwrap());
        let normed1 = tape.layer_norm(res1, g1, b1);

        let w1 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ffn.w1")).unwrap());
        let w2 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ffn.w2")).unwrap());
        let w3 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ffn.w3")).unwrap());
        let ffn = swiglu(tape, normed1, w1, w2, w3);
        let res2 = tape.add(normed1, ffn);
        let g2 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ln2.g")).unwrap());
        let b2 = tape.param(&policy.params, policy.param_id(&format!("l{l}.ln2.b")).unwrap());
        x = tape.layer_norm(res2, g2, b2);
    }
    Ok(x)
}

/// Per-node flip scores from embeddings: a shared two-layer head with
/// tanh clipping. Returns a (1×n) logits node.
pub fn improvement_logits(tape: &mut Tape, policy: &Policy, emb: NodeId) -> NodeId {
    let w1 = tape.param(&policy.params, policy.param_id("head.w1").unwrap());
    let b1 = tape.param(&policy.params, policy.param_id("head.b1").unwrap());
    let w2 = tape.param(&policy.params, policy.param_id("head.w2").unwrap());
    let b2 = tape.param(&policy.params, policy.param_id("head.b2").unwrap());
    let h_in = tape.matmul(emb, w1);
    let h_b = tape.add_row(h_in, b1);
    let h = tape.silu(h_b);
    let o_in = tape.matmul(h, w2);
    let o = tape.add_row(o_in, b2); // n×1
    let t = tape.tanh(o);
    let clipped = tape.scale(t, policy.cfg.tanh_clip);
    tape.transpose(clipped) // 1×n
}

/// One constructive decoding step: score every city given the partial
/// tour. Returns (1×n) logits with visited cities masked to
/// [`MASK_NEG`]; tanh clipping is applied before masking.
///
/// `dist` is the n×n distance matrix; `mem` the n×n retrieved
/// edge-weight matrix (all zeros when memory is empty or unqueried —
/// in that case the memory path contributes exactly nothing).
pub fn decoder_step(
    tape: &mut Tape,
    policy: &Policy,
    emb: NodeId,
    partial: &[u32],
    dist: &Mat,
    mem: &Mat,
) -> Result<NodeId> {
    let n = tape.value(emb).rows;
    assert_eq!(dist.rows, n);
    assert_eq!(dist.cols, n);
    assert_eq!(mem.rows, n);
    assert_eq!(mem.cols, n);
    if partial.is_empty() {
        return Err(Error::Validation("decoder needs at least a start node".into()));
    }
    if partial.len() >= n {
        return Err(Error::AllMasked);
    }
    let cfg = &policy.cfg;
    let dk = cfg.d_k();
    let first = *partial.first().unwrap() as usize;
    let last = *partial.last().unwrap() as usize;

    // Context vector: projected graph mean + first + last embeddings.
    let mean = tape.mean_rows(emb);
    let first_emb = tape.row(emb, first);
    let last_emb = tape.row(emb, last);
    let wcm = tape.param(&policy.params, policy.param_id("dec.wc_mean").unwrap());
    let wcf = tape.param(&policy.params, policy.param_id("dec.wc_first").unwrap());
    let wcl = tape.param(&policy.params, policy.param_id("dec.wc_last").unwrap());
    let cm = tape.matmul(mean, wcm);
    let cf = tape.matmul(first_emb, wcf);
    let cl = tape.matmul(last_emb, wcl);
    let c0 = tape.add(cm, cf);
    let ctx = tape.add(c0, cl); // 1×d

    // Memory path: each retrieved weight m in the current city's row is
    // mapped through silu(m·u)·V to one additive bias per head. No
    // biases anywhere, so a zero row yields exactly zero.
    let mem_row = Mat::from_vec(1, n, mem.data[last * n..(last + 1) * n].to_vec());
    let dist_row = Mat::from_vec(1, n, dist.data[last * n..(last + 1) * n].to_vec());
    let u = tape.param(&policy.params, policy.param_id("dec.mem_ff.u").unwrap());
    let vproj = tape.param(&policy.params, policy.param_id("dec.mem_ff.v").unwrap());
    let ut = tape.transpose(u); // mem_hidden×1
    let mem_const = tape.constant(mem_row);
    let hidden_in = tape.matmul(ut, mem_const); // mem_hidden×n
    let hidden = tape.silu(hidden_in);
    let vt = tape.transpose(vproj); // heads×mem_hidden
    let mem_bias = tape.matmul(vt, hidden); // heads×n

    // Visited mask, shared by the glimpse and the pointer.
    let mut mask = Mat::zeros(1, n);
    for &p in partial {
        mask.data[p as usize] = MASK_NEG;
    }
    let mask_node = tape.constant(mask);

    // Multi-head glimpse with additive edge bias (distance + memory).
    let mut glimpse: Option<NodeId> = None;
    for h in 0..cfg.heads {
        let wq = tape.param(&policy.params, policy.param_id(&format!("dec.h{h}.wq")).unwrap());
        let wk = tape.param(&policy.params, policy.param_id(&format!("dec.h{h}.wk")).unwrap());
        let wv = tape.param(&policy.params, policy.param_id(&format!("dec.h{h}.wv")).unwrap());
        let wo = tape.param(&policy.params, policy.param_id(&format!("dec.h{h}.wo")).unwrap());
        let cdist =
            tape.param(&policy.params, policy.param_id(&format!("dec.h{h}.cdist")).unwrap());
        let q = tape.matmul(ctx, wq); // 1×dk
        let k = tape.matmul(emb, wk); // n×dk
        let v = tape.matmul(emb, wv); // n×dk
        let kt = tape.transpose(k);
        let qk = tape.matmul(q, kt); // 1×n
        let scaled = tape.scale(qk, 1.0 / (dk as f64).sqrt());
        let dist_bias = tape.lin_comb(cdist, vec![dist_row.clone()]);
        let mem_bias_h = tape.row(mem_bias, h);
        let s0 = tape.add(scaled, dist_bias);
        let s1 = tape.add(s0, mem_bias_h);
        // Mask visited cities out of the glimpse as well.
        let s2 = tape.add(s1, mask_node);
        let a = tape.softmax_rows(s2);
        let out = tape.matmul(a, v); // 1×dk
        let proj = tape.matmul(out, wo); // 1×d
        glimpse = Some(match glimpse {
            None => proj,
            Some(acc) => tape.add(acc, proj),
        });
    }
    let glimpse = glimpse.expect("at least one head");

    // Single-head pointer: compatibility of the glimpsed context with
    // every city embedding, tanh-clipped then masked.
    let wp = tape.param(&policy.params, policy.param_id("dec.wp").unwrap());
    let qp = tape.matmul(glimpse, wp); // 1×d
    let embt = tape.transpose(emb); // d×n
    let compat = tape.matmul(qp, embt); // 1×n
    let scaled = tape.scale(compat, 1.0 / (cfg.embed_dim as f64).sqrt());
    let t = tape.tanh(scaled);
    let clipped = tape.scale(t, cfg.tanh_clip);
    Ok(tape.add(clipped, mask_node))
}

/// Dense adjacency indicator (n×n, entries 0/1) as an edge feature.
pub fn adjacency_feature(g: &GraphInstance) -> Mat {
    let n = g.n;
    let mut a = Mat::zeros(n, n);
    for &(i, j, _) in &g.edges {
        a.set(i as usize, j as usize, 1.0);
        a.set(j as usize, i as usize, 1.0);
    }
    a
}

/// Dense distance matrix as an edge feature (complete-metric only).
pub fn distance_feature(g: &GraphInstance) -> Result<Mat> {
    Ok(Mat::from_vec(g.n, g.n, g.distance_matrix()?))
}

/// Expand a sparse retrieved edge context into a symmetric n×n matrix.
pub fn edge_context_matrix(weights: &[((u32, u32), f64)], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    for &((i, j), w) in weights {
        m.set(i as usize, j as usize, w);
        m.set(j as usize, i as usize, w);
    }
    m
}

// ---------------------------------------------------------------------
// Checkpoint format: little-endian binary.
//
//   magic "MRCP" | version u32 | problem u8 | features u8 | variant u8 |
//   embed u32 | layers u32 | heads u32 | ffn u32 | mem_hidden u32 |
//   tanh_clip f64 | param_count u32 |
//   repeated: name_len u32, name bytes, rows u32, cols u32 |
//   all parameter data as f32 |
//   state flag u8 | if 1: adam m then v as f32 (same shapes),
//                         step u64, episodes u64
// ---------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"MRCP";
const CKPT_VERSION: u32 = 1;

fn problem_tag(p: ProblemKind) -> u8 {
    match p {
        ProblemKind::MaxCut => 0,
        ProblemKind::Mis => 1,
        ProblemKind::Tsp => 2,
    }
}

fn problem_from_tag(t: u8) -> Result<ProblemKind> {
    Ok(match t {
        0 => ProblemKind::MaxCut,
        1 => ProblemKind::Mis,
        2 => ProblemKind::Tsp,
        other => return Err(Error::Checkpoint(format!("unknown problem tag {other}"))),
    })
}

fn write_f32s(out: &mut Vec<u8>, mats: &[&Mat]) {
    for m in mats {
        for &v in &m.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

fn read_exact_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated parameter data".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(b[0])
}

impl Policy {
    /// Write the policy (and optionally optimizer state) to disk.
    pub fn save(&self, path: &Path, state: Option<&TrainState>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.push(problem_tag(self.problem));
        out.push(self.features.tag());
        out.push(match self.cfg.attn_variant {
            AttnVariant::Modulated => 0,
            AttnVariant::Additive => 1,
        });
        out.extend_from_slice(&(self.cfg.embed_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.heads as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.ffn_hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.mem_hidden as u32).to_le_bytes());
        out.extend_from_slice(&self.cfg.tanh_clip.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, mat) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(mat.rows as u32).to_le_bytes());
            out.extend_from_slice(&(mat.cols as u32).to_le_bytes());
        }
        let mats: Vec<&Mat> = (0..self.params.len()).map(|i| self.params.get(i)).collect();
        write_f32s(&mut out, &mats);
        match state {
            None => out.push(0),
            Some(st) => {
                if st.m.len() != self.params.len() || st.v.len() != self.params.len() {
                    return Err(Error::Checkpoint(
                        "optimizer state does not match parameter count".into(),
                    ));
                }
                out.push(1);
                write_f32s(&mut out, &st.m.iter().collect::<Vec<_>>());
                write_f32s(&mut out, &st.v.iter().collect::<Vec<_>>());
                out.extend_from_slice(&st.step.to_le_bytes());
                out.extend_from_slice(&st.episodes.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Load a policy; validates the shape manifest against what the
    /// stored configuration dictates.
    pub fn load(path: &Path) -> Result<(Policy, Option<TrainState>)> {
        let data = fs::read(path)?;
        let mut r = data.as_slice();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad magic — not a policy checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
            )));
        }
        let problem = problem_from_tag(read_u8(&mut r)?)?;
        let features = FeatureKind::from_tag(read_u8(&mut r)?)?;
        let variant = match read_u8(&mut r)? {
            0 => AttnVariant::Modulated,
            1 => AttnVariant::Additive,
            other => return Err(Error::Checkpoint(format!("unknown attention variant {other}"))),
        };
        let embed_dim = read_u32(&mut r)? as usize;
        let layers = read_u32(&mut r)? as usize;
        let heads = read_u32(&mut r)? as usize;
        let ffn_hidden = read_u32(&mut r)? as usize;
        let mem_hidden = read_u32(&mut r)? as usize;
        let mut clip_bytes = [0u8; 8];
        r.read_exact(&mut clip_bytes)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let tanh_clip = f64::from_le_bytes(clip_bytes);
        let cfg = EncoderConfig {
            embed_dim,
            layers,
            heads,
            ffn_hidden,
            tanh_clip,
            mem_hidden,
            attn_variant: variant,
        };
        cfg.validate()?;

        // Rebuild the expected manifest and check the stored one
        // against it, name by name.
        let expected = match features {
            FeatureKind::Coords => Policy::new_constructive(cfg.clone(), 0)?,
            f => Policy::new_improvement(problem, f, cfg.clone(), 0)?,
        };
        let count = read_u32(&mut r)? as usize;
        if count != expected.params.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {count} parameters, configuration requires {}",
                expected.params.len()
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for i in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 1024 {
                return Err(Error::Checkpoint("unreasonable parameter name length".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| Error::Checkpoint("truncated manifest".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let want = expected.params.get(i);
            if name != expected.params.name(i) || rows != want.rows || cols != want.cols {
                return Err(Error::Checkpoint(format!(
                    "manifest mismatch at #{i}: file has `{name}` {rows}×{cols}, expected `{}` {}×{}",
                    expected.params.name(i),
                    want.rows,
                    want.cols
                )));
            }
            shapes.push((rows, cols));
        }
        let mut policy = expected;
        for i in 0..count {
            let (rows, cols) = shapes[i];
            let data = read_exact_f32s(&mut r, rows * cols)?;
            *policy.params.get_mut(i) = Mat::from_vec(rows, cols, data);
        }
        let state = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for i in 0..count {
                    let (rows, cols) = shapes[i];
                    m.push(Mat::from_vec(rows, cols, read_exact_f32s(&mut r, rows * cols)?));
                }
                for i in 0..count {
                    let (rows, cols) = shapes[i];
                    v.push(Mat::from_vec(rows, cols, read_exact_f32s(&mut r, rows * cols)?));
                }
                let step = read_u64(&mut r)?;
                let episodes = read_u64(&mut r)?;
                Some(TrainState { m, v, step, episodes })
            }
            other => return Err(Error::Checkpoint(format!("unknown state flag {other}"))),
        };
        Ok((policy, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_erdos_renyi;
    use crate::nn::test_util::{check_gradients, rand_mat};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 4,
            layers: 1,
            heads: 2,
            ffn_hidden: 6,
            tanh_clip: 10.0,
            mem_hidden: 3,
            attn_variant: AttnVariant::Modulated,
        }
    }

    #[test]
    fn attention_with_zero_edge_bias_annihilates_output() {
        let mut tape = Tape::new();
        let mut rng = rng_from_seed(1);
        let q = rand_mat(4, 2, &mut rng);
        let k = rand_mat(4, 2, &mut rng);
        let v = rand_mat(4, 2, &mut rng);
        let (q, k, v) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let e = tape.constant(Mat::zeros(4, 4));
        let out = edge_aware_attention(&mut tape, q, k, v, e, 2, AttnVariant::Modulated);
        assert!(tape.value(out).data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attention_with_unit_bias_and_zero_queries_averages_values() {
        let mut tape = Tape::new();
        let mut rng = rng_from_seed(2);
        let v_mat = rand_mat(4, 3, &mut rng);
        let col_means: Vec<f64> =
            (0..3).map(|c| (0..4).map(|r| v_mat.get(r, c)).sum::<f64>() / 4.0).collect();
        let q = tape.constant(Mat::zeros(4, 3));
        let k = tape.constant(Mat::zeros(4, 3));
        let v = tape.constant(v_mat);
        let e = tape.constant(Mat::from_vec(4, 4, vec![1.0; 16]));
        let out = edge_aware_attention(&mut tape, q, k, v, e, 3, AttnVariant::Modulated);
        for r in 0..4 {
            for c in 0..3 {
                assert!((tape.value(out).get(r, c) - col_means[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_gradients_both_variants() {
        for variant in [AttnVariant::Modulated, AttnVariant::Additive] {
            let mut rng = rng_from_seed(3);
            let mut ps = ParamSet::new();
            ps.add("q", rand_mat(4, 2, &mut rng));
            ps.add("k", rand_mat(4, 2, &mut rng));
            ps.add("v", rand_mat(4, 2, &mut rng));
            ps.add("e", rand_mat(4, 4, &mut rng));
            check_gradients(
                &mut ps,
                move |tape, ps| {
                    let q = tape.param(ps, 0);
                    let k = tape.param(ps, 1);
                    let v = tape.param(ps, 2);
                    let e = tape.param(ps, 3);
                    let out = edge_aware_attention(tape, q, k, v, e, 2, variant);
                    let t = tape.tanh(out);
                    tape.sum_all(t)
                },
                1e-5,
            );
        }
    }

    #[test]
    fn swiglu_gradients() {
        let mut rng = rng_from_seed(4);
        let mut ps = ParamSet::new();
        ps.add("x", rand_mat(3, 4, &mut rng));
        ps.add("w1", rand_mat(4, 5, &mut rng));
        ps.add("w2", rand_mat(4, 5, &mut rng));
        ps.add("w3", rand_mat(5, 4, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let x = tape.param(ps, 0);
                let w1 = tape.param(ps, 1);
                let w2 = tape.param(ps, 2);
                let w3 = tape.param(ps, 3);
                let out = swiglu(tape, x, w1, w2, w3);
                tape.sum_all(out)
            },
            1e-6,
        );
    }

    #[test]
    fn encode_is_permutation_equivariant() {
        let g = gen_erdos_renyi(6, 0.5, 5);
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, tiny_cfg(), 7)
                .unwrap();
        let n = 6;
        let mut rng = rng_from_seed(11);
        let feats = rand_mat(n, 2, &mut rng);
        let adj = adjacency_feature(&g);

        let mut tape = Tape::new();
        let emb = encode(&mut tape, &policy, feats.clone(), &[adj.clone()]).unwrap();
        let base = tape.value(emb).clone();

        // Permute nodes by a rotation and permute all inputs consistently.
        let perm: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect(); // new[i] = old[perm[i]]
        let mut pfeats = Mat::zeros(n, 2);
        let mut padj = Mat::zeros(n, n);
        for i in 0..n {
            for c in 0..2 {
                pfeats.set(i, c, feats.get(perm[i], c));
            }
            for j in 0..n {
                padj.set(i, j, adj.get(perm[i], perm[j]));
            }
        }
        let mut tape2 = Tape::new();
        let emb2 = encode(&mut tape2, &policy, pfeats, &[padj]).unwrap();
        let permuted = tape2.value(emb2);
        for i in 0..n {
            for c in 0..policy.cfg.embed_dim {
                let want = base.get(perm[i], c);
                let got = permuted.get(i, c);
                assert!(
                    (want - got).abs() < 1e-9,
                    "row {i} col {c}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zero_layer_encode_is_input_projection() {
        let mut cfg = tiny_cfg();
        cfg.layers = 0;
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, cfg, 3).unwrap();
        let mut rng = rng_from_seed(12);
        let feats = rand_mat(5, 2, &mut rng);
        let adj = Mat::zeros(5, 5);
        let mut tape = Tape::new();
        let emb = encode(&mut tape, &policy, feats.clone(), &[adj]).unwrap();
        // Direct projection for comparison.
        let w = policy.params.get(policy.param_id("input.w").unwrap());
        let b = policy.params.get(policy.param_id("input.b").unwrap());
        for i in 0..5 {
            for c in 0..4 {
                let want: f64 =
                    (0..2).map(|f| feats.get(i, f) * w.get(f, c)).sum::<f64>() + b.get(0, c);
                assert!((tape.value(emb).get(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_is_reproducible() {
        let g = gen_erdos_renyi(7, 0.4, 8);
        let policy =
            Policy::new_improvement(ProblemKind::Mis, FeatureKind::Retrieved, tiny_cfg(), 9)
                .unwrap();
        let mut rng = rng_from_seed(13);
        let feats = rand_mat(7, 3, &mut rng);
        let adj = adjacency_feature(&g);
        let run = |p: &Policy| -> Vec<f64> {
            let mut tape = Tape::new();
            let emb = encode(&mut tape, p, feats.clone(), &[adj.clone()]).unwrap();
            tape.value(emb).data.clone()
        };
        let a = run(&policy);
        let b = run(&policy);
        assert_eq!(a, b);
    }

    #[test]
    fn improvement_logits_are_clipped_and_shared() {
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, tiny_cfg(), 21)
                .unwrap();
        // Two identical embedding rows → identical logits; all within clip.
        let emb_mat = Mat::from_rows(&[
            vec![0.3, -0.2, 0.8, 0.1],
            vec![0.3, -0.2, 0.8, 0.1],
            vec![-0.5, 0.9, 0.0, 0.4],
        ]);
        let mut tape = Tape::new();
        let emb = tape.constant(emb_mat);
        let logits = improvement_logits(&mut tape, &policy, emb);
        let z = tape.value(logits);
        assert_eq!(z.rows, 1);
        assert_eq!(z.cols, 3);
        assert_eq!(z.data[0], z.data[1]);
        for &v in &z.data {
            assert!(v.abs() <= 10.0);
        }
    }

    #[test]
    fn improvement_softmax_sums_to_one() {
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, tiny_cfg(), 22)
                .unwrap();
        let g = gen_erdos_renyi(6, 0.5, 1);
        let mut rng = rng_from_seed(14);
        let feats = rand_mat(6, 2, &mut rng);
        let mut tape = Tape::new();
        let emb = encode(&mut tape, &policy, feats, &[adjacency_feature(&g)]).unwrap();
        let logits = improvement_logits(&mut tape, &policy, emb);
        let sm = tape.softmax_rows(logits);
        let sum: f64 = tape.value(sm).data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decoder_masks_visited_and_leaves_one_feasible() {
        let policy = Policy::new_constructive(tiny_cfg(), 31).unwrap();
        let g = crate::instances::gen_tsp_uniform(3, 2);
        let dist = distance_feature(&g).unwrap();
        let mem = Mat::zeros(3, 3);
        let mut tape = Tape::new();
        let feats = Mat::from_rows(
            &g.coords.as_ref().unwrap().iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
        );
        let emb = encode(&mut tape, &policy, feats, &[dist.clone(), mem.clone()]).unwrap();
        let logits = decoder_step(&mut tape, &policy, emb, &[0, 2], &dist, &mem).unwrap();
        let z = tape.value(logits);
        assert!(z.data[0] <= MASK_NEG / 2.0);
        assert!(z.data[2] <= MASK_NEG / 2.0);
        assert!(z.data[1].abs() <= 10.0);
    }

    #[test]
    fn zero_memory_features_leave_decoder_unchanged() {
        // Two policies identical except for the memory feed-forward
        // weights must produce identical logits when the memory matrix
        // is all zeros: the memory path contributes exactly nothing.
        let mut a = Policy::new_constructive(tiny_cfg(), 41).unwrap();
        let mut b = a.clone();
        let ids = a.memory_path_ids();
        assert_eq!(ids.len(), 2);
        let mut rng = rng_from_seed(15);
        for &id in &ids {
            let shape = (a.params.get(id).rows, a.params.get(id).cols);
            *a.params.get_mut(id) = rand_mat(shape.0, shape.1, &mut rng);
            *b.params.get_mut(id) = rand_mat(shape.0, shape.1, &mut rng);
        }
        let g = crate::instances::gen_tsp_uniform(5, 3);
        let dist = distance_feature(&g).unwrap();
        let mem = Mat::zeros(5, 5);
        let feats = Mat::from_rows(
            &g.coords.as_ref().unwrap().iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
        );
        let run = |p: &Policy| -> Vec<f64> {
            let mut tape = Tape::new();
            let emb = encode(&mut tape, p, feats.clone(), &[dist.clone(), mem.clone()]).unwrap();
            let logits = decoder_step(&mut tape, p, emb, &[1], &dist, &mem).unwrap();
            tape.value(logits).data.clone()
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn nonzero_memory_features_do_change_decoder() {
        let policy = Policy::new_constructive(tiny_cfg(), 43).unwrap();
        let g = crate::instances::gen_tsp_uniform(5, 3);
        let dist = distance_feature(&g).unwrap();
        let feats = Mat::from_rows(
            &g.coords.as_ref().unwrap().iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
        );
        let run = |mem: &Mat| -> Vec<f64> {
            let mut tape = Tape::new();
            let emb = encode(&mut tape, &policy, feats.clone(), &[dist.clone(), Mat::zeros(5, 5)])
                .unwrap();
            let logits = decoder_step(&mut tape, &policy, emb, &[1], &dist, mem).unwrap();
            tape.value(logits).data.clone()
        };
        let zero = run(&Mat::zeros(5, 5));
        let mut m = Mat::zeros(5, 5);
        m.set(1, 3, 0.9);
        m.set(3, 1, 0.9);
        let biased = run(&m);
        assert_ne!(zero, biased);
    }

    #[test]
    fn every_parameter_gets_gradient_improvement() {
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Retrieved, tiny_cfg(), 51)
                .unwrap();
        let g = gen_erdos_renyi(6, 0.5, 4);
        let mut rng = rng_from_seed(16);
        let feats = rand_mat(6, 3, &mut rng);
        let mut tape = Tape::new();
        let emb = encode(&mut tape, &policy, feats, &[adjacency_feature(&g)]).unwrap();
        let logits = improvement_logits(&mut tape, &policy, emb);
        let loss = tape.neg_log_prob_pick(logits, 2);
        tape.backward(loss).unwrap();
        let mut grads = policy.params.zero_grads();
        tape.accumulate_param_grads(&mut grads);
        for (i, g) in grads.iter().enumerate() {
            assert!(
                g.data.iter().any(|&x| x != 0.0),
                "parameter `{}` received no gradient",
                policy.params.name(i)
            );
        }
    }

    #[test]
    fn every_parameter_gets_gradient_constructive() {
        let policy = Policy::new_constructive(tiny_cfg(), 52).unwrap();
        let g = crate::instances::gen_tsp_uniform(6, 5);
        let dist = distance_feature(&g).unwrap();
        let mut mem = Mat::zeros(6, 6);
        mem.set(2, 4, 0.7);
        mem.set(4, 2, 0.7);
        mem.set(2, 0, 0.3);
        mem.set(0, 2, 0.3);
        let feats = Mat::from_rows(
            &g.coords.as_ref().unwrap().iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
        );
        let mut tape = Tape::new();
        let emb = encode(&mut tape, &policy, feats, &[dist.clone(), mem.clone()]).unwrap();
        let logits = decoder_step(&mut tape, &policy, emb, &[2], &dist, &mem).unwrap();
        let loss = tape.neg_log_prob_pick(logits, 4);
        tape.backward(loss).unwrap();
        let mut grads = policy.params.zero_grads();
        tape.accumulate_param_grads(&mut grads);
        for (i, g) in grads.iter().enumerate() {
            assert!(
                g.data.iter().any(|&x| x != 0.0),
                "parameter `{}` received no gradient",
                policy.params.name(i)
            );
        }
    }

    #[test]
    fn full_improvement_pipeline_gradients_match_finite_differences() {
        // Small end-to-end gradient check through encode + head + loss.
        let g = gen_erdos_renyi(4, 0.6, 6);
        let cfg = EncoderConfig {
            embed_dim: 4,
            layers: 1,
            heads: 2,
            ffn_hidden: 4,
            tanh_clip: 10.0,
            mem_hidden: 2,
            attn_variant: AttnVariant::Modulated,
        };
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, cfg, 61).unwrap();
        let mut rng = rng_from_seed(17);
        let feats = rand_mat(4, 2, &mut rng);
        let adj = adjacency_feature(&g);
        let mut params = policy.params.clone();
        let policy_ref = policy;
        check_gradients(
            &mut params,
            move |tape, ps| {
                let mut p = policy_ref.clone();
                p.params = ps.clone();
                let emb = encode(tape, &p, feats.clone(), &[adj.clone()]).unwrap();
                let logits = improvement_logits(tape, &p, emb);
                tape.neg_log_prob_pick(logits, 1)
            },
            1e-4,
        );
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let policy =
            Policy::new_improvement(ProblemKind::Mis, FeatureKind::Retrieved, tiny_cfg(), 71)
                .unwrap();
        policy.save(&path, None).unwrap();
        let (loaded, state) = Policy::load(&path).unwrap();
        assert!(state.is_none());
        assert_eq!(loaded.problem, policy.problem);
        assert_eq!(loaded.features, policy.features);
        assert_eq!(loaded.cfg, policy.cfg);
        for i in 0..policy.params.len() {
            let a = policy.params.get(i);
            let b = loaded.params.get(i);
            assert_eq!(policy.params.name(i), loaded.params.name(i));
            for (x, y) in a.data.iter().zip(&b.data) {
                // Stored as f32: round-trip through f32 exactly.
                assert_eq!(*x as f32, *y as f32);
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_with_train_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let policy = Policy::new_constructive(tiny_cfg(), 72).unwrap();
        let state = TrainState {
            m: policy.params.zero_grads(),
            v: policy.params.zero_grads(),
            step: 17,
            episodes: 42,
        };
        policy.save(&path, Some(&state)).unwrap();
        let (_, loaded) = Policy::load(&path).unwrap();
        let loaded = loaded.unwrap();
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.episodes, 42);
        assert_eq!(loaded.m.len(), policy.params.len());
    }

    #[test]
    fn checkpoint_rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, b"not a checkpoint").unwrap();
        assert!(matches!(Policy::load(&bad), Err(Error::Checkpoint(_))));

        let path = dir.path().join("trunc.ckpt");
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, tiny_cfg(), 73)
                .unwrap();
        policy.save(&path, None).unwrap();
        let data = fs::read(&path).unwrap();
        fs::write(&path, &data[..data.len() / 2]).unwrap();
        assert!(matches!(Policy::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn encode_runtime_scales_quadratically_in_n() {
        // O(n²·d·L) forward cost: doubling n should roughly quadruple
        // runtime. Median over repetitions to tame scheduler noise.
        let cfg = EncoderConfig {
            embed_dim: 4,
            layers: 1,
            heads: 1,
            ffn_hidden: 4,
            tanh_clip: 10.0,
            mem_hidden: 2,
            attn_variant: AttnVariant::Modulated,
        };
        let policy =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Plain, cfg, 81).unwrap();
        let time_encode = |n: usize| -> f64 {
            let g = gen_erdos_renyi(n, 0.1, 1);
            let adj = adjacency_feature(&g);
            let mut rng = rng_from_seed(18);
            let feats = rand_mat(n, 2, &mut rng);
            // Warm-up.
            let mut tape = Tape::new();
            let _ = encode(&mut tape, &policy, feats.clone(), &[adj.clone()]).unwrap();
            let mut times: Vec<f64> = (0..9)
                .map(|_| {
                    let start = std::time::Instant::now();
                    let mut tape = Tape::new();
                    let _ = encode(&mut tape, &policy, feats.clone(), &[adj.clone()]).unwrap();
                    start.elapsed().as_secs_f64()
                })
                .collect();
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            times[times.len() / 2]
        };
        let t1 = time_encode(256);
        let t2 = time_encode(512);
        let ratio = t2 / t1;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "runtime ratio {ratio:.2} outside [3.5, 4.5] (t1={t1:.4}s, t2={t2:.4}s)"
        );
    }
}

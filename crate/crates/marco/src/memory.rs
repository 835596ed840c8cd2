//! The solution memory: a capacity-bounded FIFO store of visited
//! solutions with associated values, queried by similarity-weighted
//! k-nearest-neighbor retrieval, plus the simpler per-action
//! recency memory used by the op-based ablation.
//!
//! Two payload kinds exist. Node-wise memories (MaxCut / MIS) store a
//! bit vector and, as the entry's value, the one-hot action that was
//! taken *from* that solution; the action may be attached after the
//! fact, because the engine stores the current solution before the
//! policy picks the flip. Edge-wise memories (TSP) store a tour's edge
//! set, which doubles as the value.
//!
//! All parallel search lanes share one arena. Every entry is tagged
//! with the lane that wrote it; a memory constructed with
//! [`MemoryScope::PerLane`] restricts retrieval, revisit lookup, and
//! similarity penalties to entries tagged with the querying lane, while
//! [`MemoryScope::Shared`] exposes everything to everyone. Retrieval
//! always performs one batched similarity pass over the live arena and
//! applies the scope as a mask, so per-lane scoping costs what shared
//! scoping costs plus the mask — mirroring how a batched tensor
//! implementation realizes independent memories.

use std::collections::HashMap;
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::problems::BinarySolution;

/// Payload layout of a memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryKind {
    /// Bit-vector solutions, one-hot action values (improvement search).
    NodeWise,
    /// Tour edge-set solutions that are their own values (construction).
    EdgeWise,
}

/// Who can see an entry during retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryScope {
    /// Every lane sees every entry (collaborative memory).
    Shared,
    /// Each lane sees only its own entries (independent memories).
    PerLane,
}

#[derive(Debug, Clone)]
enum Payload {
    Node { bits: Vec<u8>, action: Option<u32> },
    Edge { edges: Vec<(u32, u32)> },
}

#[derive(Debug, Clone)]
struct Entry {
    lane: u32,
    payload: Payload,
}

/// Similarity-addressable FIFO memory of visited solutions.
#[derive(Debug, Clone)]
pub struct SolutionMemory {
    kind: MemoryKind,
    scope: MemoryScope,
    capacity: usize,
    /// Node count for node-wise payload validation and value length.
    n: usize,
    entries: VecDeque<Entry>,
    /// Number of entries evicted so far; the entry at deque index `i`
    /// has stable sequence number `evicted + i`.
    evicted: u64,
    /// Live multiset of node-wise solutions for O(1) revisit lookup,
    /// keyed per-lane when the scope is `PerLane`.
    exact_counts: HashMap<(u32, Vec<u8>), u32>,
}

/// Node-wise retrieval output: the similarity-weighted mean of the
/// selected entries' one-hot action values.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeContext {
    /// Length-n vector with entries in [0, 1]; all-zero when nothing
    /// was retrieved or every weight was zero.
    pub values: Vec<f64>,
    /// Number of neighbors used (min(k, visible entries)).
    pub matched: usize,
}

/// Edge-wise retrieval output: the similarity-weighted mean of the
/// selected entries' edge indicator sets, sparse and sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeContext {
    /// `((i, j), weight)` with weights in [0, 1], sorted by edge.
    pub weights: Vec<((u32, u32), f64)>,
    pub matched: usize,
}

impl NodeContext {
    pub fn empty(n: usize) -> Self {
        NodeContext { values: vec![0.0; n], matched: 0 }
    }
}

impl EdgeContext {
    pub fn empty() -> Self {
        EdgeContext { weights: Vec::new(), matched: 0 }
    }
}

/// Inner product of two bit vectors: the number of positions selected
/// by both.
pub fn similarity_nodes(a: &BinarySolution, b: &BinarySolution) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|&(&x, &y)| x == 1 && y == 1).count())
}

/// Inner product of two edge-incidence vectors, computed sparsely as
/// the intersection size of two sorted edge lists.
pub fn similarity_edges(a: &[(u32, u32)], b: &[(u32, u32)]) -> usize {
    debug_assert!(a.windows(2).all(|w| w[0] < w[1]), "edge list must be sorted");
    debug_assert!(b.windows(2).all(|w| w[0] < w[1]), "edge list must be sorted");
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Normalize a raw similarity by the query's self-similarity, mapping
/// it into [0, 1] with 1 for an identical solution. A degenerate query
/// (self-similarity 0) normalizes to 0.
pub fn norm_similarity(sim: usize, self_sim: usize) -> f64 {
    if self_sim == 0 {
        0.0
    } else {
        sim as f64 / self_sim as f64
    }
}

impl SolutionMemory {
    /// Node-wise memory over `n`-bit solutions.
    pub fn node_wise(n: usize, capacity: usize, scope: MemoryScope) -> Self {
        assert!(capacity >= 1, "memory capacity must be at least 1");
        SolutionMemory {
            kind: MemoryKind::NodeWise,
            scope,
            capacity,
            n,
            entries: VecDeque::new(),
            evicted: 0,
            exact_counts: HashMap::new(),
        }
    }

    /// Edge-wise memory over tour edge sets.
    pub fn edge_wise(capacity: usize, scope: MemoryScope) -> Self {
        assert!(capacity >= 1, "memory capacity must be at least 1");
        SolutionMemory {
            kind: MemoryKind::EdgeWise,
            scope,
            capacity,
            n: 0,
            entries: VecDeque::new(),
            evicted: 0,
            exact_counts: HashMap::new(),
        }
    }

    pub fn kind(&self) -> MemoryKind {
        self.kind
    }

    pub fn scope(&self) -> MemoryScope {
        self.scope
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Key lanes collapse to in the exact-lookup index.
    fn lane_key(&self, lane: u32) -> u32 {
        match self.scope {
            MemoryScope::Shared => 0,
            MemoryScope::PerLane => lane,
        }
    }

    fn visible(&self, entry_lane: u32, query_lane: u32) -> bool {
        match self.scope {
            MemoryScope::Shared => true,
            MemoryScope::PerLane => entry_lane == query_lane,
        }
    }

    /// Total payload bytes across live entries: solution bits plus the
    /// 4-byte action slot (node-wise), or 8 bytes per stored edge.
    pub fn payload_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match &e.payload {
                Payload::Node { bits, .. } => bits.len() + 4,
                Payload::Edge { edges } => edges.len() * 8,
            })
            .sum()
    }

    fn push(&mut self, entry: Entry) -> u64 {
        if self.entries.len() == self.capacity {
            let old = self.entries.pop_front().expect("capacity >= 1");
            self.evicted += 1;
            if let Payload::Node { bits, .. } = old.payload {
                let key = (self.lane_key(old.lane), bits);
                match self.exact_counts.get_mut(&key) {
                    Some(c) if *c > 1 => *c -= 1,
                    Some(_) => {
                        self.exact_counts.remove(&key);
                    }
                    None => unreachable!("exact index out of sync with entries"),
                }
            }
        }
        if let Payload::Node { bits, .. } = &entry.payload {
            let key = (self.lane_key(entry.lane), bits.clone());
            *self.exact_counts.entry(key).or_insert(0) += 1;
        }
        self.entries.push_back(entry);
        self.evicted + self.entries.len() as u64 - 1
    }

    /// Store a node-wise solution; the value (the flip taken from it)
    /// may be attached now or later via [`set_action`]. Returns the
    /// entry's stable sequence number.
    ///
    /// [`set_action`]: SolutionMemory::set_action
    pub fn store_node(
        &mut self,
        lane: u32,
        solution: &BinarySolution,
        action: Option<u32>,
    ) -> Result<u64> {
        if self.kind != MemoryKind::NodeWise {
            return Err(Error::Validation("node payload stored into edge-wise memory".into()));
        }
        if solution.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: solution.len() });
        }
        Ok(self.push(Entry {
            lane,
            payload: Payload::Node { bits: solution.bits.clone(), action },
        }))
    }

    /// Attach the chosen action to a previously stored entry. A no-op
    /// if the entry has already been evicted.
    pub fn set_action(&mut self, seq: u64, action: u32) {
        if seq < self.evicted {
            return;
        }
        let idx = (seq - self.evicted) as usize;
        if let Some(Entry { payload: Payload::Node { action: slot, .. }, .. }) =
            self.entries.get_mut(idx)
        {
            *slot = Some(action);
        }
    }

    /// Store a completed tour's edge set (must be sorted ascending).
    pub fn store_edges(&mut self, lane: u32, edges: Vec<(u32, u32)>) -> Result<u64> {
        if self.kind != MemoryKind::EdgeWise {
            return Err(Error::Validation("edge payload stored into node-wise memory".into()));
        }
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]), "edge list must be sorted");
        Ok(self.push(Entry { lane, payload: Payload::Edge { edges } }))
    }

    /// Exact-match revisit lookup, scoped to what `lane` can see.
    pub fn contains_exact(&self, lane: u32, solution: &BinarySolution) -> bool {
        self.exact_counts
            .contains_key(&(self.lane_key(lane), solution.bits.clone()))
    }

    /// Select the top-k entries by `(similarity, recency)` among those
    /// visible to `lane`, skipping `exclude` if given. The full arena is
    /// scanned and the scope applied as a mask; a bounded heap keeps the
    /// selection cost flat in the candidate count, so per-lane and
    /// shared scopes retrieve at the same speed over the same arena.
    /// Returns `(deque index, raw similarity)` sorted by similarity
    /// descending, newer first on ties.
    fn top_k(
        &self,
        lane: u32,
        k: usize,
        exclude: Option<u64>,
        sim_of: impl Fn(&Payload) -> usize,
    ) -> Vec<(usize, usize)> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        // Min-heap of (sim, idx); the root is the weakest kept entry.
        // The (sim, idx) order is total, so the result is deterministic
        // and ranks equal similarities newer-entry first.
        let mut kept: BinaryHeap<Reverse<(usize, usize)>> = BinaryHeap::with_capacity(k + 1);
        for (idx, entry) in self.entries.iter().enumerate() {
            // Batched pass over the whole arena; the scope is a mask.
            let sim = sim_of(&entry.payload);
            let mask = self.visible(entry.lane, lane)
                && exclude != Some(self.evicted + idx as u64);
            if mask {
                if kept.len() < k {
                    kept.push(Reverse((sim, idx)));
                } else if let Some(&Reverse(weakest)) = kept.peek() {
                    if (sim, idx) > weakest {
                        kept.pop();
                        kept.push(Reverse((sim, idx)));
                    }
                }
            }
        }
        let mut scored: Vec<(usize, usize)> = kept.into_iter().map(|Reverse((s, i))| (i, s)).collect();
        scored.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
        scored
    }

    /// k-nearest-neighbor retrieval for node-wise memories: the
    /// normalized-similarity-weighted mean of the top-k entries' one-hot
    /// action values. Empty visible memory yields a zero context; so
    /// does an all-zero weight sum (with `matched` still reporting the
    /// number of entries considered).
    pub fn retrieve_nodes(
        &self,
        lane: u32,
        k: usize,
        query: &BinarySolution,
        exclude: Option<u64>,
    ) -> Result<NodeContext> {
        if self.kind != MemoryKind::NodeWise {
            return Err(Error::Validation("node-wise retrieve on edge-wise memory".into()));
        }
        if query.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: query.len() });
        }
        assert!(k >= 1, "retrieval needs k >= 1");
        let self_sim = query.ones();
        let top = self.top_k(lane, k, exclude, |p| match p {
            Payload::Node { bits, .. } => {
                bits.iter().zip(&query.bits).filter(|&(&x, &y)| x == 1 && y == 1).count()
            }
            Payload::Edge { .. } => unreachable!("kind checked above"),
        });
        let matched = top.len();
        if matched == 0 {
            return Ok(NodeContext::empty(self.n));
        }
        let mut weight_sum = 0.0;
        let mut values = vec![0.0; self.n];
        for &(idx, sim) in &top {
            let w = norm_similarity(sim, self_sim);
            weight_sum += w;
            if let Payload::Node { action: Some(a), .. } = &self.entries[idx].payload {
                values[*a as usize] += w;
            }
            // Entries whose action is still pending contribute zero
            // value but full weight, like a zero vector would.
        }
        if weight_sum == 0.0 {
            return Ok(NodeContext { values: vec![0.0; self.n], matched });
        }
        for v in &mut values {
            *v /= weight_sum;
        }
        Ok(NodeContext { values, matched })
    }

    /// k-nearest-neighbor retrieval for edge-wise memories: the
    /// normalized-similarity-weighted mean of the top-k stored tours'
    /// edge indicators, as a sparse map.
    pub fn retrieve_edges(
        &self,
        lane: u32,
        k: usize,
        query: &[(u32, u32)],
    ) -> Result<EdgeContext> {
        if self.kind != MemoryKind::EdgeWise {
            return Err(Error::Validation("edge-wise retrieve on node-wise memory".into()));
        }
        assert!(k >= 1, "retrieval needs k >= 1");
        let self_sim = query.len();
        let top = self.top_k(lane, k, None, |p| match p {
            Payload::Edge { edges } => similarity_edges(query, edges),
            Payload::Node { .. } => unreachable!("kind checked above"),
        });
        let matched = top.len();
        if matched == 0 {
            return Ok(EdgeContext::empty());
        }
        let mut weight_sum = 0.0;
        let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
        for &(idx, sim) in &top {
            let w = norm_similarity(sim, self_sim);
            weight_sum += w;
            if w > 0.0 {
                if let Payload::Edge { edges } = &self.entries[idx].payload {
                    for &e in edges {
                        *acc.entry(e).or_insert(0.0) += w;
                    }
                }
            }
        }
        if weight_sum == 0.0 {
            return Ok(EdgeContext { weights: Vec::new(), matched });
        }
        let mut weights: Vec<((u32, u32), f64)> =
            acc.into_iter().map(|(e, w)| (e, w / weight_sum)).collect();
        weights.sort_unstable_by_key(|&(e, _)| e);
        Ok(EdgeContext { weights, matched })
    }

    /// Mean of the `min(k, visible)` largest normalized similarities
    /// between `query` and the stored tours — the diversity penalty for
    /// constructive training. 0 when nothing is visible.
    pub fn avg_sim_topk(&self, lane: u32, query: &[(u32, u32)], k: usize) -> Result<f64> {
        if self.kind != MemoryKind::EdgeWise {
            return Err(Error::Validation("avg_sim_topk needs an edge-wise memory".into()));
        }
        assert!(k >= 1, "avg_sim_topk needs k >= 1");
        let self_sim = query.len();
        let top = self.top_k(lane, k, None, |p| match p {
            Payload::Edge { edges } => similarity_edges(query, edges),
            Payload::Node { .. } => unreachable!("kind checked above"),
        });
        if top.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = top.iter().map(|&(_, s)| norm_similarity(s, self_sim)).sum();
        Ok(sum / top.len() as f64)
    }
}

/// Recency memory for the op-based ablation: remembers, per node, the
/// step at which that node was last flipped.
#[derive(Debug, Clone)]
pub struct OpMemory {
    last: Vec<Option<u64>>,
    /// Saturation cap for the steps-since feature (2n by default).
    cap: u64,
}

impl OpMemory {
    pub fn new(n: usize) -> Self {
        OpMemory { last: vec![None; n], cap: 2 * n as u64 }
    }

    pub fn with_cap(n: usize, cap: u64) -> Self {
        assert!(cap >= 1);
        OpMemory { last: vec![None; n], cap }
    }

    pub fn record(&mut self, node: usize, step: u64) {
        self.last[node] = Some(step);
    }

    /// `features[i] = min(current_step − last_flip(i), cap) / cap`,
    /// with never-flipped nodes saturating at 1.0.
    pub fn features(&self, current_step: u64) -> Vec<f64> {
        self.last
            .iter()
            .map(|slot| match slot {
                None => 1.0,
                Some(s) => {
                    let age = current_step.saturating_sub(*s).min(self.cap);
                    age as f64 / self.cap as f64
                }
            })
            .collect()
    }
}
